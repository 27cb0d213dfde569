//! OutfitForge: outfit compatibility modeling and personalized outfit
//! generation at desk scale.
//!
//! The pipeline has three stages. `embedding` fuses per-item image/text/CF
//! feature vectors into one item embedding trained with a triplet loss.
//! `fom` learns set compatibility by masking outfit items one at a time and
//! predicting them with a bidirectional transformer encoder; it answers
//! fill-in-the-blank queries and scores outfit compatibility. `pog` pairs a
//! user-history encoder with an autoregressive decoder to generate outfits
//! personalized to a user's recent item clicks.
//!
//! Supporting layers: `tensor` (dense f64 math plus a reverse-mode tape),
//! `transformer` (shared encoder/decoder blocks), `data` (file formats and
//! the seeded synthetic world), `evalsim` (FITB/CP metrics, an item-item CF
//! baseline and a click simulator) and `cli` (the `outfitforge` binary).

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod embedding;
pub mod evalsim;
pub mod fom;
pub mod optim;
pub mod pog;
pub mod tensor;
pub mod transformer;

pub use tensor::{Tensor2, TensorError};

/// Newtype ids for the three entity kinds in the datasets.
pub mod ids {
    use serde::{Deserialize, Serialize};

    macro_rules! id_type {
        ($name:ident) => {
            #[derive(
                Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
            )]
            #[serde(transparent)]
            pub struct $name(pub u64);

            impl std::fmt::Display for $name {
                fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                    write!(f, "{}", self.0)
                }
            }
        };
    }

    id_type!(ItemId);
    id_type!(OutfitId);
    id_type!(UserId);

    /// Leaf category id; the vocabulary is a dense 0..n range.
    #[derive(
        Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
    )]
    #[serde(transparent)]
    pub struct CategoryId(pub u32);

    impl std::fmt::Display for CategoryId {
        fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
            write!(f, "{}", self.0)
        }
    }
}
