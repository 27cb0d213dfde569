//! Multi-modal item embedding: concatenate per-modality feature vectors
//! (image, text, CF) and fuse them with a single fully connected layer into
//! a d_e-dimensional item vector. Trained with a Euclidean triplet loss
//! where positives share the anchor's leaf category and negatives do not.

use crate::data::ItemRecord;
use crate::ids::ItemId;
use crate::tensor::tape::{NodeId, Tape};
use crate::tensor::Tensor2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error("modality {0} is enabled but missing from the raw features")]
    MissingModality(&'static str),
    #[error("modality {modality} has dimension {got}, expected {expected}")]
    DimMismatch {
        modality: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("embedding dimension mismatch: {left} vs {right}")]
    EmbeddingDim { left: usize, right: usize },
    #[error("margin must be positive, got {0}")]
    BadMargin(f64),
    #[error("learning rate must be positive and finite, got {0}")]
    BadLearningRate(f64),
    #[error("anchor category {0} has no other item to use as a positive")]
    SingletonCategory(u32),
    #[error("catalog has a single category; no negative exists")]
    SingleCategoryCatalog,
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("no modality enabled")]
    NoModalityEnabled,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

pub type Result<T> = std::result::Result<T, EmbedError>;

/// Per-modality feature widths. The full-scale defaults match the upstream
/// extractors (1536-d CNN image vectors, 300-d title vectors, 160-d CF
/// vectors); tests and the synthetic world run reduced widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDims {
    pub image: usize,
    pub text: usize,
    pub cf: usize,
}

impl Default for FeatureDims {
    fn default() -> Self {
        FeatureDims {
            image: 1536,
            text: 300,
            cf: 160,
        }
    }
}

impl FeatureDims {
    /// Desk-scale widths for fast tests and the synthetic world.
    pub fn desk() -> Self {
        FeatureDims {
            image: 16,
            text: 8,
            cf: 8,
        }
    }
}

/// Which modalities feed the fusion layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityMask {
    pub image: bool,
    pub text: bool,
    pub cf: bool,
}

impl Default for ModalityMask {
    fn default() -> Self {
        ModalityMask {
            image: true,
            text: true,
            cf: true,
        }
    }
}

impl ModalityMask {
    pub fn single(name: &str) -> Option<Self> {
        match name {
            "image" => Some(ModalityMask { image: true, text: false, cf: false }),
            "text" => Some(ModalityMask { image: false, text: true, cf: false }),
            "cf" => Some(ModalityMask { image: false, text: false, cf: true }),
            _ => None,
        }
    }

    pub fn any(&self) -> bool {
        self.image || self.text || self.cf
    }
}

/// Precomputed per-modality feature vectors for one item. Absent modalities
/// come from upstream extractors that did not run for the item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawFeatures {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cf: Option<Vec<f64>>,
}

impl RawFeatures {
    pub fn validate(&self, dims: &FeatureDims) -> Result<()> {
        for (name, vec, want) in [
            ("image", &self.image, dims.image),
            ("text", &self.text, dims.text),
            ("cf", &self.cf, dims.cf),
        ] {
            if let Some(v) = vec {
                if v.len() != want {
                    return Err(EmbedError::DimMismatch {
                        modality: name,
                        expected: want,
                        got: v.len(),
                    });
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(EmbedError::NonFinite("raw features"));
                }
            }
        }
        Ok(())
    }
}

/// Fused d_e-dimensional representation of one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemEmbedding {
    pub item_id: ItemId,
    pub vec: Vec<f64>,
}

/// Fusion layer plus its training margin and modality mask.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedModel {
    pub weights: Tensor2,
    pub bias: Tensor2,
    pub margin: f64,
    pub mask: ModalityMask,
    pub dims: FeatureDims,
}

/// Training configuration; `steps = 0` returns the freshly initialized
/// model with no updates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub margin: f64,
    pub embed_dim: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    pub mask: ModalityMask,
    pub dims: FeatureDims,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            margin: 0.1,
            embed_dim: 128,
            learning_rate: 0.01,
            steps: 4000,
            seed: 0,
            mask: ModalityMask::default(),
            dims: FeatureDims::default(),
        }
    }
}

impl EmbedModel {
    pub fn init(config: &EmbedConfig) -> Result<Self> {
        if config.margin <= 0.0 {
            return Err(EmbedError::BadMargin(config.margin));
        }
        if !config.mask.any() {
            return Err(EmbedError::NoModalityEnabled);
        }
        let concat = concat_dim(&config.mask, &config.dims);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(EmbedModel {
            weights: Tensor2::glorot_uniform(concat, config.embed_dim, &mut rng),
            bias: Tensor2::zeros(1, config.embed_dim),
            margin: config.margin,
            mask: config.mask,
            dims: config.dims,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn concat_dim(&self) -> usize {
        self.weights.rows()
    }
}

pub fn concat_dim(mask: &ModalityMask, dims: &FeatureDims) -> usize {
    let mut d = 0;
    if mask.image {
        d += dims.image;
    }
    if mask.text {
        d += dims.text;
    }
    if mask.cf {
        d += dims.cf;
    }
    d
}

/// Concatenate the enabled modalities in image, text, cf order.
fn concat_features(raw: &RawFeatures, model: &EmbedModel) -> Result<Vec<f64>> {
    raw.validate(&model.dims)?;
    let mut out = Vec::with_capacity(model.concat_dim());
    if model.mask.image {
        out.extend_from_slice(raw.image.as_deref().ok_or(EmbedError::MissingModality("image"))?);
    }
    if model.mask.text {
        out.extend_from_slice(raw.text.as_deref().ok_or(EmbedError::MissingModality("text"))?);
    }
    if model.mask.cf {
        out.extend_from_slice(raw.cf.as_deref().ok_or(EmbedError::MissingModality("cf"))?);
    }
    Ok(out)
}

/// Fuse raw features into the d_e-dimensional item vector.
pub fn fuse(raw: &RawFeatures, model: &EmbedModel) -> Result<Vec<f64>> {
    let x = concat_features(raw, model)?;
    let xt = Tensor2::row_vector(&x);
    let out = xt.matmul(&model.weights)?.add(&model.bias)?;
    Ok(out.row(0).to_vec())
}

/// Euclidean distance between two equal-length vectors.
pub fn euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(EmbedError::EmbeddingDim {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Hinge triplet loss: max(d(anchor,pos) - d(anchor,neg) + margin, 0).
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> Result<f64> {
    if margin <= 0.0 {
        return Err(EmbedError::BadMargin(margin));
    }
    let dp = euclidean(anchor, positive)?;
    let dn = euclidean(anchor, negative)?;
    Ok((dp - dn + margin).max(0.0))
}

/// Draw a positive from the anchor's leaf category and a negative from a
/// different category. Indices refer into `items`.
pub fn sample_triplet<R: Rng>(
    items: &[ItemRecord],
    anchor: usize,
    rng: &mut R,
) -> Result<(usize, usize)> {
    if items.is_empty() {
        return Err(EmbedError::EmptyCatalog);
    }
    let anchor_cat = items[anchor].category;
    let mut same = Vec::new();
    let mut other = Vec::new();
    for (i, item) in items.iter().enumerate() {
        if item.category == anchor_cat {
            if i != anchor {
                same.push(i);
            }
        } else {
            other.push(i);
        }
    }
    let positive = *same
        .choose(rng)
        .ok_or(EmbedError::SingletonCategory(anchor_cat.0))?;
    let negative = *other.choose(rng).ok_or(EmbedError::SingleCategoryCatalog)?;
    Ok((positive, negative))
}

/// Stage the fusion weights on a tape and build the triplet loss. The raw
/// inputs are already-concatenated modality vectors.
pub fn triplet_loss_graph(
    tape: &mut Tape,
    weights: NodeId,
    bias: NodeId,
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    margin: f64,
) -> crate::tensor::Result<NodeId> {
    let embed = |tape: &mut Tape, x: &[f64]| -> crate::tensor::Result<NodeId> {
        let xn = tape.leaf(Tensor2::row_vector(x));
        let prod = tape.matmul(xn, weights)?;
        tape.add(prod, bias)
    };
    let fa = embed(tape, anchor)?;
    let fp = embed(tape, positive)?;
    let fn_ = embed(tape, negative)?;
    let dist = |tape: &mut Tape, a: NodeId, b: NodeId| -> crate::tensor::Result<NodeId> {
        let diff = tape.sub(a, b)?;
        let sq = tape.hadamard(diff, diff)?;
        let sum = tape.sum_all(sq);
        Ok(tape.sqrt(sum))
    };
    let dp = dist(tape, fa, fp)?;
    let dn = dist(tape, fa, fn_)?;
    let gap = tape.sub(dp, dn)?;
    let m = tape.leaf(Tensor2::from_vec(1, 1, vec![margin])?);
    let pre = tape.add(gap, m)?;
    Ok(tape.relu(pre))
}

/// Minimize the triplet loss with plain SGD, one triplet per step.
/// Returns the trained model and the per-step loss curve.
pub fn train_embedding(
    items: &[ItemRecord],
    config: &EmbedConfig,
) -> Result<(EmbedModel, Vec<f64>)> {
    if config.learning_rate <= 0.0 || !config.learning_rate.is_finite() {
        return Err(EmbedError::BadLearningRate(config.learning_rate));
    }
    let mut model = EmbedModel::init(config)?;
    if config.steps == 0 {
        return Ok((model, Vec::new()));
    }
    if items.is_empty() {
        return Err(EmbedError::EmptyCatalog);
    }

    // Concatenate once; training draws triplets from the same buffers.
    let concat: Vec<Vec<f64>> = items
        .iter()
        .map(|it| concat_features(&it.features, &model))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut losses = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let anchor = rng.gen_range(0..items.len());
        let (pos, neg) = sample_triplet(items, anchor, &mut rng)?;

        let mut tape = Tape::new();
        let w = tape.leaf(model.weights.clone());
        let b = tape.leaf(model.bias.clone());
        let loss = triplet_loss_graph(
            &mut tape,
            w,
            b,
            &concat[anchor],
            &concat[pos],
            &concat[neg],
            model.margin,
        )?;
        losses.push(tape.value(loss).get(0, 0));
        let grads = tape.backward(loss)?;
        model
            .weights
            .sub_scaled_assign(&grads[w.index()], config.learning_rate)?;
        model
            .bias
            .sub_scaled_assign(&grads[b.index()], config.learning_rate)?;
    }
    Ok((model, losses))
}

/// Item embeddings for a whole catalog, indexable by id and by dense index.
/// Ids are kept sorted so index-based sampling is deterministic.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    ids: Vec<ItemId>,
    vecs: Vec<Vec<f64>>,
    index: HashMap<ItemId, usize>,
    dim: usize,
}

impl EmbeddingTable {
    pub fn from_embeddings(mut embeddings: Vec<ItemEmbedding>) -> Result<Self> {
        embeddings.sort_by_key(|e| e.item_id);
        let dim = embeddings.first().map(|e| e.vec.len()).unwrap_or(0);
        let mut ids = Vec::with_capacity(embeddings.len());
        let mut vecs = Vec::with_capacity(embeddings.len());
        let mut index = HashMap::new();
        for e in embeddings {
            if e.vec.len() != dim {
                return Err(EmbedError::EmbeddingDim {
                    left: dim,
                    right: e.vec.len(),
                });
            }
            index.insert(e.item_id, ids.len());
            ids.push(e.item_id);
            vecs.push(e.vec);
        }
        Ok(EmbeddingTable {
            ids,
            vecs,
            index,
            dim,
        })
    }

    /// Fuse every catalog item with a trained model.
    pub fn build(items: &[ItemRecord], model: &EmbedModel) -> Result<Self> {
        let embeddings = items
            .iter()
            .map(|it| {
                Ok(ItemEmbedding {
                    item_id: it.item_id,
                    vec: fuse(&it.features, model)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_embeddings(embeddings)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[ItemId] {
        &self.ids
    }

    pub fn get(&self, id: ItemId) -> Option<&[f64]> {
        self.index.get(&id).map(|i| self.vecs[*i].as_slice())
    }

    pub fn by_index(&self, idx: usize) -> (&ItemId, &[f64]) {
        (&self.ids[idx], &self.vecs[idx])
    }

    pub fn position(&self, id: ItemId) -> Option<usize> {
        self.index.get(&id).copied()
    }
}
