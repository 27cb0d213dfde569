//! Evaluation harness: fill-in-the-blank accuracy, compatibility AUC, the
//! item-item CF baseline and the click simulator for strategy comparison.

pub mod cf;
pub mod sim;

use crate::embedding::EmbeddingTable;
use crate::fom::{FomModel, Outfit, OutfitItem};
use crate::ids::{ItemId, OutfitId};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("instance list is empty")]
    NoInstances,
    #[error("AUC needs both labels present")]
    SingleClass,
    #[error("scores contain a non-finite value")]
    NonFiniteScore,
    #[error("not enough distinct items to build distractors")]
    NotEnoughItems,
    #[error("cold user: history is empty, fallback needed")]
    ColdUser,
    #[error("unknown strategy {0:?}; expected rr, cf or pog")]
    UnknownStrategy(String),
    #[error("strategy {0} requires a trained model that was not provided")]
    MissingModel(&'static str),
    #[error(transparent)]
    Fom(#[from] crate::fom::FomError),
    #[error(transparent)]
    Pog(#[from] crate::pog::PogError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// One FITB question: an outfit with one blanked slot and a 4-way choice
/// set containing the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct FitbInstance {
    pub outfit: Outfit,
    pub blank: usize,
    pub choices: Vec<ItemId>,
    pub truth_index: usize,
}

/// One CP example: an outfit labeled compatible (real) or not (random).
#[derive(Debug, Clone, PartialEq)]
pub struct CpInstance {
    pub outfit: Outfit,
    pub compatible: bool,
}

/// Seeded held-out split: returns (train, test) with about `frac` of the
/// outfits in the test side.
pub fn split_outfits(outfits: &[Outfit], frac: f64, seed: u64) -> (Vec<Outfit>, Vec<Outfit>) {
    let mut order: Vec<usize> = (0..outfits.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);
    let n_test = ((outfits.len() as f64) * frac).round() as usize;
    let test_idx: HashSet<usize> = order.into_iter().take(n_test).collect();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, o) in outfits.iter().enumerate() {
        if test_idx.contains(&i) {
            test.push(o.clone());
        } else {
            train.push(o.clone());
        }
    }
    (train, test)
}

/// One instance per (outfit, position); distractors are items drawn from
/// other outfits, distinct from the truth and from each other. The choice
/// order is shuffled per instance.
pub fn build_fitb_instances(outfits: &[Outfit], seed: u64) -> Result<Vec<FitbInstance>> {
    // Pool of items appearing in any outfit, sorted for determinism.
    let mut pool: Vec<ItemId> = outfits
        .iter()
        .flat_map(|o| o.item_ids())
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    pool.sort();
    if pool.len() < 8 {
        return Err(EvalError::NotEnoughItems);
    }
    let mut instances = Vec::new();
    for (oi, outfit) in outfits.iter().enumerate() {
        for blank in 0..outfit.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((oi * 64 + blank) as u64);
            let truth = outfit.items()[blank].item;
            let mut distractors = Vec::with_capacity(3);
            let mut guard = 0;
            while distractors.len() < 3 {
                let cand = pool[rng.gen_range(0..pool.len())];
                // "From other outfits": skip items of this outfit entirely,
                // which also excludes the truth.
                if outfit.contains(cand) || distractors.contains(&cand) {
                    guard += 1;
                    if guard > 10_000 {
                        return Err(EvalError::NotEnoughItems);
                    }
                    continue;
                }
                distractors.push(cand);
            }
            let mut choices = vec![truth];
            choices.extend(distractors);
            // Shuffle the 4-way set; remember where the truth landed.
            for i in (1..choices.len()).rev() {
                let j = rng.gen_range(0..=i);
                choices.swap(i, j);
            }
            let truth_index = choices.iter().position(|c| *c == truth).expect("truth kept");
            instances.push(FitbInstance {
                outfit: outfit.clone(),
                blank,
                choices,
                truth_index,
            });
        }
    }
    Ok(instances)
}

/// Balanced CP set: every real outfit labeled compatible plus one random
/// outfit of the same size assembled from the compatible outfits' items.
pub fn build_cp_instances(outfits: &[Outfit], seed: u64) -> Result<Vec<CpInstance>> {
    let mut pool: Vec<(ItemId, crate::ids::CategoryId)> = outfits
        .iter()
        .flat_map(|o| o.items().iter().map(|it| (it.item, it.category)))
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    pool.sort();
    if pool.is_empty() {
        return Err(EvalError::NoInstances);
    }
    let mut instances = Vec::with_capacity(outfits.len() * 2);
    for (oi, outfit) in outfits.iter().enumerate() {
        instances.push(CpInstance {
            outfit: outfit.clone(),
            compatible: true,
        });
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(oi as u64);
        let mut picked: Vec<OutfitItem> = Vec::with_capacity(outfit.len());
        let mut used = HashSet::new();
        while picked.len() < outfit.len() {
            let (id, category) = pool[rng.gen_range(0..pool.len())];
            if used.insert(id) {
                picked.push(OutfitItem { item: id, category });
            }
        }
        let fake = Outfit::new(OutfitId(u64::MAX - oi as u64), picked)
            .expect("random outfit construction is duplicate-free");
        instances.push(CpInstance {
            outfit: fake,
            compatible: false,
        });
    }
    Ok(instances)
}

/// Fraction of instances where the model picks the ground truth.
pub fn eval_fitb(
    model: &FomModel,
    table: &EmbeddingTable,
    instances: &[FitbInstance],
) -> Result<f64> {
    if instances.is_empty() {
        return Err(EvalError::NoInstances);
    }
    let correct: Vec<bool> = instances
        .par_iter()
        .map(|inst| -> Result<bool> {
            let slots: Vec<Option<&[f64]>> = inst
                .outfit
                .items()
                .iter()
                .enumerate()
                .map(|(i, it)| {
                    if i == inst.blank {
                        Ok(None)
                    } else {
                        table
                            .get(it.item)
                            .map(Some)
                            .ok_or(EvalError::Fom(crate::fom::FomError::MissingEmbedding(it.item)))
                    }
                })
                .collect::<Result<_>>()?;
            let choices: Vec<&[f64]> = inst
                .choices
                .iter()
                .map(|id| {
                    table
                        .get(*id)
                        .ok_or(EvalError::Fom(crate::fom::FomError::MissingEmbedding(*id)))
                })
                .collect::<Result<_>>()?;
            Ok(model.fitb_choose(&slots, &choices)? == inst.truth_index)
        })
        .collect::<Result<_>>()?;
    Ok(correct.iter().filter(|c| **c).count() as f64 / instances.len() as f64)
}

/// ROC AUC of compatibility scores against labels. Negatives for each
/// instance come from a per-instance stream of the evaluation seed, so
/// parallel and serial runs agree bit-exactly.
pub fn eval_cp(
    model: &FomModel,
    table: &EmbeddingTable,
    instances: &[CpInstance],
    eval_seed: u64,
) -> Result<f64> {
    if instances.is_empty() {
        return Err(EvalError::NoInstances);
    }
    let scored: Vec<(f64, bool)> = instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| -> Result<(f64, bool)> {
            let mut stream = ChaCha8Rng::seed_from_u64(eval_seed);
            stream.set_stream(i as u64);
            let base = stream.next_u64();
            let score = model.cp_score(&inst.outfit, table, base)?;
            Ok((score, inst.compatible))
        })
        .collect::<Result<_>>()?;
    auc(&scored)
}

/// Rank-sum (Mann-Whitney) AUC with midrank tie handling.
pub fn auc(labeled: &[(f64, bool)]) -> Result<f64> {
    let n_pos = labeled.iter().filter(|(_, l)| *l).count();
    let n_neg = labeled.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    if labeled.iter().any(|(s, _)| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore);
    }
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    order.sort_by(|a, b| labeled[*a].0.partial_cmp(&labeled[*b].0).expect("finite"));

    // Midranks over tie groups, then the positive rank sum.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && labeled[order[j + 1]].0 == labeled[order[i]].0 {
            j += 1;
        }
        let midrank = (i + 1 + j + 1) as f64 / 2.0;
        for k in i..=j {
            if labeled[order[k]].1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Evaluation report written beside every metric artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub n: usize,
    pub metric: f64,
    pub seed: u64,
    pub config_hash: String,
}
