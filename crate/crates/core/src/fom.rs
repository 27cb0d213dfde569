//! FOM, the fashion outfit model: a bidirectional transformer encoder over
//! item sets (no position embeddings) trained by masking outfit items one
//! at a time and predicting each masked item against sampled negatives with
//! an inner-product softmax in transition space. Provides fill-in-the-blank
//! answering and outfit compatibility scoring.

use crate::embedding::EmbeddingTable;
use crate::ids::{CategoryId, ItemId, OutfitId};
use crate::tensor::tape::{NodeId, Tape};
use crate::tensor::{AttentionConfig, Tensor2};
use crate::transformer::{
    encoder_layer_graph, encoder_leaf_ids, stage_encoder_layer, stage_transition,
    transition_graph, transition_leaf_ids, EncoderLayer, EncoderLayerNodes, TransitionLayer,
    TransitionNodes,
};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::collections::HashSet;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FomError {
    #[error("outfit {0} repeats item {1}")]
    DuplicateItem(OutfitId, ItemId),
    #[error("outfit must contain at least {min} items, got {got}")]
    TooFewItems { min: usize, got: usize },
    #[error("mask position {position} out of range for outfit of size {size}")]
    MaskOutOfRange { position: usize, size: usize },
    #[error("expected exactly one blank slot, found {0}")]
    BlankCount(usize),
    #[error("embedding for item {0} is missing from the table")]
    MissingEmbedding(ItemId),
    #[error("vector length {got} does not match expected dim {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("negative list is empty and the config does not allow it")]
    EmptyNegatives,
    #[error("a negative duplicates the ground-truth transition vector")]
    NegativeDuplicatesTruth,
    #[error("catalog of {catalog} items cannot supply {want} negatives outside an outfit of {outfit} items")]
    NotEnoughNegatives {
        catalog: usize,
        outfit: usize,
        want: usize,
    },
    #[error("learning rate must be positive and finite, got {0}")]
    BadLearningRate(f64),
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

pub type Result<T> = std::result::Result<T, FomError>;

/// One outfit slot: the item id and its leaf category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutfitItem {
    pub item: ItemId,
    pub category: CategoryId,
}

/// An unordered set of items; the stored order is storage order only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outfit {
    pub outfit_id: OutfitId,
    items: Vec<OutfitItem>,
}

impl Outfit {
    /// Model-side outfits require at least one item and no duplicates; the
    /// dataset layer separately enforces the four-item minimum on records.
    pub fn new(outfit_id: OutfitId, items: Vec<OutfitItem>) -> Result<Self> {
        if items.is_empty() {
            return Err(FomError::TooFewItems { min: 1, got: 0 });
        }
        let mut seen = HashSet::new();
        for it in &items {
            if !seen.insert(it.item) {
                return Err(FomError::DuplicateItem(outfit_id, it.item));
            }
        }
        Ok(Outfit { outfit_id, items })
    }

    pub fn items(&self) -> &[OutfitItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn item_ids(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.items.iter().map(|i| i.item)
    }

    pub fn contains(&self, id: ItemId) -> bool {
        self.items.iter().any(|i| i.item == id)
    }
}

/// Model geometry and sampling policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FomConfig {
    pub embed_dim: usize,
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub num_negatives: usize,
    pub allow_empty_negatives: bool,
}

impl Default for FomConfig {
    /// Full-scale configuration: d_e=128, d_m=64, 6 layers, 8 heads.
    fn default() -> Self {
        FomConfig {
            embed_dim: 128,
            model_dim: 64,
            layers: 6,
            heads: 8,
            num_negatives: 3,
            allow_empty_negatives: false,
        }
    }
}

impl FomConfig {
    /// Desk-scale configuration for tests and the synthetic world.
    pub fn desk() -> Self {
        FomConfig {
            embed_dim: 16,
            model_dim: 16,
            layers: 2,
            heads: 2,
            num_negatives: 3,
            allow_empty_negatives: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(FomError::BadConfig("layers must be >= 1".into()));
        }
        if self.num_negatives == 0 && !self.allow_empty_negatives {
            return Err(FomError::BadConfig("num_negatives must be >= 1".into()));
        }
        AttentionConfig::new(self.model_dim, self.heads, false)
            .map_err(|e| FomError::BadConfig(e.to_string()))?;
        Ok(())
    }

    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            model_dim: self.model_dim,
            num_heads: self.heads,
            causal: false,
        }
    }
}

/// Transition layer, encoder stack and the learned MASK embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct FomModel {
    pub config: FomConfig,
    pub transition: TransitionLayer,
    pub encoder: Vec<EncoderLayer>,
    pub mask_embedding: Tensor2,
}

impl FomModel {
    pub fn init(config: FomConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let transition = TransitionLayer::init(config.embed_dim, config.model_dim, &mut rng);
        let encoder = (0..config.layers)
            .map(|_| EncoderLayer::init(config.model_dim, &mut rng))
            .collect();
        let mask_embedding = Tensor2::glorot_uniform(1, config.embed_dim, &mut rng);
        Ok(FomModel {
            config,
            transition,
            encoder,
            mask_embedding,
        })
    }

    pub fn named_params(&self) -> Vec<(String, Tensor2)> {
        let mut out = Vec::new();
        self.transition.named_params("transition", &mut out);
        for (i, layer) in self.encoder.iter().enumerate() {
            layer.named_params(&format!("encoder.{i}"), &mut out);
        }
        out.push(("mask_embedding".to_string(), self.mask_embedding.clone()));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut v = self.transition.params_mut();
        for layer in &mut self.encoder {
            v.extend(layer.params_mut());
        }
        v.push(&mut self.mask_embedding);
        v
    }

    /// Map item embeddings (rows of d_e values) into outfit space.
    pub fn transition(&self, embeddings: &[&[f64]]) -> Result<Tensor2> {
        let mut tape = Tape::new();
        let x = stage_embedding_rows(&mut tape, embeddings, self.config.embed_dim)?;
        let nodes = stage_transition(&mut tape, &self.transition);
        let out = transition_graph(&mut tape, x, &nodes)?;
        Ok(tape.value(out).clone())
    }

    /// Encode an outfit with the slot at `mask_position` replaced by the
    /// MASK embedding; returns the encoder output row at that slot.
    pub fn encode_masked(&self, outfit_embeddings: &[&[f64]], mask_position: usize) -> Result<Vec<f64>> {
        if mask_position >= outfit_embeddings.len() {
            return Err(FomError::MaskOutOfRange {
                position: mask_position,
                size: outfit_embeddings.len(),
            });
        }
        let mut tape = Tape::new();
        let nodes = stage_fom(&mut tape, self);
        let g = encode_masked_graph(
            &mut tape,
            &nodes,
            &self.config,
            outfit_embeddings,
            mask_position,
        )?;
        Ok(tape.value(g).row(0).to_vec())
    }

    /// Sampled-softmax probability of the ground-truth transition vector
    /// against the negatives, given the masked-slot encoder output.
    pub fn masked_item_prob(
        &self,
        g_mask: &[f64],
        truth: &[f64],
        negatives: &[&[f64]],
    ) -> Result<f64> {
        let d_m = self.config.model_dim;
        if g_mask.len() != d_m {
            return Err(FomError::DimMismatch {
                expected: d_m,
                got: g_mask.len(),
            });
        }
        if negatives.is_empty() && !self.config.allow_empty_negatives {
            return Err(FomError::EmptyNegatives);
        }
        for v in std::iter::once(&truth).chain(negatives.iter()) {
            if v.len() != d_m {
                return Err(FomError::DimMismatch {
                    expected: d_m,
                    got: v.len(),
                });
            }
        }
        if negatives.iter().any(|n| *n == truth) {
            return Err(FomError::NegativeDuplicatesTruth);
        }
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut logits = Vec::with_capacity(1 + negatives.len());
        logits.push(dot(g_mask, truth));
        for n in negatives {
            logits.push(dot(g_mask, n));
        }
        let probs = crate::tensor::softmax(&logits)?;
        Ok(probs[0])
    }

    /// Mean negative log-likelihood over all mask positions (exact
    /// enumeration). Negatives are drawn outside the outfit from per-item
    /// streams, so the loss does not depend on storage order.
    pub fn fom_loss<R: RngCore>(
        &self,
        outfit: &Outfit,
        table: &EmbeddingTable,
        rng: &mut R,
    ) -> Result<f64> {
        let base = rng.next_u64();
        self.loss_with_negative_base(outfit, table, base)
    }

    /// Compatibility score: negative loss with negatives fixed by the
    /// evaluation seed; higher is more compatible.
    pub fn cp_score(&self, outfit: &Outfit, table: &EmbeddingTable, eval_seed: u64) -> Result<f64> {
        if outfit.len() < 2 {
            return Err(FomError::TooFewItems {
                min: 2,
                got: outfit.len(),
            });
        }
        Ok(-self.loss_with_negative_base(outfit, table, eval_seed)?)
    }

    fn loss_with_negative_base(
        &self,
        outfit: &Outfit,
        table: &EmbeddingTable,
        base: u64,
    ) -> Result<f64> {
        if outfit.len() < 2 {
            return Err(FomError::TooFewItems {
                min: 2,
                got: outfit.len(),
            });
        }
        let negatives = plan_negatives(outfit, table, self.config.num_negatives, base)?;
        let mut tape = Tape::new();
        let nodes = stage_fom(&mut tape, self);
        let loss = fom_loss_graph(&mut tape, &nodes, &self.config, outfit, table, &negatives, None)?;
        Ok(tape.value(loss).get(0, 0))
    }

    /// Answer a fill-in-the-blank query: exactly one `None` slot; returns
    /// the argmax choice index, ties broken by the lowest index.
    pub fn fitb_choose(
        &self,
        slots: &[Option<&[f64]>],
        choices: &[&[f64]],
    ) -> Result<usize> {
        let blanks: Vec<usize> = slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.is_none().then_some(i))
            .collect();
        if blanks.len() != 1 {
            return Err(FomError::BlankCount(blanks.len()));
        }
        let blank = blanks[0];
        let zeros = vec![0.0; self.config.embed_dim];
        let rows: Vec<&[f64]> = slots
            .iter()
            .map(|s| s.unwrap_or(zeros.as_slice()))
            .collect();
        let g = self.encode_masked(&rows, blank)?;
        let h = self.transition(choices)?;
        let mut best = f64::NEG_INFINITY;
        let mut best_idx = 0;
        for (i, _) in choices.iter().enumerate() {
            let score: f64 = g.iter().zip(h.row(i)).map(|(a, b)| a * b).sum();
            if score > best {
                best = score;
                best_idx = i;
            }
        }
        Ok(best_idx)
    }
}

/// Transition vectors of a whole catalog, aligned with the embedding table
/// order. Rebuild whenever the model weights change.
#[derive(Debug, Clone)]
pub struct TransitionSet {
    ids: Vec<ItemId>,
    matrix: Tensor2,
    index: HashMap<ItemId, usize>,
}

impl TransitionSet {
    pub fn build(model: &FomModel, table: &EmbeddingTable) -> Result<Self> {
        build_transition_set(&model.transition, model.config.embed_dim, table)
    }

    pub(crate) fn from_transition(
        transition: &TransitionLayer,
        embed_dim: usize,
        table: &EmbeddingTable,
    ) -> Result<Self> {
        build_transition_set(transition, embed_dim, table)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[ItemId] {
        &self.ids
    }

    pub fn get(&self, id: ItemId) -> Option<&[f64]> {
        self.index.get(&id).map(|i| self.matrix.row(*i))
    }

    pub fn by_index(&self, idx: usize) -> (&ItemId, &[f64]) {
        (&self.ids[idx], self.matrix.row(idx))
    }
}

fn build_transition_set(
    transition: &TransitionLayer,
    embed_dim: usize,
    table: &EmbeddingTable,
) -> Result<TransitionSet> {
    let mut tape = Tape::new();
    let rows: Vec<&[f64]> = (0..table.len()).map(|i| table.by_index(i).1).collect();
    let x = stage_embedding_rows(&mut tape, &rows, embed_dim)?;
    let nodes = stage_transition(&mut tape, transition);
    let out = transition_graph(&mut tape, x, &nodes)?;
    let matrix = tape.value(out).clone();
    let ids = table.ids().to_vec();
    let index = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    Ok(TransitionSet { ids, matrix, index })
}

// ---- graph building ----------------------------------------------------------

pub(crate) struct FomNodes {
    pub transition: TransitionNodes,
    pub layers: Vec<EncoderLayerNodes>,
    pub mask: NodeId,
}

pub(crate) fn stage_fom(tape: &mut Tape, model: &FomModel) -> FomNodes {
    FomNodes {
        transition: stage_transition(tape, &model.transition),
        layers: model
            .encoder
            .iter()
            .map(|l| stage_encoder_layer(tape, l))
            .collect(),
        mask: tape.leaf(model.mask_embedding.clone()),
    }
}

pub(crate) fn fom_leaf_ids(nodes: &FomNodes) -> Vec<NodeId> {
    let mut v = transition_leaf_ids(&nodes.transition);
    for layer in &nodes.layers {
        v.extend(encoder_leaf_ids(layer));
    }
    v.push(nodes.mask);
    v
}

fn stage_embedding_rows(tape: &mut Tape, rows: &[&[f64]], d_e: usize) -> Result<NodeId> {
    if rows.is_empty() {
        return Err(FomError::TooFewItems { min: 1, got: 0 });
    }
    for r in rows {
        if r.len() != d_e {
            return Err(FomError::DimMismatch {
                expected: d_e,
                got: r.len(),
            });
        }
    }
    let mut data = Vec::with_capacity(rows.len() * d_e);
    for r in rows {
        data.extend_from_slice(*r);
    }
    Ok(tape.leaf(Tensor2::from_vec(rows.len(), d_e, data)?))
}

/// Build the masked encoder pass and return the output row node at the
/// masked slot.
fn encode_masked_graph(
    tape: &mut Tape,
    nodes: &FomNodes,
    config: &FomConfig,
    outfit_embeddings: &[&[f64]],
    mask_position: usize,
) -> Result<NodeId> {
    let mut parts = Vec::with_capacity(outfit_embeddings.len());
    for (i, row) in outfit_embeddings.iter().enumerate() {
        if i == mask_position {
            parts.push(nodes.mask);
        } else {
            if row.len() != config.embed_dim {
                return Err(FomError::DimMismatch {
                    expected: config.embed_dim,
                    got: row.len(),
                });
            }
            parts.push(tape.leaf(Tensor2::row_vector(row)));
        }
    }
    let input = tape.concat_rows(&parts)?;
    let mut h = transition_graph(tape, input, &nodes.transition)?;
    let cfg = config.attention();
    for layer in &nodes.layers {
        h = encoder_layer_graph(tape, h, layer, &cfg)?;
    }
    Ok(tape.row_select(h, mask_position)?)
}

/// Per mask position: the table indices of the sampled negatives. Streams
/// are keyed by the masked item id, so the plan is independent of outfit
/// storage order.
fn plan_negatives(
    outfit: &Outfit,
    table: &EmbeddingTable,
    num_negatives: usize,
    base: u64,
) -> Result<Vec<Vec<usize>>> {
    let exclude: HashSet<ItemId> = outfit.item_ids().collect();
    if table.len() < exclude.len() + num_negatives {
        return Err(FomError::NotEnoughNegatives {
            catalog: table.len(),
            outfit: exclude.len(),
            want: num_negatives,
        });
    }
    outfit
        .items()
        .iter()
        .map(|slot| {
            let mut rng = ChaCha8Rng::seed_from_u64(base);
            rng.set_stream(slot.item.0);
            let mut picked = Vec::with_capacity(num_negatives);
            let mut taken = HashSet::new();
            while picked.len() < num_negatives {
                let idx = rng.gen_range(0..table.len());
                let id = table.ids()[idx];
                if exclude.contains(&id) || taken.contains(&idx) {
                    continue;
                }
                taken.insert(idx);
                picked.push(idx);
            }
            Ok(picked)
        })
        .collect()
}

/// The full masked-prediction loss for one outfit on the tape:
/// -(1/n) sum over mask positions of log sampled-softmax probability.
/// `positions` restricts the enumerated mask positions (training can
/// sample a single one for speed); `None` enumerates all.
pub(crate) fn fom_loss_graph(
    tape: &mut Tape,
    nodes: &FomNodes,
    config: &FomConfig,
    outfit: &Outfit,
    table: &EmbeddingTable,
    negative_plan: &[Vec<usize>],
    positions: Option<&[usize]>,
) -> Result<NodeId> {
    let rows: Vec<&[f64]> = outfit
        .items()
        .iter()
        .map(|slot| {
            table
                .get(slot.item)
                .ok_or(FomError::MissingEmbedding(slot.item))
        })
        .collect::<Result<Vec<_>>>()?;

    let all_positions: Vec<usize> = (0..outfit.len()).collect();
    let enumerated = positions.unwrap_or(&all_positions);

    let mut terms = Vec::with_capacity(enumerated.len());
    for &pos in enumerated {
        let g = encode_masked_graph(tape, nodes, config, &rows, pos)?;
        // Ground-truth transition vector of the unmasked item; gradients
        // flow through the shared transition layer.
        let truth_row = tape.leaf(Tensor2::row_vector(rows[pos]));
        let truth_h = transition_graph(tape, truth_row, &nodes.transition)?;
        let mut cand = vec![truth_h];
        for &neg_idx in &negative_plan[pos] {
            let neg_row = tape.leaf(Tensor2::row_vector(table.by_index(neg_idx).1));
            cand.push(transition_graph(tape, neg_row, &nodes.transition)?);
        }
        let cand_matrix = tape.concat_rows(&cand)?;
        let cand_t = tape.transpose(cand_matrix);
        let logits = tape.matmul(g, cand_t)?;
        terms.push(tape.cross_entropy_row(logits, 0)?);
    }
    let mut total = terms[0];
    for t in &terms[1..] {
        total = tape.add(total, *t)?;
    }
    Ok(tape.scale(total, 1.0 / enumerated.len() as f64))
}

/// Re-stage a model's parameters from externally provided leaves, in
/// `named_params` order. Used by gradient checking.
pub(crate) fn restage_fom_nodes(model: &FomModel, leaves: &[NodeId]) -> FomNodes {
    let mut iter = leaves.iter().copied();
    let mut next = || iter.next().expect("leaf for every param");
    let transition = TransitionNodes {
        w0: next(),
        b0: next(),
        w1: next(),
        b1: next(),
    };
    let layers = model
        .encoder
        .iter()
        .map(|_| EncoderLayerNodes {
            attn: crate::tensor::AttentionNodes {
                wq: next(),
                wk: next(),
                wv: next(),
                wo: next(),
            },
            ln1: crate::transformer::LayerNormNodes {
                gain: next(),
                bias: next(),
            },
            pffn: crate::tensor::PffnNodes {
                w1: next(),
                b1: next(),
                w2: next(),
                b2: next(),
            },
            ln2: crate::transformer::LayerNormNodes {
                gain: next(),
                bias: next(),
            },
        })
        .collect();
    FomNodes {
        transition,
        layers,
        mask: next(),
    }
}

/// Max relative error between the analytic gradients of the full masked
/// prediction loss and central differences, over every model parameter.
pub fn gradcheck_fom_loss(
    model: &FomModel,
    outfit: &Outfit,
    table: &EmbeddingTable,
    negative_base: u64,
) -> Result<f64> {
    let negatives = plan_negatives(outfit, table, model.config.num_negatives, negative_base)?;
    let point: Vec<Tensor2> = model.named_params().into_iter().map(|(_, t)| t).collect();
    let err = crate::tensor::grad_check(
        &point,
        |tape, leaves| {
            let nodes = restage_fom_nodes(model, leaves);
            fom_loss_graph(tape, &nodes, &model.config, outfit, table, &negatives, None).map_err(
                |e| match e {
                    FomError::Tensor(t) => t,
                    other => unreachable!("non-tensor error after validation: {other}"),
                },
            )
        },
        1e-4,
    )?;
    Ok(err)
}

/// Training schedule for the masked-prediction objective.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FomTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Linear learning-rate warmup over this many steps; keeps the early
    /// updates small so the transition ReLUs cannot die wholesale.
    pub warmup_steps: usize,
    pub seed: u64,
    /// Enumerate every mask position per outfit (exact objective) or
    /// sample one position per step for speed.
    pub sample_single_position: bool,
}

impl Default for FomTrainConfig {
    fn default() -> Self {
        FomTrainConfig {
            epochs: 3,
            learning_rate: 0.003,
            warmup_steps: 1500,
            seed: 0,
            sample_single_position: false,
        }
    }
}

/// Plain SGD over outfits; one step per outfit per epoch. Negatives are
/// resampled every step. Returns the model and the per-step loss curve.
pub fn train_fom(
    outfits: &[Outfit],
    table: &EmbeddingTable,
    config: FomConfig,
    train: &FomTrainConfig,
) -> Result<(FomModel, Vec<f64>)> {
    let model = FomModel::init(config, train.seed)?;
    train_fom_from(model, outfits, table, train)
}

/// Continue training an existing model (used by warm starts and tests).
pub fn train_fom_from(
    mut model: FomModel,
    outfits: &[Outfit],
    table: &EmbeddingTable,
    train: &FomTrainConfig,
) -> Result<(FomModel, Vec<f64>)> {
    if train.learning_rate <= 0.0 || !train.learning_rate.is_finite() {
        return Err(FomError::BadLearningRate(train.learning_rate));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed.wrapping_add(0x9e3779b97f4a7c15));
    let mut order: Vec<usize> = (0..outfits.len()).collect();
    let mut losses = Vec::new();
    let mut optimizer = {
        let params = model.named_params();
        let refs: Vec<&Tensor2> = params.iter().map(|(_, t)| t).collect();
        crate::optim::Adam::new(&refs, train.learning_rate)
    };
    for _ in 0..train.epochs {
        order.shuffle(&mut rng);
        for &oi in &order {
            let outfit = &outfits[oi];
            if outfit.len() < 2 {
                continue;
            }
            let base = rng.next_u64();
            let negatives = plan_negatives(outfit, table, model.config.num_negatives, base)?;
            let single;
            let positions: Option<&[usize]> = if train.sample_single_position {
                single = [rng.gen_range(0..outfit.len())];
                Some(&single)
            } else {
                None
            };

            let mut tape = Tape::new();
            let nodes = stage_fom(&mut tape, &model);
            let loss = fom_loss_graph(
                &mut tape,
                &nodes,
                &model.config,
                outfit,
                table,
                &negatives,
                positions,
            )?;
            losses.push(tape.value(loss).get(0, 0));
            let grads = tape.backward(loss)?;
            let leaf_ids = fom_leaf_ids(&nodes);
            let grad_refs: Vec<&Tensor2> = leaf_ids.iter().map(|id| &grads[id.index()]).collect();
            let step = losses.len();
            optimizer.learning_rate = if step < train.warmup_steps {
                train.learning_rate * (step + 1) as f64 / train.warmup_steps as f64
            } else {
                train.learning_rate
            };
            optimizer.update(model.params_mut(), &grad_refs);
        }
    }
    Ok((model, losses))
}
