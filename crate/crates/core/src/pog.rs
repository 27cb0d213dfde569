//! POG, the personalized outfit generator. The Per network encodes a
//! user's recent item clicks; the Gen network decodes an outfit one item at
//! a time with causal self-attention plus cross-attention over the Per
//! output. Training is teacher-forced with sampled-softmax steps ending in
//! a learned END target; generation greedily argmaxes an exact inner-product
//! search over rule-admissible candidates until END wins or the length cap.

use crate::embedding::EmbeddingTable;
use crate::fom::{FomModel, Outfit, TransitionSet};
use crate::ids::{CategoryId, ItemId, UserId};
use crate::tensor::tape::{NodeId, Tape};
use crate::tensor::{AttentionConfig, Tensor2};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::collections::HashSet;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PogError {
    #[error("user history must contain at least one click")]
    EmptyHistory,
    #[error("history length {got} exceeds the cap {cap}")]
    HistoryTooLong { got: usize, cap: usize },
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
    #[error("rule slot {slot} admits no unused candidate")]
    EmptySlot { slot: usize },
    #[error("category rule must have at least one slot and no empty slot")]
    BadRule,
    #[error("decoder depth {q} cannot be seeded from {l} encoder layers")]
    InitDepth { q: usize, l: usize },
    #[error("model shape mismatch during init: {0}")]
    InitShape(String),
    #[error("learning rate must be positive and finite, got {0}")]
    BadLearningRate(f64),
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

pub type Result<T> = std::result::Result<T, PogError>;

/// The latest clicked items of one user, most recent last.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserHistory {
    pub user_id: UserId,
    pub clicked_items: Vec<ItemId>,
}

impl UserHistory {
    pub fn new(user_id: UserId, clicked_items: Vec<ItemId>) -> Result<Self> {
        if clicked_items.is_empty() {
            return Err(PogError::EmptyHistory);
        }
        Ok(UserHistory {
            user_id,
            clicked_items,
        })
    }

    pub fn len(&self) -> usize {
        self.clicked_items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clicked_items.is_empty()
    }
}

/// Ordered category slots constraining the first generated items. Each
/// slot names the admissible leaf categories for that step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryRule {
    slots: Vec<BTreeSet<CategoryId>>,
}

impl CategoryRule {
    pub fn new(slots: Vec<BTreeSet<CategoryId>>) -> Result<Self> {
        if slots.is_empty() || slots.iter().any(|s| s.is_empty()) {
            return Err(PogError::BadRule);
        }
        Ok(CategoryRule { slots })
    }

    pub fn slots(&self) -> &[BTreeSet<CategoryId>] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn admits(&self, slot: usize, category: CategoryId) -> bool {
        self.slots
            .get(slot)
            .map(|s| s.contains(&category))
            .unwrap_or(true)
    }
}

/// Categories are assigned round-robin to the four wear segments used for
/// canonical ordering and the default generation rule.
pub const NUM_SEGMENTS: u32 = 4;

pub fn category_segment(category: CategoryId) -> u32 {
    category.0 % NUM_SEGMENTS
}

/// Canonical teacher-forcing and generation order: by segment (tops,
/// bottoms, shoes, accessories), then category id, then item id.
pub fn canonical_order(outfit: &Outfit) -> Vec<crate::fom::OutfitItem> {
    let mut items = outfit.items().to_vec();
    items.sort_by_key(|it| (category_segment(it.category), it.category, it.item));
    items
}

/// One slot per segment, admitting every category of that segment.
pub fn default_rule(categories: &[CategoryId]) -> Result<CategoryRule> {
    let mut slots = vec![BTreeSet::new(); NUM_SEGMENTS as usize];
    for c in categories {
        slots[category_segment(*c) as usize].insert(*c);
    }
    CategoryRule::new(slots)
}

/// Model geometry for both networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PogConfig {
    pub embed_dim: usize,
    pub model_dim: usize,
    pub per_layers: usize,
    pub gen_layers: usize,
    pub heads: usize,
    pub num_negatives: usize,
    pub max_len: usize,
    pub history_cap: usize,
}

impl Default for PogConfig {
    /// Full-scale configuration: d_e=128, d_m=64, p=q=6, 8 heads.
    fn default() -> Self {
        PogConfig {
            embed_dim: 128,
            model_dim: 64,
            per_layers: 6,
            gen_layers: 6,
            heads: 8,
            num_negatives: 3,
            max_len: 8,
            history_cap: 50,
        }
    }
}

impl PogConfig {
    pub fn desk() -> Self {
        PogConfig {
            embed_dim: 16,
            model_dim: 16,
            per_layers: 2,
            gen_layers: 2,
            heads: 2,
            num_negatives: 3,
            max_len: 8,
            history_cap: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.per_layers == 0 || self.gen_layers == 0 {
            return Err(PogError::BadConfig("per/gen layers must be >= 1".into()));
        }
        if self.max_len == 0 {
            return Err(PogError::BadConfig("max_len must be >= 1".into()));
        }
        AttentionConfig::new(self.model_dim, self.heads, false)
            .map_err(|e| PogError::BadConfig(e.to_string()))?;
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

use crate::transformer::{
    decoder_layer_graph, decoder_leaf_ids, encoder_layer_graph, encoder_leaf_ids,
    stage_decoder_layer, stage_encoder_layer, stage_transition, transition_graph,
    transition_leaf_ids, DecoderLayer, DecoderLayerNodes, EncoderLayer, EncoderLayerNodes,
    TransitionLayer, TransitionNodes,
};

/// Per encoder (user clicks) plus Gen decoder (outfit items) with the
/// learned START embedding (item space) and END target (outfit space).
#[derive(Debug, Clone, PartialEq)]
pub struct PogModel {
    pub config: PogConfig,
    pub per_transition: TransitionLayer,
    pub per_encoder: Vec<EncoderLayer>,
    pub gen_transition: TransitionLayer,
    pub gen_decoder: Vec<DecoderLayer>,
    pub start_embedding: Tensor2,
    pub end_vector: Tensor2,
}

impl PogModel {
    pub fn init(config: PogConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let per_transition = TransitionLayer::init(config.embed_dim, config.model_dim, &mut rng);
        let per_encoder = (0..config.per_layers)
            .map(|_| EncoderLayer::init(config.model_dim, &mut rng))
            .collect();
        let gen_transition = TransitionLayer::init(config.embed_dim, config.model_dim, &mut rng);
        let gen_decoder = (0..config.gen_layers)
            .map(|_| DecoderLayer::init(config.model_dim, &mut rng))
            .collect();
        let start_embedding = Tensor2::glorot_uniform(1, config.embed_dim, &mut rng);
        let end_vector = Tensor2::glorot_uniform(1, config.model_dim, &mut rng);
        Ok(PogModel {
            config,
            per_transition,
            per_encoder,
            gen_transition,
            gen_decoder,
            start_embedding,
            end_vector,
        })
    }

    /// Warm-start the Gen network from a trained FOM: the transition layer
    /// is copied bit-exactly, decoder layer i takes FOM layer i's
    /// self-attention, post-attention norm, feed-forward and final norm.
    /// Cross-attention sub-layers, the Per network and START/END stay
    /// freshly initialized.
    pub fn init_gen_from_fom(fom: &FomModel, config: PogConfig, seed: u64) -> Result<Self> {
        if config.embed_dim != fom.config.embed_dim
            || config.model_dim != fom.config.model_dim
            || config.heads != fom.config.heads
        {
            return Err(PogError::InitShape(format!(
                "fom (d_e={}, d_m={}, heads={}) vs pog (d_e={}, d_m={}, heads={})",
                fom.config.embed_dim,
                fom.config.model_dim,
                fom.config.heads,
                config.embed_dim,
                config.model_dim,
                config.heads
            )));
        }
        if config.gen_layers > fom.config.layers {
            return Err(PogError::InitDepth {
                q: config.gen_layers,
                l: fom.config.layers,
            });
        }
        let mut model = Self::init(config, seed)?;
        model.gen_transition = fom.transition.clone();
        for (dec, enc) in model.gen_decoder.iter_mut().zip(&fom.encoder) {
            dec.self_attn = enc.attn.clone();
            dec.ln1 = enc.ln1.clone();
            dec.pffn = enc.pffn.clone();
            dec.ln3 = enc.ln2.clone();
        }
        Ok(model)
    }

    pub fn named_params(&self) -> Vec<(String, Tensor2)> {
        let mut out = Vec::new();
        self.per_transition.named_params("per.transition", &mut out);
        for (i, layer) in self.per_encoder.iter().enumerate() {
            layer.named_params(&format!("per.encoder.{i}"), &mut out);
        }
        self.gen_transition.named_params("gen.transition", &mut out);
        for (i, layer) in self.gen_decoder.iter().enumerate() {
            layer.named_params(&format!("gen.decoder.{i}"), &mut out);
        }
        out.push(("start_embedding".to_string(), self.start_embedding.clone()));
        out.push(("end_vector".to_string(), self.end_vector.clone()));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut v = self.per_transition.params_mut();
        for layer in &mut self.per_encoder {
            v.extend(layer.params_mut());
        }
        v.extend(self.gen_transition.params_mut());
        for layer in &mut self.gen_decoder {
            v.extend(layer.params_mut());
        }
        v.push(&mut self.start_embedding);
        v.push(&mut self.end_vector);
        v
    }

    /// Encode a click history into the user-preference matrix C (m x d_m).
    pub fn per_encode(&self, history: &UserHistory, table: &EmbeddingTable) -> Result<Tensor2> {
        if history.is_empty() {
            return Err(PogError::EmptyHistory);
        }
        if history.len() > self.config.history_cap {
            return Err(PogError::HistoryTooLong {
                got: history.len(),
                cap: self.config.history_cap,
            });
        }
        let rows = lookup_rows(&history.clicked_items, table)?;
        let mut tape = Tape::new();
        let nodes = stage_pog(&mut tape, self);
        let c = per_encode_graph(&mut tape, &nodes, &self.config, &rows)?;
        Ok(tape.value(c).clone())
    }

    /// Decode a teacher-forced prefix (START is prepended internally) over
    /// the user context C; returns all decoder output rows.
    pub fn gen_decode(&self, prefix: &[&[f64]], memory: &Tensor2) -> Result<Tensor2> {
        if memory.cols() != self.config.model_dim {
            return Err(PogError::DimMismatch {
                expected: self.config.model_dim,
                got: memory.cols(),
            });
        }
        let mut tape = Tape::new();
        let nodes = stage_pog(&mut tape, self);
        let mem = tape.leaf(memory.clone());
        let v = gen_decode_graph(&mut tape, &nodes, &self.config, prefix, mem)?;
        Ok(tape.value(v).clone())
    }

    /// Sampled-softmax probability of the next item; same contract as the
    /// masked-item probability.
    pub fn next_item_prob(&self, v_t: &[f64], truth: &[f64], negatives: &[&[f64]]) -> Result<f64> {
        let d_m = self.config.model_dim;
        for v in [v_t, truth] {
            if v.len() != d_m {
                return Err(PogError::DimMismatch {
                    expected: d_m,
                    got: v.len(),
                });
            }
        }
        if negatives.is_empty() {
            return Err(PogError::EmptyNegatives);
        }
        for n in negatives {
            if n.len() != d_m {
                return Err(PogError::DimMismatch {
                    expected: d_m,
                    got: n.len(),
                });
            }
        }
        if negatives.iter().any(|n| *n == truth) {
            return Err(PogError::NegativeDuplicatesTruth);
        }
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut logits = vec![dot(v_t, truth)];
        for n in negatives {
            logits.push(dot(v_t, n));
        }
        let probs = crate::tensor::softmax(&logits)?;
        Ok(probs[0])
    }

    /// Teacher-forced loss over the outfit in canonical order plus the END
    /// step: -(1/(n+1)) sum of log next-item probabilities.
    pub fn pog_loss<R: RngCore>(
        &self,
        history: &UserHistory,
        outfit: &Outfit,
        table: &EmbeddingTable,
        rng: &mut R,
    ) -> Result<f64> {
        let base = rng.next_u64();
        self.loss_with_negative_base(history, outfit, table, base)
    }

    pub(crate) fn loss_with_negative_base(
        &self,
        history: &UserHistory,
        outfit: &Outfit,
        table: &EmbeddingTable,
        base: u64,
    ) -> Result<f64> {
        let plan = plan_step_negatives(outfit, table, self.config.num_negatives, base)?;
        let mut tape = Tape::new();
        let nodes = stage_pog(&mut tape, self);
        let loss = pog_loss_graph(
            &mut tape,
            &nodes,
            &self.config,
            history,
            outfit,
            table,
            &plan,
        )?;
        Ok(tape.value(loss).get(0, 0))
    }

    /// Greedy rule-constrained generation (exact inner-product search over
    /// the candidate pool). Deterministic for fixed inputs; ties go to the
    /// earliest candidate in pool order; END competes once the rule prefix
    /// is satisfied.
    pub fn generate(
        &self,
        history: &UserHistory,
        table: &EmbeddingTable,
        candidates: &[(ItemId, CategoryId)],
        rule: &CategoryRule,
    ) -> Result<Generation> {
        let memory = self.per_encode(history, table)?;
        let transitions =
            TransitionSet::from_transition(&self.gen_transition, self.config.embed_dim, table)
                .map_err(|e| PogError::InitShape(e.to_string()))?;

        let mut chosen: Vec<ItemId> = Vec::new();
        let mut scores: Vec<f64> = Vec::new();
        let mut used: HashSet<ItemId> = HashSet::new();
        let mut prefix_rows: Vec<Vec<f64>> = Vec::new();

        for step in 0..self.config.max_len {
            let refs: Vec<&[f64]> = prefix_rows.iter().map(|r| r.as_slice()).collect();
            let v = self.gen_decode(&refs, &memory)?;
            let v_t = v.row(v.rows() - 1);

            let in_rule = step < rule.len();
            let mut best: Option<(usize, f64)> = None;
            let mut admissible_logits: Vec<f64> = Vec::new();
            let mut best_pos_in_admissible = 0usize;
            for (idx, (id, category)) in candidates.iter().enumerate() {
                if used.contains(id) {
                    continue;
                }
                if in_rule && !rule.admits(step, *category) {
                    continue;
                }
                let h = transitions
                    .get(*id)
                    .ok_or(PogError::MissingEmbedding(*id))?;
                let score: f64 = v_t.iter().zip(h).map(|(a, b)| a * b).sum();
                admissible_logits.push(score);
                if best.map(|(_, s)| score > s).unwrap_or(true) {
                    best = Some((idx, score));
                    best_pos_in_admissible = admissible_logits.len() - 1;
                }
            }

            if in_rule {
                let (idx, score) =
                    best.ok_or(PogError::EmptySlot { slot: step })?;
                let prob = softmax_prob(&admissible_logits, best_pos_in_admissible);
                let _ = score;
                let (id, _) = candidates[idx];
                used.insert(id);
                chosen.push(id);
                scores.push(prob);
                prefix_rows.push(
                    table
                        .get(id)
                        .ok_or(PogError::MissingEmbedding(id))?
                        .to_vec(),
                );
                continue;
            }

            // Beyond the rule prefix END competes as a pseudo-candidate.
            let end_score: f64 = v_t
                .iter()
                .zip(self.end_vector.row(0))
                .map(|(a, b)| a * b)
                .sum();
            match best {
                None => break,
                Some((idx, score)) if end_score > score => {
                    let _ = idx;
                    break;
                }
                Some((idx, _)) => {
                    admissible_logits.push(end_score);
                    let prob = softmax_prob(&admissible_logits, best_pos_in_admissible);
                    let (id, _) = candidates[idx];
                    used.insert(id);
                    chosen.push(id);
                    scores.push(prob);
                    prefix_rows.push(
                        table
                            .get(id)
                            .ok_or(PogError::MissingEmbedding(id))?
                            .to_vec(),
                    );
                }
            }
        }

        Ok(Generation {
            user_id: history.user_id,
            item_ids: chosen,
            step_scores: scores,
        })
    }
}

/// One generated outfit with the per-step softmax probability of each
/// chosen item over its admissible set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub user_id: UserId,
    pub item_ids: Vec<ItemId>,
    pub step_scores: Vec<f64>,
}

fn softmax_prob(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|v| (v - max).exp()).sum();
    (logits[target] - max).exp() / sum
}

fn lookup_rows<'a>(ids: &[ItemId], table: &'a EmbeddingTable) -> Result<Vec<&'a [f64]>> {
    ids.iter()
        .map(|id| table.get(*id).ok_or(PogError::MissingEmbedding(*id)))
        .collect()
}

// ---- graph building ----------------------------------------------------------

pub(crate) struct PogNodes {
    pub per_transition: TransitionNodes,
    pub per_layers: Vec<EncoderLayerNodes>,
    pub gen_transition: TransitionNodes,
    pub gen_layers: Vec<DecoderLayerNodes>,
    pub start: NodeId,
    pub end: NodeId,
}

pub(crate) fn stage_pog(tape: &mut Tape, model: &PogModel) -> PogNodes {
    PogNodes {
        per_transition: stage_transition(tape, &model.per_transition),
        per_layers: model
            .per_encoder
            .iter()
            .map(|l| stage_encoder_layer(tape, l))
            .collect(),
        gen_transition: stage_transition(tape, &model.gen_transition),
        gen_layers: model
            .gen_decoder
            .iter()
            .map(|l| stage_decoder_layer(tape, l))
            .collect(),
        start: tape.leaf(model.start_embedding.clone()),
        end: tape.leaf(model.end_vector.clone()),
    }
}

pub(crate) fn pog_leaf_ids(nodes: &PogNodes) -> Vec<NodeId> {
    let mut v = transition_leaf_ids(&nodes.per_transition);
    for layer in &nodes.per_layers {
        v.extend(encoder_leaf_ids(layer));
    }
    v.extend(transition_leaf_ids(&nodes.gen_transition));
    for layer in &nodes.gen_layers {
        v.extend(decoder_leaf_ids(layer));
    }
    v.push(nodes.start);
    v.push(nodes.end);
    v
}

fn per_encode_graph(
    tape: &mut Tape,
    nodes: &PogNodes,
    config: &PogConfig,
    history_rows: &[&[f64]],
) -> Result<NodeId> {
    if history_rows.is_empty() {
        return Err(PogError::EmptyHistory);
    }
    let mut data = Vec::with_capacity(history_rows.len() * config.embed_dim);
    for r in history_rows {
        if r.len() != config.embed_dim {
            return Err(PogError::DimMismatch {
                expected: config.embed_dim,
                got: r.len(),
            });
        }
        data.extend_from_slice(r);
    }
    let x = tape.leaf(Tensor2::from_vec(
        history_rows.len(),
        config.embed_dim,
        data,
    )?);
    let mut h = transition_graph(tape, x, &nodes.per_transition)?;
    let cfg = config.attention();
    for layer in &nodes.per_layers {
        h = encoder_layer_graph(tape, h, layer, &cfg)?;
    }
    Ok(h)
}

fn gen_decode_graph(
    tape: &mut Tape,
    nodes: &PogNodes,
    config: &PogConfig,
    prefix_rows: &[&[f64]],
    memory: NodeId,
) -> Result<NodeId> {
    let mut parts = vec![nodes.start];
    for r in prefix_rows {
        if r.len() != config.embed_dim {
            return Err(PogError::DimMismatch {
                expected: config.embed_dim,
                got: r.len(),
            });
        }
        parts.push(tape.leaf(Tensor2::row_vector(r)));
    }
    let x = tape.concat_rows(&parts)?;
    let mut h = transition_graph(tape, x, &nodes.gen_transition)?;
    let cfg = config.attention();
    for layer in &nodes.gen_layers {
        h = decoder_layer_graph(tape, h, memory, layer, &cfg)?;
    }
    Ok(h)
}

/// Per prediction step (outfit items in canonical order, then END): the
/// table indices of the sampled negatives. Streams are keyed by step.
fn plan_step_negatives(
    outfit: &Outfit,
    table: &EmbeddingTable,
    num_negatives: usize,
    base: u64,
) -> Result<Vec<Vec<usize>>> {
    let exclude: HashSet<ItemId> = outfit.item_ids().collect();
    if table.len() < exclude.len() + num_negatives {
        return Err(PogError::NotEnoughNegatives {
            catalog: table.len(),
            outfit: exclude.len(),
            want: num_negatives,
        });
    }
    (0..=outfit.len())
        .map(|step| {
            let mut rng = ChaCha8Rng::seed_from_u64(base);
            rng.set_stream(step as u64);
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

pub(crate) fn pog_loss_graph(
    tape: &mut Tape,
    nodes: &PogNodes,
    config: &PogConfig,
    history: &UserHistory,
    outfit: &Outfit,
    table: &EmbeddingTable,
    negative_plan: &[Vec<usize>],
) -> Result<NodeId> {
    let history_rows = lookup_rows(&history.clicked_items, table)?;
    let memory = per_encode_graph(tape, nodes, config, &history_rows)?;

    let ordered = canonical_order(outfit);
    let item_rows = lookup_rows(
        &ordered.iter().map(|it| it.item).collect::<Vec<_>>(),
        table,
    )?;
    let v = gen_decode_graph(tape, nodes, config, &item_rows, memory)?;

    let n = ordered.len();
    let mut terms = Vec::with_capacity(n + 1);
    for t in 0..=n {
        let v_t = tape.row_select(v, t)?;
        let truth = if t < n {
            let row = tape.leaf(Tensor2::row_vector(item_rows[t]));
            transition_graph(tape, row, &nodes.gen_transition)?
        } else {
            nodes.end
        };
        let mut cand = vec![truth];
        for &neg_idx in &negative_plan[t] {
            let row = tape.leaf(Tensor2::row_vector(table.by_index(neg_idx).1));
            cand.push(transition_graph(tape, row, &nodes.gen_transition)?);
        }
        let cand_matrix = tape.concat_rows(&cand)?;
        let cand_t = tape.transpose(cand_matrix);
        let logits = tape.matmul(v_t, cand_t)?;
        terms.push(tape.cross_entropy_row(logits, 0)?);
    }
    let mut total = terms[0];
    for t in &terms[1..] {
        total = tape.add(total, *t)?;
    }
    Ok(tape.scale(total, 1.0 / (n + 1) as f64))
}

/// Re-stage a model's parameters from externally provided leaves, in
/// `named_params` order. Used by gradient checking.
pub(crate) fn restage_pog_nodes(model: &PogModel, leaves: &[NodeId]) -> PogNodes {
    let mut iter = leaves.iter().copied();
    let mut next = || iter.next().expect("leaf for every param");
    let per_transition = TransitionNodes {
        w0: next(),
        b0: next(),
        w1: next(),
        b1: next(),
    };
    let per_layers = model
        .per_encoder
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
    let gen_transition = TransitionNodes {
        w0: next(),
        b0: next(),
        w1: next(),
        b1: next(),
    };
    let gen_layers = model
        .gen_decoder
        .iter()
        .map(|_| DecoderLayerNodes {
            self_attn: crate::tensor::AttentionNodes {
                wq: next(),
                wk: next(),
                wv: next(),
                wo: next(),
            },
            ln1: crate::transformer::LayerNormNodes {
                gain: next(),
                bias: next(),
            },
            cross_attn: crate::tensor::AttentionNodes {
                wq: next(),
                wk: next(),
                wv: next(),
                wo: next(),
            },
            ln2: crate::transformer::LayerNormNodes {
                gain: next(),
                bias: next(),
            },
            pffn: crate::tensor::PffnNodes {
                w1: next(),
                b1: next(),
                w2: next(),
                b2: next(),
            },
            ln3: crate::transformer::LayerNormNodes {
                gain: next(),
                bias: next(),
            },
        })
        .collect();
    PogNodes {
        per_transition,
        per_layers,
        gen_transition,
        gen_layers,
        start: next(),
        end: next(),
    }
}

/// Max relative error between the analytic gradients of the teacher-forced
/// loss and central differences, over every model parameter.
pub fn gradcheck_pog_loss(
    model: &PogModel,
    history: &UserHistory,
    outfit: &Outfit,
    table: &EmbeddingTable,
    negative_base: u64,
) -> Result<f64> {
    let plan = plan_step_negatives(outfit, table, model.config.num_negatives, negative_base)?;
    let point: Vec<Tensor2> = model.named_params().into_iter().map(|(_, t)| t).collect();
    let err = crate::tensor::grad_check(
        &point,
        |tape, leaves| {
            let nodes = restage_pog_nodes(model, leaves);
            pog_loss_graph(tape, &nodes, &model.config, history, outfit, table, &plan).map_err(
                |e| match e {
                    PogError::Tensor(t) => t,
                    other => unreachable!("non-tensor error after validation: {other}"),
                },
            )
        },
        1e-4,
    )?;
    Ok(err)
}

/// Training schedule for the generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PogTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Linear learning-rate warmup over this many steps.
    pub warmup_steps: usize,
    pub seed: u64,
}

impl Default for PogTrainConfig {
    fn default() -> Self {
        PogTrainConfig {
            epochs: 2,
            learning_rate: 0.003,
            warmup_steps: 1000,
            seed: 0,
        }
    }
}

/// Plain SGD over (history, outfit) pairs, one step per pair per epoch.
pub fn train_pog(
    pairs: &[(UserHistory, Outfit)],
    table: &EmbeddingTable,
    config: PogConfig,
    train: &PogTrainConfig,
    warm_start: Option<&FomModel>,
) -> Result<(PogModel, Vec<f64>)> {
    let model = match warm_start {
        Some(fom) => PogModel::init_gen_from_fom(fom, config, train.seed)?,
        None => PogModel::init(config, train.seed)?,
    };
    train_pog_from(model, pairs, table, train)
}

pub fn train_pog_from(
    mut model: PogModel,
    pairs: &[(UserHistory, Outfit)],
    table: &EmbeddingTable,
    train: &PogTrainConfig,
) -> Result<(PogModel, Vec<f64>)> {
    if train.learning_rate <= 0.0 || !train.learning_rate.is_finite() {
        return Err(PogError::BadLearningRate(train.learning_rate));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed.wrapping_add(0x5851f42d4c957f2d));
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut losses = Vec::new();
    let mut optimizer = {
        let params = model.named_params();
        let refs: Vec<&Tensor2> = params.iter().map(|(_, t)| t).collect();
        crate::optim::Adam::new(&refs, train.learning_rate)
    };
    for _ in 0..train.epochs {
        order.shuffle(&mut rng);
        for &pi in &order {
            let (history, outfit) = &pairs[pi];
            let capped = cap_history(history, model.config.history_cap);
            let base = rng.next_u64();
            let plan = plan_step_negatives(outfit, table, model.config.num_negatives, base)?;
            let mut tape = Tape::new();
            let nodes = stage_pog(&mut tape, &model);
            let loss = pog_loss_graph(
                &mut tape,
                &nodes,
                &model.config,
                &capped,
                outfit,
                table,
                &plan,
            )?;
            losses.push(tape.value(loss).get(0, 0));
            let grads = tape.backward(loss)?;
            let leaf_ids = pog_leaf_ids(&nodes);
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

/// Mean teacher-forced loss over held-out pairs with negatives fixed by
/// the evaluation seed (stream per pair index).
pub fn pog_validation_loss(
    model: &PogModel,
    pairs: &[(UserHistory, Outfit)],
    table: &EmbeddingTable,
    eval_seed: u64,
) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (i, (history, outfit)) in pairs.iter().enumerate() {
        let capped = cap_history(history, model.config.history_cap);
        let mut stream = ChaCha8Rng::seed_from_u64(eval_seed);
        stream.set_stream(i as u64);
        let base = stream.next_u64();
        total += model.loss_with_negative_base(&capped, outfit, table, base)?;
    }
    Ok(total / pairs.len() as f64)
}

fn cap_history(history: &UserHistory, cap: usize) -> UserHistory {
    if history.len() <= cap {
        history.clone()
    } else {
        let start = history.len() - cap;
        UserHistory {
            user_id: history.user_id,
            clicked_items: history.clicked_items[start..].to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::ItemEmbedding;
    use crate::fom::{FomConfig, OutfitItem};
    use crate::ids::OutfitId;

    fn toy_table(n: usize, d_e: usize, seed: u64) -> EmbeddingTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embeddings = (0..n)
            .map(|i| ItemEmbedding {
                item_id: ItemId(i as u64),
                vec: (0..d_e).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            })
            .collect();
        EmbeddingTable::from_embeddings(embeddings).unwrap()
    }

    fn small_config() -> PogConfig {
        PogConfig {
            embed_dim: 6,
            model_dim: 4,
            per_layers: 1,
            gen_layers: 1,
            heads: 2,
            num_negatives: 3,
            max_len: 8,
            history_cap: 50,
        }
    }

    fn toy_outfit(ids: &[u64]) -> Outfit {
        Outfit::new(
            OutfitId(1),
            ids.iter()
                .map(|i| OutfitItem {
                    item: ItemId(*i),
                    category: CategoryId((*i % 4) as u32),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn per_encode_is_row_equivariant() {
        let config = small_config();
        let model = PogModel::init(config, 1).unwrap();
        let table = toy_table(10, config.embed_dim, 2);
        let history = UserHistory::new(UserId(1), vec![ItemId(0), ItemId(3), ItemId(7)]).unwrap();
        let base = model.per_encode(&history, &table).unwrap();
        let permuted =
            UserHistory::new(UserId(1), vec![ItemId(7), ItemId(0), ItemId(3)]).unwrap();
        let perm = model.per_encode(&permuted, &table).unwrap();
        for (new_row, old_row) in [(0, 2), (1, 0), (2, 1)] {
            for c in 0..config.model_dim {
                assert!((perm.get(new_row, c) - base.get(old_row, c)).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn per_encode_empty_stack_is_transition() {
        let config = small_config();
        let mut model = PogModel::init(config, 3).unwrap();
        model.per_encoder.clear();
        let table = toy_table(10, config.embed_dim, 4);
        let history = UserHistory::new(UserId(2), vec![ItemId(1), ItemId(2)]).unwrap();
        let c = model.per_encode(&history, &table).unwrap();
        // Compare against the gen-free transition of the same rows.
        let mut tape = Tape::new();
        let rows = lookup_rows(&history.clicked_items, &table).unwrap();
        let mut data = Vec::new();
        for r in &rows {
            data.extend_from_slice(r);
        }
        let x = tape.leaf(Tensor2::from_vec(2, config.embed_dim, data).unwrap());
        let nodes = stage_transition(&mut tape, &model.per_transition);
        let b0 = transition_graph(&mut tape, x, &nodes).unwrap();
        assert_eq!(c, *tape.value(b0));
    }

    #[test]
    fn per_encode_rejects_empty_history() {
        assert!(matches!(
            UserHistory::new(UserId(1), vec![]),
            Err(PogError::EmptyHistory)
        ));
    }

    #[test]
    fn per_encode_matches_straight_line_oracle() {
        // Straight-line loops for the transition and one encoder layer.
        let config = small_config();
        let model = PogModel::init(config, 5).unwrap();
        let table = toy_table(6, config.embed_dim, 6);
        let history = UserHistory::new(UserId(3), vec![ItemId(0), ItemId(5)]).unwrap();
        let got = model.per_encode(&history, &table).unwrap();

        let d_e = config.embed_dim;
        let d_m = config.model_dim;
        let rows: Vec<Vec<f64>> = history
            .clicked_items
            .iter()
            .map(|id| table.get(*id).unwrap().to_vec())
            .collect();
        let m = rows.len();
        let t = &model.per_transition;
        let mut b0 = vec![vec![0.0; d_m]; m];
        for (r, row) in rows.iter().enumerate() {
            for c in 0..d_m {
                let mut acc = t.b1.get(0, c);
                for j in 0..d_m {
                    let mut pre = t.b0.get(0, j);
                    for i in 0..d_e {
                        pre += row[i] * t.w0.get(i, j);
                    }
                    acc += pre.max(0.0) * t.w1.get(j, c);
                }
                b0[r][c] = acc;
            }
        }
        let layer = &model.per_encoder[0];
        let heads = config.heads;
        let d_k = d_m / heads;
        let proj = |x: &[Vec<f64>], w: &Tensor2| -> Vec<Vec<f64>> {
            x.iter()
                .map(|row| {
                    (0..d_m)
                        .map(|c| (0..d_m).map(|i| row[i] * w.get(i, c)).sum())
                        .collect()
                })
                .collect()
        };
        let q = proj(&b0, &layer.attn.wq);
        let k = proj(&b0, &layer.attn.wk);
        let v = proj(&b0, &layer.attn.wv);
        let mut concat = vec![vec![0.0; d_m]; m];
        for h in 0..heads {
            for qi in 0..m {
                let mut scores = vec![0.0; m];
                for ki in 0..m {
                    let mut s = 0.0;
                    for c in 0..d_k {
                        s += q[qi][h * d_k + c] * k[ki][h * d_k + c];
                    }
                    scores[ki] = s / (d_k as f64).sqrt();
                }
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                for c in 0..d_k {
                    let mut acc = 0.0;
                    for ki in 0..m {
                        acc += exps[ki] / sum * v[ki][h * d_k + c];
                    }
                    concat[qi][h * d_k + c] = acc;
                }
            }
        }
        let attn_out = proj(&concat, &layer.attn.wo);
        let ln = |x: &[f64], gain: &Tensor2, bias: &Tensor2| -> Vec<f64> {
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / x.len() as f64;
            let denom = (var + 1e-5).sqrt();
            x.iter()
                .enumerate()
                .map(|(i, v)| gain.get(0, i) * (v - mean) / denom + bias.get(0, i))
                .collect()
        };
        for r in 0..m {
            let summed: Vec<f64> = (0..d_m).map(|c| b0[r][c] + attn_out[r][c]).collect();
            let h1 = ln(&summed, &layer.ln1.gain, &layer.ln1.bias);
            let mut hidden = vec![0.0; 4 * d_m];
            for (j, hval) in hidden.iter_mut().enumerate() {
                let mut acc = layer.pffn.b1.get(0, j);
                for i in 0..d_m {
                    acc += h1[i] * layer.pffn.w1.get(i, j);
                }
                *hval = acc.max(0.0);
            }
            let mut ff = vec![0.0; d_m];
            for (c, f) in ff.iter_mut().enumerate() {
                let mut acc = layer.pffn.b2.get(0, c);
                for (j, hval) in hidden.iter().enumerate() {
                    acc += hval * layer.pffn.w2.get(j, c);
                }
                *f = acc;
            }
            let summed: Vec<f64> = (0..d_m).map(|c| h1[c] + ff[c]).collect();
            let out = ln(&summed, &layer.ln2.gain, &layer.ln2.bias);
            for c in 0..d_m {
                assert!((got.get(r, c) - out[c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn gen_decode_is_causal() {
        let config = small_config();
        let model = PogModel::init(config, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let memory = Tensor2::glorot_uniform(3, config.model_dim, &mut rng);
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..config.embed_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let prefix: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let v_full = model.gen_decode(&prefix, &memory).unwrap();
        // Append one more item; earlier rows must be unchanged.
        let extra: Vec<f64> = (0..config.embed_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut longer = prefix.clone();
        longer.push(&extra);
        let v_longer = model.gen_decode(&longer, &memory).unwrap();
        for t in 0..v_full.rows() {
            for c in 0..config.model_dim {
                assert!((v_full.get(t, c) - v_longer.get(t, c)).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn gen_decode_zero_value_projection_ignores_memory() {
        let config = small_config();
        let mut model = PogModel::init(config, 9).unwrap();
        for layer in &mut model.gen_decoder {
            layer.cross_attn.wv = Tensor2::zeros(config.model_dim, config.model_dim);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let rows: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..config.embed_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let prefix: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let mem_a = Tensor2::glorot_uniform(3, config.model_dim, &mut rng);
        let mem_b = Tensor2::glorot_uniform(5, config.model_dim, &mut rng);
        let va = model.gen_decode(&prefix, &mem_a).unwrap();
        let vb = model.gen_decode(&prefix, &mem_b).unwrap();
        for t in 0..va.rows() {
            for c in 0..config.model_dim {
                assert!((va.get(t, c) - vb.get(t, c)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn gen_decode_matches_straight_line_oracle() {
        let config = small_config();
        let model = PogModel::init(config, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let memory = Tensor2::glorot_uniform(2, config.model_dim, &mut rng);
        let item: Vec<f64> = (0..config.embed_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = model.gen_decode(&[item.as_slice()], &memory).unwrap();

        // Oracle: explicit loops over the 2-row decoder input
        // [START; item] through transition, causal self-attention,
        // cross-attention over memory, and the feed-forward.
        let d_e = config.embed_dim;
        let d_m = config.model_dim;
        let input = vec![model.start_embedding.row(0).to_vec(), item.clone()];
        let n = 2;
        let t = &model.gen_transition;
        let mut h0 = vec![vec![0.0; d_m]; n];
        for (r, row) in input.iter().enumerate() {
            for c in 0..d_m {
                let mut acc = t.b1.get(0, c);
                for j in 0..d_m {
                    let mut pre = t.b0.get(0, j);
                    for i in 0..d_e {
                        pre += row[i] * t.w0.get(i, j);
                    }
                    acc += pre.max(0.0) * t.w1.get(j, c);
                }
                h0[r][c] = acc;
            }
        }
        let layer = &model.gen_decoder[0];
        let heads = config.heads;
        let d_k = d_m / heads;
        let proj = |x: &[Vec<f64>], w: &Tensor2| -> Vec<Vec<f64>> {
            x.iter()
                .map(|row| {
                    (0..d_m)
                        .map(|c| (0..d_m).map(|i| row[i] * w.get(i, c)).sum())
                        .collect()
                })
                .collect()
        };
        let ln = |x: &[f64], gain: &Tensor2, bias: &Tensor2| -> Vec<f64> {
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / x.len() as f64;
            let denom = (var + 1e-5).sqrt();
            x.iter()
                .enumerate()
                .map(|(i, v)| gain.get(0, i) * (v - mean) / denom + bias.get(0, i))
                .collect()
        };

        // Causal self-attention.
        let q = proj(&h0, &layer.self_attn.wq);
        let k = proj(&h0, &layer.self_attn.wk);
        let v = proj(&h0, &layer.self_attn.wv);
        let mut concat = vec![vec![0.0; d_m]; n];
        for h in 0..heads {
            for qi in 0..n {
                let visible = qi + 1;
                let mut scores = vec![0.0; visible];
                for (ki, s) in scores.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for c in 0..d_k {
                        acc += q[qi][h * d_k + c] * k[ki][h * d_k + c];
                    }
                    *s = acc / (d_k as f64).sqrt();
                }
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                for c in 0..d_k {
                    let mut acc = 0.0;
                    for ki in 0..visible {
                        acc += exps[ki] / sum * v[ki][h * d_k + c];
                    }
                    concat[qi][h * d_k + c] = acc;
                }
            }
        }
        let self_out = proj(&concat, &layer.self_attn.wo);
        let mut h1 = vec![vec![0.0; d_m]; n];
        for r in 0..n {
            let summed: Vec<f64> = (0..d_m).map(|c| h0[r][c] + self_out[r][c]).collect();
            h1[r] = ln(&summed, &layer.ln1.gain, &layer.ln1.bias);
        }

        // Cross-attention over the memory rows.
        let mem_rows: Vec<Vec<f64>> = (0..memory.rows()).map(|r| memory.row(r).to_vec()).collect();
        let qx = proj(&h1, &layer.cross_attn.wq);
        let kx = proj(&mem_rows, &layer.cross_attn.wk);
        let vx = proj(&mem_rows, &layer.cross_attn.wv);
        let mm = mem_rows.len();
        let mut concat_x = vec![vec![0.0; d_m]; n];
        for h in 0..heads {
            for qi in 0..n {
                let mut scores = vec![0.0; mm];
                for (ki, s) in scores.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for c in 0..d_k {
                        acc += qx[qi][h * d_k + c] * kx[ki][h * d_k + c];
                    }
                    *s = acc / (d_k as f64).sqrt();
                }
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                for c in 0..d_k {
                    let mut acc = 0.0;
                    for ki in 0..mm {
                        acc += exps[ki] / sum * vx[ki][h * d_k + c];
                    }
                    concat_x[qi][h * d_k + c] = acc;
                }
            }
        }
        let cross_out = proj(&concat_x, &layer.cross_attn.wo);
        let mut h2 = vec![vec![0.0; d_m]; n];
        for r in 0..n {
            let summed: Vec<f64> = (0..d_m).map(|c| h1[r][c] + cross_out[r][c]).collect();
            h2[r] = ln(&summed, &layer.ln2.gain, &layer.ln2.bias);
        }

        for r in 0..n {
            let mut hidden = vec![0.0; 4 * d_m];
            for (j, hval) in hidden.iter_mut().enumerate() {
                let mut acc = layer.pffn.b1.get(0, j);
                for i in 0..d_m {
                    acc += h2[r][i] * layer.pffn.w1.get(i, j);
                }
                *hval = acc.max(0.0);
            }
            let mut ff = vec![0.0; d_m];
            for (c, f) in ff.iter_mut().enumerate() {
                let mut acc = layer.pffn.b2.get(0, c);
                for (j, hval) in hidden.iter().enumerate() {
                    acc += hval * layer.pffn.w2.get(j, c);
                }
                *f = acc;
            }
            let summed: Vec<f64> = (0..d_m).map(|c| h2[r][c] + ff[c]).collect();
            let out = ln(&summed, &layer.ln3.gain, &layer.ln3.bias);
            for c in 0..d_m {
                assert!(
                    (got.get(r, c) - out[c]).abs() < 1e-6,
                    "row {r} col {c}: tape {} vs oracle {}",
                    got.get(r, c),
                    out[c]
                );
            }
        }
    }

    #[test]
    fn next_item_prob_examples() {
        let config = small_config();
        let model = PogModel::init(config, 13).unwrap();
        let orth: Vec<Vec<f64>> = vec![
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
        ];
        let refs: Vec<&[f64]> = orth.iter().map(|n| n.as_slice()).collect();
        // Equal logits over 4 candidates.
        let p = model
            .next_item_prob(&[0.0; 4], &[0.3, -0.7, 0.1, 0.9], &refs)
            .unwrap();
        assert!((p - 0.25).abs() < 1e-12);
        // Logits [2,0,0,0] -> e^2/(e^2+3).
        let p = model
            .next_item_prob(&[2.0, 0.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 0.0], &refs)
            .unwrap();
        let want = 2.0_f64.exp() / (2.0_f64.exp() + 3.0);
        assert!((p - want).abs() < 1e-12);
        assert!((want - 0.7112).abs() < 1e-4);
    }

    #[test]
    fn init_gen_from_fom_copies_and_freshens() {
        let fom_config = FomConfig {
            embed_dim: 6,
            model_dim: 4,
            layers: 2,
            heads: 2,
            num_negatives: 3,
            allow_empty_negatives: false,
        };
        let fom = FomModel::init(fom_config, 21).unwrap();
        let config = PogConfig {
            gen_layers: 2,
            per_layers: 1,
            ..small_config()
        };
        let model = PogModel::init_gen_from_fom(&fom, config, 22).unwrap();
        assert_eq!(model.gen_transition, fom.transition);
        for (dec, enc) in model.gen_decoder.iter().zip(&fom.encoder) {
            assert_eq!(dec.self_attn, enc.attn);
            assert_eq!(dec.pffn, enc.pffn);
            assert_eq!(dec.ln1, enc.ln1);
            assert_eq!(dec.ln3, enc.ln2);
            // Cross-attention is fresh: it must differ from every copied
            // attention weight.
            assert_ne!(dec.cross_attn.wq, enc.attn.wq);
            assert_ne!(dec.cross_attn.wv, enc.attn.wv);
        }
    }

    #[test]
    fn init_gen_from_fom_depth_check() {
        let fom_config = FomConfig {
            embed_dim: 6,
            model_dim: 4,
            layers: 1,
            heads: 2,
            num_negatives: 3,
            allow_empty_negatives: false,
        };
        let fom = FomModel::init(fom_config, 23).unwrap();
        let config = PogConfig {
            gen_layers: 2,
            ..small_config()
        };
        assert!(matches!(
            PogModel::init_gen_from_fom(&fom, config, 24),
            Err(PogError::InitDepth { q: 2, l: 1 })
        ));
    }

    #[test]
    fn pog_loss_zero_model_is_ln4_per_step() {
        let config = small_config();
        let mut model = PogModel::init(config, 25).unwrap();
        for p in model.params_mut() {
            let (r, c) = p.shape();
            *p = Tensor2::zeros(r, c);
        }
        for layer in &mut model.per_encoder {
            layer.ln1.gain = Tensor2::from_vec(1, config.model_dim, vec![1.0; config.model_dim]).unwrap();
            layer.ln2.gain = Tensor2::from_vec(1, config.model_dim, vec![1.0; config.model_dim]).unwrap();
        }
        for layer in &mut model.gen_decoder {
            layer.ln1.gain = Tensor2::from_vec(1, config.model_dim, vec![1.0; config.model_dim]).unwrap();
            layer.ln2.gain = Tensor2::from_vec(1, config.model_dim, vec![1.0; config.model_dim]).unwrap();
            layer.ln3.gain = Tensor2::from_vec(1, config.model_dim, vec![1.0; config.model_dim]).unwrap();
        }
        let table = toy_table(30, config.embed_dim, 26);
        let history = UserHistory::new(UserId(4), vec![ItemId(9), ItemId(8)]).unwrap();
        let outfit = toy_outfit(&[0, 1, 2, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let loss = model.pog_loss(&history, &outfit, &table, &mut rng).unwrap();
        assert!((loss - 4.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn pog_gradients_check_out() {
        let config = PogConfig {
            embed_dim: 5,
            model_dim: 4,
            per_layers: 1,
            gen_layers: 1,
            heads: 2,
            num_negatives: 3,
            max_len: 8,
            history_cap: 50,
        };
        let model = PogModel::init(config, 28).unwrap();
        let table = toy_table(20, config.embed_dim, 29);
        let history = UserHistory::new(UserId(5), vec![ItemId(10), ItemId(11)]).unwrap();
        let outfit = toy_outfit(&[0, 1, 2]);
        let err = gradcheck_pog_loss(&model, &history, &outfit, &table, 77).unwrap();
        assert!(err <= 1e-3, "pog grad error {err}");
    }

    #[test]
    fn generate_single_candidate_slots_forces_sequence() {
        let config = small_config();
        let model = PogModel::init(config, 30).unwrap();
        let table = toy_table(8, config.embed_dim, 31);
        let history = UserHistory::new(UserId(6), vec![ItemId(7)]).unwrap();
        // One candidate per slot category; rule order fixes the output.
        let candidates = vec![
            (ItemId(0), CategoryId(0)),
            (ItemId(1), CategoryId(1)),
            (ItemId(2), CategoryId(2)),
            (ItemId(3), CategoryId(3)),
        ];
        let rule = default_rule(&[CategoryId(0), CategoryId(1), CategoryId(2), CategoryId(3)])
            .unwrap();
        let gen = model.generate(&history, &table, &candidates, &rule).unwrap();
        assert_eq!(
            gen.item_ids,
            vec![ItemId(0), ItemId(1), ItemId(2), ItemId(3)]
        );
        assert_eq!(gen.step_scores.len(), 4);
    }

    #[test]
    fn generate_is_deterministic() {
        let config = small_config();
        let model = PogModel::init(config, 32).unwrap();
        let table = toy_table(24, config.embed_dim, 33);
        let history = UserHistory::new(UserId(7), vec![ItemId(20), ItemId(21)]).unwrap();
        let candidates: Vec<(ItemId, CategoryId)> = (0..16)
            .map(|i| (ItemId(i), CategoryId((i % 4) as u32)))
            .collect();
        let rule = default_rule(&(0..4).map(CategoryId).collect::<Vec<_>>()).unwrap();
        let a = model.generate(&history, &table, &candidates, &rule).unwrap();
        let b = model.generate(&history, &table, &candidates, &rule).unwrap();
        assert_eq!(a, b);
        // No duplicates, rule respected, terminates within max_len.
        let unique: HashSet<_> = a.item_ids.iter().collect();
        assert_eq!(unique.len(), a.item_ids.len());
        assert!(a.item_ids.len() <= config.max_len);
        assert!(a.item_ids.len() >= rule.len());
    }

    #[test]
    fn generate_empty_slot_errors_with_slot_index() {
        let config = small_config();
        let model = PogModel::init(config, 34).unwrap();
        let table = toy_table(8, config.embed_dim, 35);
        let history = UserHistory::new(UserId(8), vec![ItemId(7)]).unwrap();
        // No candidate for category 2 (slot 2 of the default rule).
        let candidates = vec![
            (ItemId(0), CategoryId(0)),
            (ItemId(1), CategoryId(1)),
            (ItemId(3), CategoryId(3)),
        ];
        let rule = default_rule(&(0..4).map(CategoryId).collect::<Vec<_>>()).unwrap();
        assert!(matches!(
            model.generate(&history, &table, &candidates, &rule),
            Err(PogError::EmptySlot { slot: 2 })
        ));
    }

    #[test]
    fn argmax_is_invariant_to_logit_shift() {
        // Adding a constant to every logit leaves the argmax unchanged.
        let logits = vec![0.3, -1.0, 2.5, 2.5, 0.0];
        let argmax = |ls: &[f64]| {
            let mut best = 0;
            for (i, v) in ls.iter().enumerate() {
                if *v > ls[best] {
                    best = i;
                }
            }
            best
        };
        let shifted: Vec<f64> = logits.iter().map(|v| v + 123.456).collect();
        assert_eq!(argmax(&logits), argmax(&shifted));
        assert_eq!(argmax(&logits), 2); // tie at 2 and 3 -> lowest index
    }

    #[test]
    fn canonical_order_sorts_by_segment() {
        let outfit = toy_outfit(&[7, 2, 5, 0]);
        // Categories: 7%4=3, 2%4=2, 5%4=1, 0%4=0 -> order by segment.
        let ordered = canonical_order(&outfit);
        let cats: Vec<u32> = ordered.iter().map(|it| it.category.0).collect();
        assert_eq!(cats, vec![0, 1, 2, 3]);
    }

}
