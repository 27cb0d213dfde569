//! Shared transformer building blocks: the two-layer transition map from
//! item space (d_e) to outfit space (d_m), post-norm encoder layers, and
//! decoder layers with a causal first sub-layer and cross-attention over an
//! encoder output. No position embeddings anywhere: item sets are unordered,
//! and the decoder is ordered by its causal mask alone.

use crate::tensor::tape::{NodeId, Tape};
use crate::tensor::{
    attention_graph, pffn_graph, stage_attention, stage_pffn, AttentionConfig, AttentionNodes,
    AttentionParams, PffnNodes, PffnParams, Result, Tensor2,
};
use rand::Rng;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Two fully-connected layers with a ReLU in between, mapping item
/// embeddings (n x d_e) to outfit space (n x d_m).
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionLayer {
    pub w0: Tensor2,
    pub b0: Tensor2,
    pub w1: Tensor2,
    pub b1: Tensor2,
}

impl TransitionLayer {
    pub fn init<R: Rng>(d_e: usize, d_m: usize, rng: &mut R) -> Self {
        TransitionLayer {
            w0: Tensor2::glorot_uniform(d_e, d_m, rng),
            b0: Tensor2::zeros(1, d_m),
            w1: Tensor2::glorot_uniform(d_m, d_m, rng),
            b1: Tensor2::zeros(1, d_m),
        }
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor2)>) {
        out.push((format!("{prefix}.w0"), self.w0.clone()));
        out.push((format!("{prefix}.b0"), self.b0.clone()));
        out.push((format!("{prefix}.w1"), self.w1.clone()));
        out.push((format!("{prefix}.b1"), self.b1.clone()));
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor2> {
        vec![&mut self.w0, &mut self.b0, &mut self.w1, &mut self.b1]
    }
}

/// Per-row gain and bias of one layer-norm application.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: Tensor2,
    pub bias: Tensor2,
}

impl LayerNormParams {
    pub fn init(dim: usize) -> Self {
        LayerNormParams {
            gain: Tensor2::from_vec(1, dim, vec![1.0; dim]).expect("ln gain"),
            bias: Tensor2::zeros(1, dim),
        }
    }

    fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor2)>) {
        out.push((format!("{prefix}.gain"), self.gain.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor2> {
        vec![&mut self.gain, &mut self.bias]
    }
}

/// Output projections start small so each sub-layer is near-identity at
/// init; the residual path then carries the signal and post-norm training
/// stays stable across seeds.
const OUTPUT_INIT_SCALE: f64 = 0.1;

fn init_attention<R: Rng>(d_m: usize, rng: &mut R) -> AttentionParams {
    AttentionParams {
        wq: Tensor2::glorot_uniform(d_m, d_m, rng),
        wk: Tensor2::glorot_uniform(d_m, d_m, rng),
        wv: Tensor2::glorot_uniform(d_m, d_m, rng),
        wo: Tensor2::glorot_uniform(d_m, d_m, rng).scale(OUTPUT_INIT_SCALE),
    }
}

fn init_pffn<R: Rng>(d_m: usize, rng: &mut R) -> PffnParams {
    PffnParams {
        w1: Tensor2::glorot_uniform(d_m, 4 * d_m, rng),
        b1: Tensor2::zeros(1, 4 * d_m),
        w2: Tensor2::glorot_uniform(4 * d_m, d_m, rng).scale(OUTPUT_INIT_SCALE),
        b2: Tensor2::zeros(1, d_m),
    }
}

fn attn_named(p: &AttentionParams, prefix: &str, out: &mut Vec<(String, Tensor2)>) {
    out.push((format!("{prefix}.wq"), p.wq.clone()));
    out.push((format!("{prefix}.wk"), p.wk.clone()));
    out.push((format!("{prefix}.wv"), p.wv.clone()));
    out.push((format!("{prefix}.wo"), p.wo.clone()));
}

fn pffn_named(p: &PffnParams, prefix: &str, out: &mut Vec<(String, Tensor2)>) {
    out.push((format!("{prefix}.w1"), p.w1.clone()));
    out.push((format!("{prefix}.b1"), p.b1.clone()));
    out.push((format!("{prefix}.w2"), p.w2.clone()));
    out.push((format!("{prefix}.b2"), p.b2.clone()));
}

/// One post-norm encoder layer: LN(x + MH(x,x,x)) then LN(h + PFFN(h)).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub attn: AttentionParams,
    pub ln1: LayerNormParams,
    pub pffn: PffnParams,
    pub ln2: LayerNormParams,
}

impl EncoderLayer {
    pub fn init<R: Rng>(d_m: usize, rng: &mut R) -> Self {
        EncoderLayer {
            attn: init_attention(d_m, rng),
            ln1: LayerNormParams::init(d_m),
            pffn: init_pffn(d_m, rng),
            ln2: LayerNormParams::init(d_m),
        }
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor2)>) {
        attn_named(&self.attn, &format!("{prefix}.attn"), out);
        self.ln1.named_params(&format!("{prefix}.ln1"), out);
        pffn_named(&self.pffn, &format!("{prefix}.pffn"), out);
        self.ln2.named_params(&format!("{prefix}.ln2"), out);
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut v = vec![
            &mut self.attn.wq,
            &mut self.attn.wk,
            &mut self.attn.wv,
            &mut self.attn.wo,
        ];
        v.extend(self.ln1.params_mut());
        v.push(&mut self.pffn.w1);
        v.push(&mut self.pffn.b1);
        v.push(&mut self.pffn.w2);
        v.push(&mut self.pffn.b2);
        v.extend(self.ln2.params_mut());
        v
    }
}

/// One decoder layer: causal self-attention, cross-attention over the
/// encoder output, then PFFN; residual + LN around each sub-layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer {
    pub self_attn: AttentionParams,
    pub ln1: LayerNormParams,
    pub cross_attn: AttentionParams,
    pub ln2: LayerNormParams,
    pub pffn: PffnParams,
    pub ln3: LayerNormParams,
}

impl DecoderLayer {
    pub fn init<R: Rng>(d_m: usize, rng: &mut R) -> Self {
        DecoderLayer {
            self_attn: init_attention(d_m, rng),
            ln1: LayerNormParams::init(d_m),
            cross_attn: init_attention(d_m, rng),
            ln2: LayerNormParams::init(d_m),
            pffn: init_pffn(d_m, rng),
            ln3: LayerNormParams::init(d_m),
        }
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor2)>) {
        attn_named(&self.self_attn, &format!("{prefix}.self_attn"), out);
        self.ln1.named_params(&format!("{prefix}.ln1"), out);
        attn_named(&self.cross_attn, &format!("{prefix}.cross_attn"), out);
        self.ln2.named_params(&format!("{prefix}.ln2"), out);
        pffn_named(&self.pffn, &format!("{prefix}.pffn"), out);
        self.ln3.named_params(&format!("{prefix}.ln3"), out);
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut v = vec![
            &mut self.self_attn.wq,
            &mut self.self_attn.wk,
            &mut self.self_attn.wv,
            &mut self.self_attn.wo,
        ];
        v.extend(self.ln1.params_mut());
        v.push(&mut self.cross_attn.wq);
        v.push(&mut self.cross_attn.wk);
        v.push(&mut self.cross_attn.wv);
        v.push(&mut self.cross_attn.wo);
        v.extend(self.ln2.params_mut());
        v.push(&mut self.pffn.w1);
        v.push(&mut self.pffn.b1);
        v.push(&mut self.pffn.w2);
        v.push(&mut self.pffn.b2);
        v.extend(self.ln3.params_mut());
        v
    }
}

// ---- tape-side staged parameter mirrors ------------------------------------

pub struct TransitionNodes {
    pub w0: NodeId,
    pub b0: NodeId,
    pub w1: NodeId,
    pub b1: NodeId,
}

pub struct LayerNormNodes {
    pub gain: NodeId,
    pub bias: NodeId,
}

pub struct EncoderLayerNodes {
    pub attn: AttentionNodes,
    pub ln1: LayerNormNodes,
    pub pffn: PffnNodes,
    pub ln2: LayerNormNodes,
}

pub struct DecoderLayerNodes {
    pub self_attn: AttentionNodes,
    pub ln1: LayerNormNodes,
    pub cross_attn: AttentionNodes,
    pub ln2: LayerNormNodes,
    pub pffn: PffnNodes,
    pub ln3: LayerNormNodes,
}

pub fn stage_transition(tape: &mut Tape, t: &TransitionLayer) -> TransitionNodes {
    TransitionNodes {
        w0: tape.leaf(t.w0.clone()),
        b0: tape.leaf(t.b0.clone()),
        w1: tape.leaf(t.w1.clone()),
        b1: tape.leaf(t.b1.clone()),
    }
}

fn stage_layer_norm(tape: &mut Tape, p: &LayerNormParams) -> LayerNormNodes {
    LayerNormNodes {
        gain: tape.leaf(p.gain.clone()),
        bias: tape.leaf(p.bias.clone()),
    }
}

pub fn stage_encoder_layer(tape: &mut Tape, l: &EncoderLayer) -> EncoderLayerNodes {
    EncoderLayerNodes {
        attn: stage_attention(tape, &l.attn),
        ln1: stage_layer_norm(tape, &l.ln1),
        pffn: stage_pffn(tape, &l.pffn),
        ln2: stage_layer_norm(tape, &l.ln2),
    }
}

pub fn stage_decoder_layer(tape: &mut Tape, l: &DecoderLayer) -> DecoderLayerNodes {
    DecoderLayerNodes {
        self_attn: stage_attention(tape, &l.self_attn),
        ln1: stage_layer_norm(tape, &l.ln1),
        cross_attn: stage_attention(tape, &l.cross_attn),
        ln2: stage_layer_norm(tape, &l.ln2),
        pffn: stage_pffn(tape, &l.pffn),
        ln3: stage_layer_norm(tape, &l.ln3),
    }
}

// Collect leaf ids in the same order as the params_mut methods, so SGD can
// zip values with gradients.

pub fn transition_leaf_ids(n: &TransitionNodes) -> Vec<NodeId> {
    vec![n.w0, n.b0, n.w1, n.b1]
}

pub fn encoder_leaf_ids(n: &EncoderLayerNodes) -> Vec<NodeId> {
    vec![
        n.attn.wq, n.attn.wk, n.attn.wv, n.attn.wo, n.ln1.gain, n.ln1.bias, n.pffn.w1,
        n.pffn.b1, n.pffn.w2, n.pffn.b2, n.ln2.gain, n.ln2.bias,
    ]
}

pub fn decoder_leaf_ids(n: &DecoderLayerNodes) -> Vec<NodeId> {
    vec![
        n.self_attn.wq,
        n.self_attn.wk,
        n.self_attn.wv,
        n.self_attn.wo,
        n.ln1.gain,
        n.ln1.bias,
        n.cross_attn.wq,
        n.cross_attn.wk,
        n.cross_attn.wv,
        n.cross_attn.wo,
        n.ln2.gain,
        n.ln2.bias,
        n.pffn.w1,
        n.pffn.b1,
        n.pffn.w2,
        n.pffn.b2,
        n.ln3.gain,
        n.ln3.bias,
    ]
}

// ---- graph builders ---------------------------------------------------------

/// Transition layer on the tape: relu(x·w0 + b0)·w1 + b1, row-wise.
pub fn transition_graph(tape: &mut Tape, x: NodeId, t: &TransitionNodes) -> Result<NodeId> {
    let h = tape.matmul(x, t.w0)?;
    let h = tape.add_row_broadcast(h, t.b0)?;
    let h = tape.relu(h);
    let h = tape.matmul(h, t.w1)?;
    tape.add_row_broadcast(h, t.b1)
}

/// One encoder layer on the tape (bidirectional self-attention).
pub fn encoder_layer_graph(
    tape: &mut Tape,
    x: NodeId,
    layer: &EncoderLayerNodes,
    cfg: &AttentionConfig,
) -> Result<NodeId> {
    let attn_cfg = AttentionConfig { causal: false, ..*cfg };
    let mh = attention_graph(tape, x, x, x, &attn_cfg, &layer.attn)?;
    let res = tape.add(x, mh)?;
    let h1 = tape.layer_norm_rows(res, layer.ln1.gain, layer.ln1.bias, LAYER_NORM_EPS)?;
    let ff = pffn_graph(tape, h1, &layer.pffn)?;
    let res2 = tape.add(h1, ff)?;
    tape.layer_norm_rows(res2, layer.ln2.gain, layer.ln2.bias, LAYER_NORM_EPS)
}

/// One decoder layer on the tape: causal self-attention, cross-attention
/// with queries from the running state and keys/values from `memory`.
pub fn decoder_layer_graph(
    tape: &mut Tape,
    x: NodeId,
    memory: NodeId,
    layer: &DecoderLayerNodes,
    cfg: &AttentionConfig,
) -> Result<NodeId> {
    let causal_cfg = AttentionConfig { causal: true, ..*cfg };
    let plain_cfg = AttentionConfig { causal: false, ..*cfg };
    let mmh = attention_graph(tape, x, x, x, &causal_cfg, &layer.self_attn)?;
    let res = tape.add(x, mmh)?;
    let h1 = tape.layer_norm_rows(res, layer.ln1.gain, layer.ln1.bias, LAYER_NORM_EPS)?;
    let cross = attention_graph(tape, h1, memory, memory, &plain_cfg, &layer.cross_attn)?;
    let res2 = tape.add(h1, cross)?;
    let h2 = tape.layer_norm_rows(res2, layer.ln2.gain, layer.ln2.bias, LAYER_NORM_EPS)?;
    let ff = pffn_graph(tape, h2, &layer.pffn)?;
    let res3 = tape.add(h2, ff)?;
    tape.layer_norm_rows(res3, layer.ln3.gain, layer.ln3.bias, LAYER_NORM_EPS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn transition_zero_w1_gives_b1_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = TransitionLayer::init(4, 3, &mut rng);
        t.w1 = Tensor2::zeros(3, 3);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2::glorot_uniform(5, 4, &mut rng));
        let nodes = stage_transition(&mut tape, &t);
        let out = transition_graph(&mut tape, x, &nodes).unwrap();
        for r in 0..5 {
            assert_eq!(tape.value(out).row(r), t.b1.row(0));
        }
    }

    #[test]
    fn transition_is_row_wise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = TransitionLayer::init(4, 3, &mut rng);
        let a = Tensor2::glorot_uniform(3, 4, &mut rng);
        let run = |x: &Tensor2| {
            let mut tape = Tape::new();
            let xn = tape.leaf(x.clone());
            let nodes = stage_transition(&mut tape, &t);
            let out = transition_graph(&mut tape, xn, &nodes).unwrap();
            tape.value(out).clone()
        };
        let base = run(&a);
        let perm = Tensor2::from_rows(&[a.row(2), a.row(0), a.row(1)]).unwrap();
        let permuted = run(&perm);
        assert_eq!(permuted.row(0), base.row(2));
        assert_eq!(permuted.row(1), base.row(0));
        assert_eq!(permuted.row(2), base.row(1));
    }

    #[test]
    fn transition_matches_scalar_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = TransitionLayer::init(5, 4, &mut rng);
        let x = Tensor2::glorot_uniform(2, 5, &mut rng);
        let mut tape = Tape::new();
        let xn = tape.leaf(x.clone());
        let nodes = stage_transition(&mut tape, &t);
        let out = transition_graph(&mut tape, xn, &nodes).unwrap();
        for r in 0..2 {
            let mut hidden = vec![0.0; 4];
            for (j, h) in hidden.iter_mut().enumerate() {
                let mut acc = t.b0.get(0, j);
                for i in 0..5 {
                    acc += x.get(r, i) * t.w0.get(i, j);
                }
                *h = acc.max(0.0);
            }
            for c in 0..4 {
                let mut acc = t.b1.get(0, c);
                for (j, h) in hidden.iter().enumerate() {
                    acc += h * t.w1.get(j, c);
                }
                assert!((tape.value(out).get(r, c) - acc).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn decoder_layer_rows_ignore_suffix() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d_m = 4;
        let cfg = AttentionConfig::new(d_m, 2, false).unwrap();
        let layer = DecoderLayer::init(d_m, &mut rng);
        let memory = Tensor2::glorot_uniform(3, d_m, &mut rng);
        let x = Tensor2::glorot_uniform(4, d_m, &mut rng);

        let run = |x: &Tensor2| {
            let mut tape = Tape::new();
            let xn = tape.leaf(x.clone());
            let mn = tape.leaf(memory.clone());
            let nodes = stage_decoder_layer(&mut tape, &layer);
            let out = decoder_layer_graph(&mut tape, xn, mn, &nodes, &cfg).unwrap();
            tape.value(out).clone()
        };
        let base = run(&x);
        let mut edited = x.clone();
        for c in 0..d_m {
            edited.set(3, c, edited.get(3, c) + 5.0);
        }
        let changed = run(&edited);
        for t in 0..3 {
            for c in 0..d_m {
                assert!((base.get(t, c) - changed.get(t, c)).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn encoder_layer_gradients_check_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d_m = 4;
        let cfg = AttentionConfig::new(d_m, 2, false).unwrap();
        let layer = EncoderLayer::init(d_m, &mut rng);
        let x = Tensor2::glorot_uniform(3, d_m, &mut rng);

        let mut point = vec![x];
        let mut names: Vec<(String, Tensor2)> = Vec::new();
        layer.named_params("enc", &mut names);
        point.extend(names.into_iter().map(|(_, t)| t));

        let err = crate::tensor::grad_check(
            &point,
            |tape, leaves| {
                let x = leaves[0];
                let nodes = EncoderLayerNodes {
                    attn: AttentionNodes {
                        wq: leaves[1],
                        wk: leaves[2],
                        wv: leaves[3],
                        wo: leaves[4],
                    },
                    ln1: LayerNormNodes {
                        gain: leaves[5],
                        bias: leaves[6],
                    },
                    pffn: PffnNodes {
                        w1: leaves[7],
                        b1: leaves[8],
                        w2: leaves[9],
                        b2: leaves[10],
                    },
                    ln2: LayerNormNodes {
                        gain: leaves[11],
                        bias: leaves[12],
                    },
                };
                let out = encoder_layer_graph(tape, x, &nodes, &cfg)?;
                let sq = tape.hadamard(out, out)?;
                Ok(tape.sum_all(sq))
            },
            1e-4,
        )
        .unwrap();
        assert!(err <= 1e-3, "encoder layer grad error {err}");
    }
}
