//! Public forward ops and the tape-level attention / feed-forward
//! composites shared by every model.

use super::kernel;
use super::tape::{NodeId, Tape};
use super::{AttentionConfig, Result, Tensor2, TensorError};

/// Projection weights for one multi-head attention block: d_m x d_m each,
/// no biases.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub wq: Tensor2,
    pub wk: Tensor2,
    pub wv: Tensor2,
    pub wo: Tensor2,
}

/// Two-layer position-wise feed-forward weights; inner width is 4·d_m.
#[derive(Debug, Clone, PartialEq)]
pub struct PffnParams {
    pub w1: Tensor2,
    pub b1: Tensor2,
    pub w2: Tensor2,
    pub b2: Tensor2,
}

/// Max-shifted softmax over a single logit vector.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(TensorError::EmptyInput { what: "softmax logits" });
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(TensorError::NonFinite { what: "softmax logits" });
    }
    let x = Tensor2::row_vector(logits);
    Ok(kernel::softmax_rows(&x, false).row(0).to_vec())
}

/// Normalize-scale-shift over one vector with population variance.
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(TensorError::EmptyInput { what: "layer_norm input" });
    }
    if x.len() != gain.len() || x.len() != bias.len() {
        return Err(TensorError::ShapeMismatch {
            op: "layer_norm",
            left: (1, x.len()),
            right: (1, gain.len().max(bias.len())),
        });
    }
    let t = Tensor2::row_vector(x);
    Ok(kernel::layer_norm_rows(&t, gain, bias, epsilon).row(0).to_vec())
}

/// Scaled dot-product multi-head attention, scale 1/sqrt(d_m/heads).
/// Runs on a throwaway tape so the forward path is the differentiated one.
pub fn multi_head_attention(
    q: &Tensor2,
    k: &Tensor2,
    v: &Tensor2,
    cfg: &AttentionConfig,
    params: &AttentionParams,
) -> Result<Tensor2> {
    let mut tape = Tape::new();
    let qn = tape.leaf(q.clone());
    let kn = tape.leaf(k.clone());
    let vn = tape.leaf(v.clone());
    let pn = stage_attention(&mut tape, params);
    let out = attention_graph(&mut tape, qn, kn, vn, cfg, &pn)?;
    Ok(tape.value(out).clone())
}

/// Row-wise two-layer ReLU network; shape preserving.
pub fn pffn(x: &Tensor2, params: &PffnParams) -> Result<Tensor2> {
    let mut tape = Tape::new();
    let xn = tape.leaf(x.clone());
    let pn = stage_pffn(&mut tape, params);
    let out = pffn_graph(&mut tape, xn, &pn)?;
    Ok(tape.value(out).clone())
}

/// Node ids of one attention block's weights on a tape.
#[derive(Debug, Clone, Copy)]
pub struct AttentionNodes {
    pub wq: NodeId,
    pub wk: NodeId,
    pub wv: NodeId,
    pub wo: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub struct PffnNodes {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

pub fn stage_attention(tape: &mut Tape, p: &AttentionParams) -> AttentionNodes {
    AttentionNodes {
        wq: tape.leaf(p.wq.clone()),
        wk: tape.leaf(p.wk.clone()),
        wv: tape.leaf(p.wv.clone()),
        wo: tape.leaf(p.wo.clone()),
    }
}

pub fn stage_pffn(tape: &mut Tape, p: &PffnParams) -> PffnNodes {
    PffnNodes {
        w1: tape.leaf(p.w1.clone()),
        b1: tape.leaf(p.b1.clone()),
        w2: tape.leaf(p.w2.clone()),
        b2: tape.leaf(p.b2.clone()),
    }
}

/// Multi-head attention on the tape. Queries come from `q`, keys/values
/// from `k`/`v`; with `cfg.causal`, query row t sees key rows 0..=t only.
pub fn attention_graph(
    tape: &mut Tape,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    cfg: &AttentionConfig,
    params: &AttentionNodes,
) -> Result<NodeId> {
    let d_m = cfg.model_dim;
    for (name, node) in [("Q", q), ("K", k), ("V", v)] {
        let shape = tape.value(node).shape();
        if shape.1 != d_m {
            return Err(TensorError::ShapeMismatch {
                op: match name {
                    "Q" => "attention Q",
                    "K" => "attention K",
                    _ => "attention V",
                },
                left: (shape.0, d_m),
                right: shape,
            });
        }
    }
    let k_rows = tape.value(k).rows();
    if tape.value(v).rows() != k_rows {
        return Err(TensorError::ShapeMismatch {
            op: "attention K/V rows",
            left: tape.value(k).shape(),
            right: tape.value(v).shape(),
        });
    }

    let qp = tape.matmul(q, params.wq)?;
    let kp = tape.matmul(k, params.wk)?;
    let vp = tape.matmul(v, params.wv)?;

    let d_k = cfg.head_dim();
    let scale = 1.0 / (d_k as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.num_heads);
    for h in 0..cfg.num_heads {
        let qh = tape.slice_cols(qp, h * d_k, d_k)?;
        let kh = tape.slice_cols(kp, h * d_k, d_k)?;
        let vh = tape.slice_cols(vp, h * d_k, d_k)?;
        let kt = tape.transpose(kh);
        let scores = tape.matmul(qh, kt)?;
        let scaled = tape.scale(scores, scale);
        let weights = tape.softmax_rows(scaled, cfg.causal)?;
        heads.push(tape.matmul(weights, vh)?);
    }
    let concat = tape.concat_cols(&heads)?;
    tape.matmul(concat, params.wo)
}

/// Position-wise feed-forward on the tape: relu(x·w1 + b1)·w2 + b2.
pub fn pffn_graph(tape: &mut Tape, x: NodeId, params: &PffnNodes) -> Result<NodeId> {
    let x_cols = tape.value(x).cols();
    let w1_rows = tape.value(params.w1).rows();
    if x_cols != w1_rows {
        return Err(TensorError::ShapeMismatch {
            op: "pffn input",
            left: tape.value(x).shape(),
            right: tape.value(params.w1).shape(),
        });
    }
    let h = tape.matmul(x, params.w1)?;
    let h = tape.add_row_broadcast(h, params.b1)?;
    let h = tape.relu(h);
    let h = tape.matmul(h, params.w2)?;
    tape.add_row_broadcast(h, params.b2)
}
