//! Minimal deterministic differentiable compute.
//!
//! Everything the models need is built from a small set of dense f64
//! kernels: linear maps, ReLU, row softmax (optionally causal), layer
//! normalization, multi-head attention and the position-wise feed-forward
//! network. Reverse-mode gradients for all of them come from the
//! computation tape in [`tape`].
//!
//! All arithmetic is 64-bit and serial, so identical inputs produce
//! bit-identical outputs on every platform.

mod gradcheck;
mod ops;
pub mod tape;

pub use gradcheck::grad_check;
pub use ops::{
    attention_graph, layer_norm, multi_head_attention, pffn, pffn_graph, softmax,
    stage_attention, stage_pffn, AttentionNodes, AttentionParams, PffnNodes, PffnParams,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Errors from tensor construction and the differentiable ops.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("data length {got} does not match shape {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, got: usize },
    #[error("shape mismatch: {left:?} vs {right:?} in {op}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{what} must not be empty")]
    EmptyInput { what: &'static str },
    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },
    #[error("index {index} out of range for {what} of length {len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("model dim {model_dim} is not divisible by {num_heads} heads")]
    BadHeadSplit { model_dim: usize, num_heads: usize },
    #[error("attention requires at least one head")]
    ZeroHeads,
    #[error("causal attention requires square score matrices, got {q_rows} queries and {k_rows} keys")]
    CausalShape { q_rows: usize, k_rows: usize },
    #[error("gradient check requires a scalar (1x1) output, got {rows}x{cols}")]
    NonScalarOutput { rows: usize, cols: usize },
    #[error("finite-difference step {step} outside [1e-5, 1e-3]")]
    BadStep { step: f64 },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major matrix of f64. The workhorse value type for every model.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(TensorError::DataLength {
                rows,
                cols,
                got: data.len(),
            });
        }
        Ok(Tensor2 { rows, cols, data })
    }

    /// Single-row matrix from a slice.
    pub fn row_vector(values: &[f64]) -> Self {
        Tensor2 {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    /// Stack equal-length rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        if rows.is_empty() {
            return Err(TensorError::EmptyInput { what: "rows" });
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "from_rows",
                    left: (1, cols),
                    right: (1, r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Tensor2 {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Uniform init in (-1/sqrt(fan_in), +1/sqrt(fan_in)); fan_in = rows,
    /// matching the x·W orientation used throughout.
    pub fn glorot_uniform<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let limit = 1.0 / (rows.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Tensor2 { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Scalar value of a 1x1 tensor.
    pub fn scalar(&self) -> Result<f64> {
        if self.rows == 1 && self.cols == 1 {
            Ok(self.data[0])
        } else {
            Err(TensorError::NonScalarOutput {
                rows: self.rows,
                cols: self.cols,
            })
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn matmul(&self, other: &Tensor2) -> Result<Tensor2> {
        if self.cols != other.rows {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Tensor2::zeros(self.rows, other.cols);
        // ikj order keeps the inner loop contiguous.
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Tensor2 {
        let mut out = Tensor2::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn add(&self, other: &Tensor2) -> Result<Tensor2> {
        if self.shape() != other.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, k: f64) -> Tensor2 {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * k).collect(),
        }
    }

    /// self -= k * other, shape-checked. Used by the SGD update.
    pub fn sub_scaled_assign(&mut self, other: &Tensor2, k: f64) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "sub_scaled_assign",
                left: self.shape(),
                right: other.shape(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a -= k * b;
        }
        Ok(())
    }
}

/// Attention geometry: model width, head count and the causal flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub model_dim: usize,
    pub num_heads: usize,
    pub causal: bool,
}

impl AttentionConfig {
    pub fn new(model_dim: usize, num_heads: usize, causal: bool) -> Result<Self> {
        if num_heads == 0 {
            return Err(TensorError::ZeroHeads);
        }
        if model_dim % num_heads != 0 {
            return Err(TensorError::BadHeadSplit {
                model_dim,
                num_heads,
            });
        }
        Ok(AttentionConfig {
            model_dim,
            num_heads,
            causal,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }
}

pub(crate) mod kernel {
    //! Shared forward kernels, used both by the public ops and by the tape.

    use super::Tensor2;

    /// Row-wise max-shifted softmax. With `causal` set, row t normalizes
    /// over columns 0..=t and later columns are exactly zero.
    pub fn softmax_rows(x: &Tensor2, causal: bool) -> Tensor2 {
        let (rows, cols) = x.shape();
        let mut out = Tensor2::zeros(rows, cols);
        for r in 0..rows {
            let valid = if causal { (r + 1).min(cols) } else { cols };
            let row = x.row(r);
            let max = row[..valid]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for c in 0..valid {
                let e = (row[c] - max).exp();
                out.set(r, c, e);
                sum += e;
            }
            for c in 0..valid {
                out.set(r, c, out.get(r, c) / sum);
            }
        }
        out
    }

    /// Per-row normalize-scale-shift with population variance.
    pub fn layer_norm_rows(x: &Tensor2, gain: &[f64], bias: &[f64], eps: f64) -> Tensor2 {
        let (rows, cols) = x.shape();
        let mut out = Tensor2::zeros(rows, cols);
        for r in 0..rows {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let denom = (var + eps).sqrt();
            for c in 0..cols {
                out.set(r, c, gain[c] * (row[c] - mean) / denom + bias[c]);
            }
        }
        out
    }

    pub fn relu(x: &Tensor2) -> Tensor2 {
        let mut out = x.clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        out
    }
}
