//! Reverse-mode differentiation over an explicit computation tape.
//!
//! Values are computed eagerly as nodes are appended, so building the graph
//! *is* the forward pass. `backward` walks the tape once in reverse and
//! accumulates a gradient tensor per node. No higher-order gradients.

use super::kernel;
use super::{Result, Tensor2, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

impl NodeId {
    /// Position in the tape, also the index into `backward`'s gradient list.
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    Scale(NodeId, f64),
    AddRowBroadcast(NodeId, NodeId),
    Relu(NodeId),
    Sqrt(NodeId),
    SoftmaxRows { input: NodeId, causal: bool },
    LayerNormRows { input: NodeId, gain: NodeId, bias: NodeId, eps: f64 },
    SliceCols { input: NodeId, start: usize, len: usize },
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    RowSelect { input: NodeId, row: usize },
    Transpose(NodeId),
    SumAll(NodeId),
    CrossEntropyRow { logits: NodeId, target: usize },
}

struct Node {
    value: Tensor2,
    op: Op,
}

/// Computation tape. One tape per training step or evaluation pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor2 {
        &self.nodes[id.0].value
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Tensor2, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Input or parameter leaf. The caller keeps track of which leaves are
    /// trainable; `backward` produces gradients for every node.
    pub fn leaf(&mut self, value: Tensor2) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.nodes[a.0].value.matmul(&self.nodes[b.0].value)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.nodes[a.0].value.add(&self.nodes[b.0].value)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op: "sub",
                left: self.shape(a),
                right: self.shape(b),
            });
        }
        let value = self.nodes[a.0]
            .value
            .add(&self.nodes[b.0].value.scale(-1.0))?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op: "hadamard",
                left: self.shape(a),
                right: self.shape(b),
            });
        }
        let (rows, cols) = self.shape(a);
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor2::from_vec(rows, cols, data)?;
        Ok(self.push(value, Op::Hadamard(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let value = self.nodes[a.0].value.scale(k);
        self.push(value, Op::Scale(a, k))
    }

    /// Add a 1xD row vector to every row of an NxD matrix.
    pub fn add_row_broadcast(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.shape(a);
        let (rrows, rcols) = self.shape(row);
        if rrows != 1 || rcols != cols {
            return Err(TensorError::ShapeMismatch {
                op: "add_row_broadcast",
                left: (rows, cols),
                right: (rrows, rcols),
            });
        }
        let mut value = self.nodes[a.0].value.clone();
        for r in 0..rows {
            for c in 0..cols {
                let v = value.get(r, c) + self.nodes[row.0].value.get(0, c);
                value.set(r, c, v);
            }
        }
        Ok(self.push(value, Op::AddRowBroadcast(a, row)))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = kernel::relu(&self.nodes[a.0].value);
        self.push(value, Op::Relu(a))
    }

    /// Elementwise square root. Subgradient 0 at exactly 0.
    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let mut value = self.nodes[a.0].value.clone();
        for v in value.data_mut() {
            *v = v.sqrt();
        }
        self.push(value, Op::Sqrt(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId, causal: bool) -> Result<NodeId> {
        let (rows, cols) = self.shape(a);
        if causal && rows != cols {
            return Err(TensorError::CausalShape {
                q_rows: rows,
                k_rows: cols,
            });
        }
        let value = kernel::softmax_rows(&self.nodes[a.0].value, causal);
        Ok(self.push(value, Op::SoftmaxRows { input: a, causal }))
    }

    pub fn layer_norm_rows(
        &mut self,
        input: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let (_, cols) = self.shape(input);
        for (name, id) in [("gain", gain), ("bias", bias)] {
            let s = self.shape(id);
            if s != (1, cols) {
                return Err(TensorError::ShapeMismatch {
                    op: if name == "gain" {
                        "layer_norm gain"
                    } else {
                        "layer_norm bias"
                    },
                    left: (1, cols),
                    right: s,
                });
            }
        }
        let value = kernel::layer_norm_rows(
            &self.nodes[input.0].value,
            self.nodes[gain.0].value.row(0),
            self.nodes[bias.0].value.row(0),
            eps,
        );
        Ok(self.push(value, Op::LayerNormRows { input, gain, bias, eps }))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (rows, cols) = self.shape(a);
        if start + len > cols {
            return Err(TensorError::IndexOutOfRange {
                what: "slice_cols",
                index: start + len,
                len: cols,
            });
        }
        let mut value = Tensor2::zeros(rows, len);
        for r in 0..rows {
            for c in 0..len {
                value.set(r, c, self.nodes[a.0].value.get(r, start + c));
            }
        }
        Ok(self.push(value, Op::SliceCols { input: a, start, len }))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(TensorError::EmptyInput { what: "concat_cols" });
        }
        let rows = self.shape(parts[0]).0;
        let mut cols = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.0 != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    left: (rows, 0),
                    right: s,
                });
            }
            cols += s.1;
        }
        let mut value = Tensor2::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            let part = &self.nodes[p.0].value;
            for r in 0..rows {
                for c in 0..part.cols() {
                    value.set(r, offset + c, part.get(r, c));
                }
            }
            offset += part.cols();
        }
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(TensorError::EmptyInput { what: "concat_rows" });
        }
        let cols = self.shape(parts[0]).1;
        let mut rows = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.1 != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    left: (0, cols),
                    right: s,
                });
            }
            rows += s.0;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(self.nodes[p.0].value.data());
        }
        let value = Tensor2::from_vec(rows, cols, data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    pub fn row_select(&mut self, a: NodeId, row: usize) -> Result<NodeId> {
        let (rows, _) = self.shape(a);
        if row >= rows {
            return Err(TensorError::IndexOutOfRange {
                what: "row_select",
                index: row,
                len: rows,
            });
        }
        let value = Tensor2::row_vector(self.nodes[a.0].value.row(row));
        Ok(self.push(value, Op::RowSelect { input: a, row }))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        self.push(
            Tensor2::from_vec(1, 1, vec![s]).expect("1x1"),
            Op::SumAll(a),
        )
    }

    /// Negative log-softmax of entry `target` in a 1xK logit row.
    /// Max-shifted, so it is stable for any finite logits.
    pub fn cross_entropy_row(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let (rows, cols) = self.shape(logits);
        if rows != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy_row",
                left: (1, cols),
                right: (rows, cols),
            });
        }
        if target >= cols {
            return Err(TensorError::IndexOutOfRange {
                what: "cross_entropy_row target",
                index: target,
                len: cols,
            });
        }
        let row = self.nodes[logits.0].value.row(0);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = -(row[target] - max - log_sum);
        Ok(self.push(
            Tensor2::from_vec(1, 1, vec![loss]).expect("1x1"),
            Op::CrossEntropyRow { logits, target },
        ))
    }

    /// Reverse pass from a scalar output node. Returns one gradient tensor
    /// per node, in node order.
    pub fn backward(&self, output: NodeId) -> Result<Vec<Tensor2>> {
        let out_shape = self.shape(output);
        if out_shape != (1, 1) {
            return Err(TensorError::NonScalarOutput {
                rows: out_shape.0,
                cols: out_shape.1,
            });
        }
        let mut grads: Vec<Tensor2> = self
            .nodes
            .iter()
            .map(|n| Tensor2::zeros(n.value.rows(), n.value.cols()))
            .collect();
        grads[output.0].set(0, 0, 1.0);

        for i in (0..=output.0).rev() {
            let g = grads[i].clone();
            if g.data().iter().all(|v| *v == 0.0) {
                continue;
            }
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul(&self.nodes[b.0].value.transpose())?;
                    let db = self.nodes[a.0].value.transpose().matmul(&g)?;
                    accumulate(&mut grads[a.0], &da);
                    accumulate(&mut grads[b.0], &db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], &g);
                    accumulate(&mut grads[b.0], &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[a.0], &g);
                    accumulate(&mut grads[b.0], &g.scale(-1.0));
                }
                Op::Hadamard(a, b) => {
                    let da = elementwise_mul(&g, &self.nodes[b.0].value);
                    let db = elementwise_mul(&g, &self.nodes[a.0].value);
                    accumulate(&mut grads[a.0], &da);
                    accumulate(&mut grads[b.0], &db);
                }
                Op::Scale(a, k) => {
                    accumulate(&mut grads[a.0], &g.scale(*k));
                }
                Op::AddRowBroadcast(a, row) => {
                    accumulate(&mut grads[a.0], &g);
                    let cols = g.cols();
                    let mut drow = Tensor2::zeros(1, cols);
                    for r in 0..g.rows() {
                        for c in 0..cols {
                            drow.set(0, c, drow.get(0, c) + g.get(r, c));
                        }
                    }
                    accumulate(&mut grads[row.0], &drow);
                }
                Op::Relu(a) => {
                    let x = &self.nodes[a.0].value;
                    let mut da = g.clone();
                    for (dv, xv) in da.data_mut().iter_mut().zip(x.data()) {
                        if *xv <= 0.0 {
                            *dv = 0.0;
                        }
                    }
                    accumulate(&mut grads[a.0], &da);
                }
                Op::Sqrt(a) => {
                    let y = &self.nodes[i].value;
                    let mut da = g.clone();
                    for (dv, yv) in da.data_mut().iter_mut().zip(y.data()) {
                        *dv = if *yv > 0.0 { *dv / (2.0 * yv) } else { 0.0 };
                    }
                    accumulate(&mut grads[a.0], &da);
                }
                Op::SoftmaxRows { input, causal } => {
                    let p = &self.nodes[i].value;
                    let (rows, cols) = p.shape();
                    let mut da = Tensor2::zeros(rows, cols);
                    for r in 0..rows {
                        let valid = if *causal { (r + 1).min(cols) } else { cols };
                        let mut dot = 0.0;
                        for c in 0..valid {
                            dot += g.get(r, c) * p.get(r, c);
                        }
                        for c in 0..valid {
                            da.set(r, c, p.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    accumulate(&mut grads[input.0], &da);
                }
                Op::LayerNormRows { input, gain, bias, eps } => {
                    let x = &self.nodes[input.0].value;
                    let gains = self.nodes[gain.0].value.row(0);
                    let (rows, cols) = x.shape();
                    let d = cols as f64;
                    let mut dx = Tensor2::zeros(rows, cols);
                    let mut dgain = Tensor2::zeros(1, cols);
                    let mut dbias = Tensor2::zeros(1, cols);
                    for r in 0..rows {
                        let row = x.row(r);
                        let mean = row.iter().sum::<f64>() / d;
                        let var =
                            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
                        let denom = (var + eps).sqrt();
                        // dxhat, then the mean/variance chain.
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        let mut dxhat = vec![0.0; cols];
                        for c in 0..cols {
                            let xhat = (row[c] - mean) / denom;
                            let dxh = g.get(r, c) * gains[c];
                            dxhat[c] = dxh;
                            sum_dxhat += dxh;
                            sum_dxhat_xhat += dxh * xhat;
                            dgain.set(0, c, dgain.get(0, c) + g.get(r, c) * xhat);
                            dbias.set(0, c, dbias.get(0, c) + g.get(r, c));
                        }
                        for c in 0..cols {
                            let xhat = (row[c] - mean) / denom;
                            let v = (dxhat[c] - sum_dxhat / d - xhat * sum_dxhat_xhat / d)
                                / denom;
                            dx.set(r, c, v);
                        }
                    }
                    accumulate(&mut grads[input.0], &dx);
                    accumulate(&mut grads[gain.0], &dgain);
                    accumulate(&mut grads[bias.0], &dbias);
                }
                Op::SliceCols { input, start, len } => {
                    let (rows, _) = g.shape();
                    let mut da = Tensor2::zeros(rows, self.shape(*input).1);
                    for r in 0..rows {
                        for c in 0..*len {
                            da.set(r, start + c, g.get(r, c));
                        }
                    }
                    accumulate(&mut grads[input.0], &da);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let (rows, cols) = self.shape(*p);
                        let mut dp = Tensor2::zeros(rows, cols);
                        for r in 0..rows {
                            for c in 0..cols {
                                dp.set(r, c, g.get(r, offset + c));
                            }
                        }
                        accumulate(&mut grads[p.0], &dp);
                        offset += cols;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let (rows, cols) = self.shape(*p);
                        let mut dp = Tensor2::zeros(rows, cols);
                        for r in 0..rows {
                            for c in 0..cols {
                                dp.set(r, c, g.get(offset + r, c));
                            }
                        }
                        accumulate(&mut grads[p.0], &dp);
                        offset += rows;
                    }
                }
                Op::RowSelect { input, row } => {
                    let (_, cols) = g.shape();
                    let mut da = Tensor2::zeros(self.shape(*input).0, cols);
                    for c in 0..cols {
                        da.set(*row, c, g.get(0, c));
                    }
                    accumulate(&mut grads[input.0], &da);
                }
                Op::Transpose(a) => {
                    accumulate(&mut grads[a.0], &g.transpose());
                }
                Op::SumAll(a) => {
                    let gv = g.get(0, 0);
                    let (rows, cols) = self.shape(*a);
                    let da = Tensor2::from_vec(rows, cols, vec![gv; rows * cols])?;
                    accumulate(&mut grads[a.0], &da);
                }
                Op::CrossEntropyRow { logits, target } => {
                    let gv = g.get(0, 0);
                    let row = self.nodes[logits.0].value.row(0);
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
                    let mut dl = Tensor2::zeros(1, row.len());
                    for (c, v) in row.iter().enumerate() {
                        let p = (v - max).exp() / sum;
                        let delta = if c == *target { 1.0 } else { 0.0 };
                        dl.set(0, c, gv * (p - delta));
                    }
                    accumulate(&mut grads[logits.0], &dl);
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate(into: &mut Tensor2, from: &Tensor2) {
    debug_assert_eq!(into.shape(), from.shape());
    for (a, b) in into.data_mut().iter_mut().zip(from.data()) {
        *a += b;
    }
}

fn elementwise_mul(a: &Tensor2, b: &Tensor2) -> Tensor2 {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor2::from_vec(a.rows(), a.cols(), data).expect("same shape")
}
