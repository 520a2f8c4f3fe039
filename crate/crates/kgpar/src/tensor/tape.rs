//! Wengert tape for reverse-mode differentiation.
//!
//! Operations routed through a [`Tape`] append nodes in topological order
//! (inputs always precede their consumers). [`Tape::backward`] walks the tape
//! in reverse, accumulating gradients via the chain rule. A tape and its
//! tensors are confined to one worker (`RefCell` keeps it `!Sync`); run
//! independent tapes for concurrent work.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{NodeId, Tensor, TensorError};

static TAPE_COUNTER: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul,
    Add,
    Sub,
    Mul,
    Scale(f64),
    ScaleBy,
    AddRows,
    MulRows,
    Sigmoid,
    Exp,
    Log,
    Relu,
    LeakyRelu(f64),
    SoftmaxRows,
    MaskedSoftmaxRows,
    Transpose,
    ConcatRows(Vec<usize>),
    SliceRows { lo: usize },
    ConcatCols(Vec<usize>),
    SliceCols { lo: usize },
    RowSums,
    ColSums,
    SumAll,
    MeanAll,
    LayerNormRows(f64),
    Clamp { lo: f64, hi: f64 },
}

#[derive(Debug)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
    /// True when a gradient can flow from this node to a trainable leaf.
    requires: bool,
}

/// Append-only record of a differentiable computation.
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
    checked: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_checked(false)
    }

    /// `checked = true` validates that every recorded value is finite.
    pub fn with_checked(checked: bool) -> Self {
        Tape {
            id: TAPE_COUNTER.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            checked,
        }
    }

    pub fn is_checked(&self) -> bool {
        self.checked
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Register a trainable or constant leaf; `requires_grad` comes from the tensor.
    pub fn leaf(&self, t: &Tensor) -> Tensor {
        self.push(Op::Leaf, vec![], t.clone(), t.requires_grad)
            .expect("leaf recording cannot fail")
    }

    /// Register a leaf that never receives a gradient.
    pub fn constant(&self, t: &Tensor) -> Tensor {
        let mut c = t.clone();
        c.requires_grad = false;
        self.push(Op::Leaf, vec![], c, false)
            .expect("leaf recording cannot fail")
    }

    fn push(
        &self,
        op: Op,
        inputs: Vec<NodeId>,
        value: Tensor,
        requires: bool,
    ) -> Result<Tensor, TensorError> {
        if self.checked && !value.is_finite() {
            return Err(TensorError::NonFinite {
                op: op_name(&op),
            });
        }
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        let mut out = value.clone();
        out.node = Some((self.id, id));
        out.requires_grad = false;
        nodes.push(Node {
            op,
            inputs,
            value,
            requires,
        });
        Ok(out)
    }

    /// Node id of `t` on this tape, implicitly registering plain tensors.
    fn admit(&self, t: &Tensor) -> Result<(NodeId, bool), TensorError> {
        match t.node {
            Some((tape_id, node)) => {
                if tape_id != self.id {
                    return Err(TensorError::ForeignTape);
                }
                Ok((node, self.nodes.borrow()[node].requires))
            }
            None => {
                let registered = self.leaf(t);
                let (_, node) = registered.node.unwrap();
                Ok((node, t.requires_grad))
            }
        }
    }

    // ── Recorded operations ─────────────────────────────────────────────

    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let value = a.matmul(b)?;
        let (ia, ra) = self.admit(a)?;
        let (ib, rb) = self.admit(b)?;
        self.push(Op::Matmul, vec![ia, ib], value, ra || rb)
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let value = a.add_plain(b)?;
        let (ia, ra) = self.admit(a)?;
        let (ib, rb) = self.admit(b)?;
        self.push(Op::Add, vec![ia, ib], value, ra || rb)
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let value = a.sub_plain(b)?;
        let (ia, ra) = self.admit(a)?;
        let (ib, rb) = self.admit(b)?;
        self.push(Op::Sub, vec![ia, ib], value, ra || rb)
    }

    /// Hadamard product of equal-shape tensors.
    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        if a.shape() != b.shape() {
            return Err(TensorError::DimMismatch {
                op: "mul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut value = a.clone();
        value.node = None;
        value.requires_grad = false;
        for (v, y) in value.data_mut().iter_mut().zip(b.data()) {
            *v *= y;
        }
        let (ia, ra) = self.admit(a)?;
        let (ib, rb) = self.admit(b)?;
        self.push(Op::Mul, vec![ia, ib], value, ra || rb)
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&self, x: &Tensor, c: f64) -> Result<Tensor, TensorError> {
        let value = x.scale_plain(c);
        let (ix, rx) = self.admit(x)?;
        self.push(Op::Scale(c), vec![ix], value, rx)
    }

    /// Multiply by a 1x1 tensor (gradient flows to both operands).
    pub fn scale_by(&self, x: &Tensor, s: &Tensor) -> Result<Tensor, TensorError> {
        if s.shape() != [1, 1] {
            return Err(TensorError::BadShape {
                op: "scale_by",
                expected: "1x1 scalar",
                got: s.shape().to_vec(),
            });
        }
        let value = x.scale_plain(s.item());
        let (ix, rx) = self.admit(x)?;
        let (is, rs) = self.admit(s)?;
        self.push(Op::ScaleBy, vec![ix, is], value, rx || rs)
    }

    /// Broadcast-add a 1 x m row vector to every row of an n x m tensor.
    pub fn add_rows(&self, x: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        if b.rows() != 1 || b.cols() != x.cols() {
            return Err(TensorError::DimMismatch {
                op: "add_rows",
                lhs: x.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut value = x.clone();
        value.node = None;
        value.requires_grad = false;
        let cols = x.cols();
        for r in 0..x.rows() {
            for c in 0..cols {
                value.data_mut()[r * cols + c] += b.data()[c];
            }
        }
        let (ix, rx) = self.admit(x)?;
        let (ib, rb) = self.admit(b)?;
        self.push(Op::AddRows, vec![ix, ib], value, rx || rb)
    }

    /// Broadcast-multiply every row of an n x m tensor by a 1 x m row vector.
    pub fn mul_rows(&self, x: &Tensor, g: &Tensor) -> Result<Tensor, TensorError> {
        if g.rows() != 1 || g.cols() != x.cols() {
            return Err(TensorError::DimMismatch {
                op: "mul_rows",
                lhs: x.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        let mut value = x.clone();
        value.node = None;
        value.requires_grad = false;
        let cols = x.cols();
        for r in 0..x.rows() {
            for c in 0..cols {
                value.data_mut()[r * cols + c] *= g.data()[c];
            }
        }
        let (ix, rx) = self.admit(x)?;
        let (ig, rg) = self.admit(g)?;
        self.push(Op::MulRows, vec![ix, ig], value, rx || rg)
    }

    pub fn sigmoid(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let value = x.map(super::sigmoid);
        let (ix, rx) = self.admit(x)?;
        self.push(Op::Sigmoid, vec![ix], value, rx)
    }

    pub fn exp(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let value = x.map(f64::exp);
        let (ix, rx) = self.admit(x)?;
        self.push(Op::Exp, vec![ix], value, rx)
    }

    /// Natural logarithm; rejects non-positive inputs in checked mode.
    pub fn log(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        if self.checked {
            if let Some(v) = x.data().iter().find(|v| **v <= 0.0) {
                return Err(TensorError::Domain {
                    op: "log",
                    msg: format!("log of non-positive value {v}"),
                });
            }
        }
        let value = x.map(f64::ln);
        let (ix, rx) = self.admit(x)?;
        self.push(Op::Log, vec![ix], value, rx)
    }

    pub fn relu(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let value = x.map(|v| v.max(0.0));
        let (ix, rx) = self.admit(x)?;
        self.push(Op::Relu, vec![ix], value, rx)
    }

    pub fn leaky_relu(&self, x: &Tensor, slope: f64) -> Result<Tensor, TensorError> {
        let value = x.map(|v| if v > 0.0 { v } else { slope * v });
        let (ix, rx) = self.admit(x)?;
        self.push(Op::LeakyRelu(slope), vec![ix], value, rx)
    }

    /// Row-wise softmax with per-row max subtraction for stability.
    pub fn softmax_rows(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let mut value = x.clone();
        value.node = None;
        value.requires_grad = false;
        let cols = x.cols();
        for r in 0..x.rows() {
            let row = &mut value.data_mut()[r * cols..(r + 1) * cols];
            softmax_in_place(row);
        }
        let (ix, rx) = self.admit(x)?;
        self.push(Op::SoftmaxRows, vec![ix], value, rx)
    }

    /// Row-wise softmax restricted to positions where `mask` is nonzero;
    /// masked-out positions and all-masked rows produce zeros.
    pub fn masked_softmax_rows(&self, x: &Tensor, mask: &Tensor) -> Result<Tensor, TensorError> {
        if mask.shape() != x.shape() {
            return Err(TensorError::DimMismatch {
                op: "masked_softmax_rows",
                lhs: x.shape().to_vec(),
                rhs: mask.shape().to_vec(),
            });
        }
        let mut value = Tensor::zeros(x.rows(), x.cols());
        let cols = x.cols();
        for r in 0..x.rows() {
            let xs = x.row_slice(r);
            let ms = mask.row_slice(r);
            let mut max = f64::NEG_INFINITY;
            for c in 0..cols {
                if ms[c] != 0.0 && xs[c] > max {
                    max = xs[c];
                }
            }
            if max == f64::NEG_INFINITY {
                continue; // row fully masked
            }
            let mut sum = 0.0;
            let out = &mut value.data_mut()[r * cols..(r + 1) * cols];
            for c in 0..cols {
                if ms[c] != 0.0 {
                    out[c] = (xs[c] - max).exp();
                    sum += out[c];
                }
            }
            for v in out.iter_mut() {
                *v /= sum;
            }
        }
        let (ix, rx) = self.admit(x)?;
        let (im, _) = self.admit(mask)?;
        self.push(Op::MaskedSoftmaxRows, vec![ix, im], value, rx)
    }

    pub fn transpose(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let value = x.transpose();
        let (ix, rx) = self.admit(x)?;
        self.push(Op::Transpose, vec![ix], value, rx)
    }

    /// Stack tensors with equal column counts on top of each other.
    pub fn concat_rows(&self, parts: &[&Tensor]) -> Result<Tensor, TensorError> {
        let cols = parts
            .first()
            .ok_or(TensorError::BadShape {
                op: "concat_rows",
                expected: "at least one part",
                got: vec![],
            })?
            .cols();
        let mut data = Vec::new();
        let mut row_counts = Vec::with_capacity(parts.len());
        for p in parts {
            if p.cols() != cols {
                return Err(TensorError::DimMismatch {
                    op: "concat_rows",
                    lhs: vec![row_counts.iter().sum(), cols],
                    rhs: p.shape().to_vec(),
                });
            }
            row_counts.push(p.rows());
            data.extend_from_slice(p.data());
        }
        let rows = row_counts.iter().sum();
        let value = Tensor::new(rows, cols, data)?;
        let mut inputs = Vec::with_capacity(parts.len());
        let mut requires = false;
        for p in parts {
            let (i, r) = self.admit(p)?;
            inputs.push(i);
            requires |= r;
        }
        self.push(Op::ConcatRows(row_counts), inputs, value, requires)
    }

    pub fn slice_rows(&self, x: &Tensor, lo: usize, hi: usize) -> Result<Tensor, TensorError> {
        if lo > hi || hi > x.rows() {
            return Err(TensorError::SliceRange {
                lo,
                hi,
                axis: "rows",
                size: x.rows(),
            });
        }
        let cols = x.cols();
        let value = Tensor::new(hi - lo, cols, x.data()[lo * cols..hi * cols].to_vec())?;
        let (ix, rx) = self.admit(x)?;
        self.push(Op::SliceRows { lo }, vec![ix], value, rx)
    }

    /// Stack tensors with equal row counts side by side.
    pub fn concat_cols(&self, parts: &[&Tensor]) -> Result<Tensor, TensorError> {
        let rows = parts
            .first()
            .ok_or(TensorError::BadShape {
                op: "concat_cols",
                expected: "at least one part",
                got: vec![],
            })?
            .rows();
        let mut col_counts = Vec::with_capacity(parts.len());
        for p in parts {
            if p.rows() != rows {
                return Err(TensorError::DimMismatch {
                    op: "concat_cols",
                    lhs: vec![rows, col_counts.iter().sum()],
                    rhs: p.shape().to_vec(),
                });
            }
            col_counts.push(p.cols());
        }
        let cols: usize = col_counts.iter().sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row_slice(r));
            }
        }
        let value = Tensor::new(rows, cols, data)?;
        let mut inputs = Vec::with_capacity(parts.len());
        let mut requires = false;
        for p in parts {
            let (i, r) = self.admit(p)?;
            inputs.push(i);
            requires |= r;
        }
        self.push(Op::ConcatCols(col_counts), inputs, value, requires)
    }

    pub fn slice_cols(&self, x: &Tensor, lo: usize, hi: usize) -> Result<Tensor, TensorError> {
        if lo > hi || hi > x.cols() {
            return Err(TensorError::SliceRange {
                lo,
                hi,
                axis: "cols",
                size: x.cols(),
            });
        }
        let mut data = Vec::with_capacity(x.rows() * (hi - lo));
        for r in 0..x.rows() {
            data.extend_from_slice(&x.row_slice(r)[lo..hi]);
        }
        let value = Tensor::new(x.rows(), hi - lo, data)?;
        let (ix, rx) = self.admit(x)?;
        self.push(Op::SliceCols { lo }, vec![ix], value, rx)
    }

    /// Per-row sums: n x m -> n x 1.
    pub fn row_sums(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let value = Tensor::col((0..x.rows()).map(|r| x.row_slice(r).iter().sum()).collect());
        let (ix, rx) = self.admit(x)?;
        self.push(Op::RowSums, vec![ix], value, rx)
    }

    /// Per-column sums: n x m -> 1 x m.
    pub fn col_sums(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let mut sums = vec![0.0; x.cols()];
        for r in 0..x.rows() {
            for (s, v) in sums.iter_mut().zip(x.row_slice(r)) {
                *s += v;
            }
        }
        let value = Tensor::row(sums);
        let (ix, rx) = self.admit(x)?;
        self.push(Op::ColSums, vec![ix], value, rx)
    }

    pub fn sum_all(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let value = Tensor::scalar(x.data().iter().sum());
        let (ix, rx) = self.admit(x)?;
        self.push(Op::SumAll, vec![ix], value, rx)
    }

    pub fn mean_all(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let value = Tensor::scalar(x.data().iter().sum::<f64>() / x.numel() as f64);
        let (ix, rx) = self.admit(x)?;
        self.push(Op::MeanAll, vec![ix], value, rx)
    }

    /// Normalize each row to zero mean and unit variance.
    pub fn layer_norm_rows(&self, x: &Tensor, eps: f64) -> Result<Tensor, TensorError> {
        let mut value = x.clone();
        value.node = None;
        value.requires_grad = false;
        let cols = x.cols();
        for r in 0..x.rows() {
            let row = &mut value.data_mut()[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
        }
        let (ix, rx) = self.admit(x)?;
        self.push(Op::LayerNormRows(eps), vec![ix], value, rx)
    }

    /// Clamp values into [lo, hi]; gradient passes only where unclamped.
    pub fn clamp(&self, x: &Tensor, lo: f64, hi: f64) -> Result<Tensor, TensorError> {
        let value = x.map(|v| v.clamp(lo, hi));
        let (ix, rx) = self.admit(x)?;
        self.push(Op::Clamp { lo, hi }, vec![ix], value, rx)
    }

    // ── Backward pass ───────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss; returns gradients for every node a
    /// gradient reached, keyed so that [`Gradients::wrt`] works on any tensor
    /// produced by this tape.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients, TensorError> {
        let (tape_id, loss_id) = loss.node.ok_or(TensorError::ForeignTape)?;
        if tape_id != self.id {
            return Err(TensorError::ForeignTape);
        }
        if loss.shape() != [1, 1] {
            return Err(TensorError::NonScalarLoss {
                got: loss.shape().to_vec(),
            });
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss_id] = Some(vec![1.0]);

        for id in (0..=loss_id).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            if node.requires {
                self.propagate(&nodes, node, &grad, &mut grads);
            }
            grads[id] = Some(grad);
        }

        let mut map = HashMap::new();
        for (id, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                let [r, c] = nodes[id].value.shape();
                map.insert(id, Tensor::new(r, c, g)?);
            }
        }
        Ok(Gradients {
            tape_id: self.id,
            map,
        })
    }

    fn propagate(&self, nodes: &[Node], node: &Node, grad: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let acc = |grads: &mut [Option<Vec<f64>>], id: NodeId, delta: Vec<f64>| {
            if !nodes[id].requires {
                return;
            }
            match &mut grads[id] {
                Some(g) => {
                    for (a, d) in g.iter_mut().zip(&delta) {
                        *a += d;
                    }
                }
                slot => *slot = Some(delta),
            }
        };
        let value = &node.value;
        let [out_r, out_c] = value.shape();
        match &node.op {
            Op::Leaf => {}
            Op::Matmul => {
                let a = &nodes[node.inputs[0]].value;
                let b = &nodes[node.inputs[1]].value;
                let (n, k, m) = (a.rows(), a.cols(), b.cols());
                // dA = G * B^T
                let mut da = vec![0.0; n * k];
                for i in 0..n {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..m {
                            s += grad[i * m + j] * b.data()[p * m + j];
                        }
                        da[i * k + p] = s;
                    }
                }
                acc(grads, node.inputs[0], da);
                // dB = A^T * G, accumulated row-wise for contiguous access
                let mut db = vec![0.0; k * m];
                for i in 0..n {
                    let a_row = &a.data()[i * k..(i + 1) * k];
                    let g_row = &grad[i * m..(i + 1) * m];
                    for (p, &av) in a_row.iter().enumerate() {
                        if av == 0.0 {
                            continue;
                        }
                        let db_row = &mut db[p * m..(p + 1) * m];
                        for (d, g) in db_row.iter_mut().zip(g_row) {
                            *d += av * g;
                        }
                    }
                }
                acc(grads, node.inputs[1], db);
            }
            Op::Add => {
                acc(grads, node.inputs[0], grad.to_vec());
                acc(grads, node.inputs[1], grad.to_vec());
            }
            Op::Sub => {
                acc(grads, node.inputs[0], grad.to_vec());
                acc(grads, node.inputs[1], grad.iter().map(|g| -g).collect());
            }
            Op::Mul => {
                let a = &nodes[node.inputs[0]].value;
                let b = &nodes[node.inputs[1]].value;
                acc(
                    grads,
                    node.inputs[0],
                    grad.iter().zip(b.data()).map(|(g, v)| g * v).collect(),
                );
                acc(
                    grads,
                    node.inputs[1],
                    grad.iter().zip(a.data()).map(|(g, v)| g * v).collect(),
                );
            }
            Op::Scale(c) => {
                acc(grads, node.inputs[0], grad.iter().map(|g| g * c).collect());
            }
            Op::ScaleBy => {
                let x = &nodes[node.inputs[0]].value;
                let s = nodes[node.inputs[1]].value.item();
                acc(grads, node.inputs[0], grad.iter().map(|g| g * s).collect());
                let ds: f64 = grad.iter().zip(x.data()).map(|(g, v)| g * v).sum();
                acc(grads, node.inputs[1], vec![ds]);
            }
            Op::AddRows => {
                acc(grads, node.inputs[0], grad.to_vec());
                let mut db = vec![0.0; out_c];
                for r in 0..out_r {
                    for c in 0..out_c {
                        db[c] += grad[r * out_c + c];
                    }
                }
                acc(grads, node.inputs[1], db);
            }
            Op::MulRows => {
                let x = &nodes[node.inputs[0]].value;
                let g_vec = &nodes[node.inputs[1]].value;
                let mut dx = vec![0.0; out_r * out_c];
                let mut dg = vec![0.0; out_c];
                for r in 0..out_r {
                    for c in 0..out_c {
                        let idx = r * out_c + c;
                        dx[idx] = grad[idx] * g_vec.data()[c];
                        dg[c] += grad[idx] * x.data()[idx];
                    }
                }
                acc(grads, node.inputs[0], dx);
                acc(grads, node.inputs[1], dg);
            }
            Op::Sigmoid => {
                let dx = grad
                    .iter()
                    .zip(value.data())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                acc(grads, node.inputs[0], dx);
            }
            Op::Exp => {
                let dx = grad.iter().zip(value.data()).map(|(g, y)| g * y).collect();
                acc(grads, node.inputs[0], dx);
            }
            Op::Log => {
                let x = &nodes[node.inputs[0]].value;
                let dx = grad.iter().zip(x.data()).map(|(g, v)| g / v).collect();
                acc(grads, node.inputs[0], dx);
            }
            Op::Relu => {
                let x = &nodes[node.inputs[0]].value;
                let dx = grad
                    .iter()
                    .zip(x.data())
                    .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                    .collect();
                acc(grads, node.inputs[0], dx);
            }
            Op::LeakyRelu(slope) => {
                let x = &nodes[node.inputs[0]].value;
                let dx = grad
                    .iter()
                    .zip(x.data())
                    .map(|(g, v)| if *v > 0.0 { *g } else { g * slope })
                    .collect();
                acc(grads, node.inputs[0], dx);
            }
            // Softmax and its masked variant share one rule: rows of y are
            // zero outside the mask, which zeroes those gradient entries too.
            Op::SoftmaxRows | Op::MaskedSoftmaxRows => {
                let mut dx = vec![0.0; out_r * out_c];
                for r in 0..out_r {
                    let y = value.row_slice(r);
                    let g = &grad[r * out_c..(r + 1) * out_c];
                    let dot: f64 = y.iter().zip(g).map(|(y, g)| y * g).sum();
                    for c in 0..out_c {
                        dx[r * out_c + c] = y[c] * (g[c] - dot);
                    }
                }
                acc(grads, node.inputs[0], dx);
            }
            Op::Transpose => {
                // out is c x r of input r x c
                let mut dx = vec![0.0; out_r * out_c];
                for i in 0..out_r {
                    for j in 0..out_c {
                        dx[j * out_r + i] = grad[i * out_c + j];
                    }
                }
                acc(grads, node.inputs[0], dx);
            }
            Op::ConcatRows(row_counts) => {
                let mut offset = 0;
                for (part, rc) in node.inputs.iter().zip(row_counts) {
                    let len = rc * out_c;
                    acc(grads, *part, grad[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            Op::SliceRows { lo } => {
                let x = &nodes[node.inputs[0]].value;
                let mut dx = vec![0.0; x.numel()];
                dx[lo * out_c..lo * out_c + grad.len()].copy_from_slice(grad);
                acc(grads, node.inputs[0], dx);
            }
            Op::ConcatCols(col_counts) => {
                let mut offset = 0;
                for (part, cc) in node.inputs.iter().zip(col_counts) {
                    let mut dp = vec![0.0; out_r * cc];
                    for r in 0..out_r {
                        dp[r * cc..(r + 1) * cc]
                            .copy_from_slice(&grad[r * out_c + offset..r * out_c + offset + cc]);
                    }
                    acc(grads, *part, dp);
                    offset += cc;
                }
            }
            Op::SliceCols { lo } => {
                let x = &nodes[node.inputs[0]].value;
                let mut dx = vec![0.0; x.numel()];
                let in_c = x.cols();
                for r in 0..out_r {
                    dx[r * in_c + lo..r * in_c + lo + out_c]
                        .copy_from_slice(&grad[r * out_c..(r + 1) * out_c]);
                }
                acc(grads, node.inputs[0], dx);
            }
            Op::RowSums => {
                let x = &nodes[node.inputs[0]].value;
                let in_c = x.cols();
                let mut dx = vec![0.0; x.numel()];
                for r in 0..x.rows() {
                    for c in 0..in_c {
                        dx[r * in_c + c] = grad[r];
                    }
                }
                acc(grads, node.inputs[0], dx);
            }
            Op::ColSums => {
                let x = &nodes[node.inputs[0]].value;
                let in_c = x.cols();
                let mut dx = vec![0.0; x.numel()];
                for r in 0..x.rows() {
                    dx[r * in_c..(r + 1) * in_c].copy_from_slice(grad);
                }
                acc(grads, node.inputs[0], dx);
            }
            Op::SumAll => {
                let x = &nodes[node.inputs[0]].value;
                acc(grads, node.inputs[0], vec![grad[0]; x.numel()]);
            }
            Op::MeanAll => {
                let x = &nodes[node.inputs[0]].value;
                let n = x.numel() as f64;
                acc(grads, node.inputs[0], vec![grad[0] / n; x.numel()]);
            }
            Op::LayerNormRows(eps) => {
                let x = &nodes[node.inputs[0]].value;
                let mut dx = vec![0.0; x.numel()];
                let cols = out_c as f64;
                for r in 0..out_r {
                    let xs = x.row_slice(r);
                    let ys = value.row_slice(r);
                    let gs = &grad[r * out_c..(r + 1) * out_c];
                    let mean = xs.iter().sum::<f64>() / cols;
                    let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols;
                    let inv = 1.0 / (var + eps).sqrt();
                    let g_mean = gs.iter().sum::<f64>() / cols;
                    let gy_mean = gs.iter().zip(ys).map(|(g, y)| g * y).sum::<f64>() / cols;
                    for c in 0..out_c {
                        dx[r * out_c + c] = inv * (gs[c] - g_mean - ys[c] * gy_mean);
                    }
                }
                acc(grads, node.inputs[0], dx);
            }
            Op::Clamp { lo, hi } => {
                let x = &nodes[node.inputs[0]].value;
                let dx = grad
                    .iter()
                    .zip(x.data())
                    .map(|(g, v)| if *v >= *lo && *v <= *hi { *g } else { 0.0 })
                    .collect();
                acc(grads, node.inputs[0], dx);
            }
        }
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Matmul => "matmul",
        Op::Add => "add",
        Op::Sub => "sub",
        Op::Mul => "mul",
        Op::Scale(_) => "scale",
        Op::ScaleBy => "scale_by",
        Op::AddRows => "add_rows",
        Op::MulRows => "mul_rows",
        Op::Sigmoid => "sigmoid",
        Op::Exp => "exp",
        Op::Log => "log",
        Op::Relu => "relu",
        Op::LeakyRelu(_) => "leaky_relu",
        Op::SoftmaxRows => "softmax_rows",
        Op::MaskedSoftmaxRows => "masked_softmax_rows",
        Op::Transpose => "transpose",
        Op::ConcatRows(_) => "concat_rows",
        Op::SliceRows { .. } => "slice_rows",
        Op::ConcatCols(_) => "concat_cols",
        Op::SliceCols { .. } => "slice_cols",
        Op::RowSums => "row_sums",
        Op::ColSums => "col_sums",
        Op::SumAll => "sum_all",
        Op::MeanAll => "mean_all",
        Op::LayerNormRows(_) => "layer_norm_rows",
        Op::Clamp { .. } => "clamp",
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    tape_id: u64,
    map: HashMap<NodeId, Tensor>,
}

impl Gradients {
    /// Gradient with respect to `t`, if one reached it.
    pub fn wrt(&self, t: &Tensor) -> Option<&Tensor> {
        match t.node {
            Some((tape_id, node)) if tape_id == self.tape_id => self.map.get(&node),
            _ => None,
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
