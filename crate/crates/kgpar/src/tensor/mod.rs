//! Minimal dense-tensor library with reverse-mode automatic differentiation.
//!
//! Every learnable component in this crate is built on [`Tensor`] and [`Tape`].
//! Tensors are two-dimensional, row-major, 64-bit. Operations routed through a
//! [`Tape`] are recorded and can be differentiated with [`Tape::backward`];
//! the plain methods on [`Tensor`] evaluate without recording.

mod adamw;
mod checkpoint;
mod tape;

pub use adamw::{AdamWHyper, AdamWState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use tape::{Gradients, Tape};

use thiserror::Error;

/// Identifier of a recorded node on a tape.
pub type NodeId = usize;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} does not match data length {len}")]
    ShapeDataMismatch { shape: Vec<usize>, len: usize },
    #[error("dimension mismatch: {op} got {lhs:?} and {rhs:?}")]
    DimMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected {expected}, got shape {got:?}")]
    BadShape {
        op: &'static str,
        expected: &'static str,
        got: Vec<usize>,
    },
    #[error("non-finite value produced by {op} (checked mode)")]
    NonFinite { op: &'static str },
    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },
    #[error("tensor does not belong to this tape")]
    ForeignTape,
    #[error("backward requires a scalar loss, got shape {got:?}")]
    NonScalarLoss { got: Vec<usize> },
    #[error("optimizer step refused: {0}")]
    OptimStep(String),
    #[error("slice [{lo}, {hi}) out of range for {axis} of size {size}")]
    SliceRange {
        lo: usize,
        hi: usize,
        axis: &'static str,
        size: usize,
    },
}

/// Dense 2-D matrix of `f64` in row-major order.
///
/// `node` links the tensor to the tape that produced it; plain tensors
/// (datasets, frozen features) carry `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 2],
    data: Vec<f64>,
    requires_grad: bool,
    pub(crate) node: Option<(u64, NodeId)>,
}

impl Tensor {
    /// Build an `rows x cols` tensor from row-major data.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        if rows * cols != data.len() {
            return Err(TensorError::ShapeDataMismatch {
                shape: vec![rows, cols],
                len: data.len(),
            });
        }
        Ok(Tensor {
            shape: [rows, cols],
            data,
            requires_grad: false,
            node: None,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            shape: [rows, cols],
            data: vec![0.0; rows * cols],
            requires_grad: false,
            node: None,
        }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Tensor {
            shape: [rows, cols],
            data: vec![1.0; rows * cols],
            requires_grad: false,
            node: None,
        }
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            shape: [rows, cols],
            data: vec![value; rows * cols],
            requires_grad: false,
            node: None,
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// 1 x 1 scalar tensor.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: [1, 1],
            data: vec![value],
            requires_grad: false,
            node: None,
        }
    }

    /// 1 x n row vector.
    pub fn row(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor {
            shape: [1, n],
            data,
            requires_grad: false,
            node: None,
        }
    }

    /// n x 1 column vector.
    pub fn col(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor {
            shape: [n, 1],
            data,
            requires_grad: false,
            node: None,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(TensorError::ShapeDataMismatch {
                    shape: vec![r, c],
                    len: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Tensor::new(r, c, data)
    }

    /// Mark this tensor as a trainable leaf when registered on a tape.
    pub fn requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn wants_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.shape[0] && c < self.shape[1]);
        self.data[r * self.shape[1] + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        debug_assert!(r < self.shape[0] && c < self.shape[1]);
        self.data[r * self.shape[1] + c] = value;
    }

    /// Contents of row `r` as a slice.
    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    /// Scalar value of a 1 x 1 tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Tensor {
        let [r, c] = self.shape;
        let mut out = Tensor::zeros(c, r);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        out
    }

    /// Plain (unrecorded) matrix product.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        if self.cols() != rhs.rows() {
            return Err(TensorError::DimMismatch {
                op: "matmul",
                lhs: self.shape.to_vec(),
                rhs: rhs.shape.to_vec(),
            });
        }
        let (n, k, m) = (self.rows(), self.cols(), rhs.cols());
        let mut out = Tensor::zeros(n, m);
        matmul_into(&self.data, &rhs.data, &mut out.data, n, k, m);
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let mut out = self.clone();
        out.node = None;
        out.requires_grad = false;
        for v in &mut out.data {
            *v = f(*v);
        }
        out
    }

    pub fn add_plain(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        self.zip(rhs, "add", |a, b| a + b)
    }

    pub fn sub_plain(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        self.zip(rhs, "sub", |a, b| a - b)
    }

    pub fn scale_plain(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    fn zip(
        &self,
        rhs: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, TensorError> {
        if self.shape != rhs.shape {
            return Err(TensorError::DimMismatch {
                op,
                lhs: self.shape.to_vec(),
                rhs: rhs.shape.to_vec(),
            });
        }
        let mut out = self.clone();
        out.node = None;
        out.requires_grad = false;
        for (o, b) in out.data.iter_mut().zip(&rhs.data) {
            *o = f(*o, *b);
        }
        Ok(out)
    }

    /// Euclidean norm of the whole tensor.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let a_row = &a[i * k..(i + 1) * k];
        let o_row = &mut out[i * m..(i + 1) * m];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * m..(p + 1) * m];
            for j in 0..m {
                o_row[j] += av * b_row[j];
            }
        }
    }
}

/// Numerically stable logistic function, clamped so the result stays
/// strictly inside (0, 1) even where the exponential saturates in f64.
pub fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Cosine similarity of two equal-length vectors; zero if either has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let i2 = Tensor::eye(2);
        let a = Tensor::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(i2.matmul(&a).unwrap().data(), a.data());
    }

    #[test]
    fn matmul_zero_annihilates() {
        let z = Tensor::zeros(2, 3);
        let b = Tensor::new(3, 4, (0..12).map(|v| v as f64).collect()).unwrap();
        let out = z.matmul(&b).unwrap();
        assert_eq!(out.shape(), [2, 4]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_hand_computed() {
        let a = Tensor::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(2, 1, vec![5.0, 6.0]).unwrap();
        let out = a.matmul(&b).unwrap();
        assert_eq!(out.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_mismatch_reports_both_shapes() {
        let a = Tensor::zeros(2, 3);
        let b = Tensor::zeros(4, 2);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn shape_data_mismatch_rejected() {
        assert!(Tensor::new(2, 2, vec![1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn matmul_associative_at_tolerance() {
        // Entries bounded by 1; (AB)C vs A(BC) within 1e-9.
        let mut seed = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            (seed >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let a = Tensor::new(3, 4, (0..12).map(|_| next()).collect()).unwrap();
        let b = Tensor::new(4, 2, (0..8).map(|_| next()).collect()).unwrap();
        let c = Tensor::new(2, 5, (0..10).map(|_| next()).collect()).unwrap();
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        for (l, r) in left.data().iter().zip(right.data()) {
            assert!((l - r).abs() < 1e-9);
        }
    }

    #[test]
    fn sigmoid_range_and_symmetry() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(50.0) - 1.0).abs() < 1e-12);
        for &x in &[-30.0, -1.0, 0.3, 4.0, 700.0, -700.0] {
            let s = sigmoid(x);
            assert!(s > 0.0 && s < 1.0, "sigmoid({x}) = {s} not in (0,1)");
        }
    }
}
