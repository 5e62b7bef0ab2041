//! Dense row-major tensors over `f64` and a reverse-mode autodiff tape.
//!
//! [`Tensor`] is a plain value type: a shape plus a flat buffer, with the
//! handful of eager operations the non-differentiated parts of the crate
//! need (matrix products for relevance propagation, transposes, clamps).
//! Differentiable computation goes through [`Tape`], which records every
//! operation and replays them in reverse to produce exact gradients.
//!
//! Everything is `f64`. Finite-difference checks against the tape sit at
//! tolerances that 32-bit floats cannot reach, and at desk scale the memory
//! cost is irrelevant.

mod tape;

pub use tape::{Tape, Var, LAYER_NORM_EPS};

use thiserror::Error;

/// Errors produced by tensor construction, eager math, or the tape.
#[derive(Debug, Error)]
pub enum TensorError {
    /// Shapes passed to an operation do not line up.
    #[error("{op}: shape mismatch ({details})")]
    ShapeMismatch {
        /// Name of the operation that rejected its inputs.
        op: &'static str,
        /// Human-readable description of the offending shapes.
        details: String,
    },
    /// An operation produced a NaN or infinity.
    ///
    /// The tape treats this as an error state rather than letting the value
    /// propagate silently; training code surfaces it as divergence.
    #[error("{op}: produced a non-finite value")]
    NonFinite {
        /// Name of the operation whose output failed the finiteness check.
        op: &'static str,
    },
    /// `backward` was called on a tape that has already been differentiated.
    #[error("backward: tape already consumed; rebuild the forward pass before differentiating again")]
    StaleTape,
    /// `backward` seeds d(out)/d(out) = 1 and therefore needs a scalar root.
    #[error("backward: output must be a scalar, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
}

/// A dense row-major tensor of `f64` values.
///
/// Rank 1, 2, and 3 tensors cover everything in the crate: vectors (biases),
/// matrices (activations, weights), and stacked per-head attention maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from a shape and flat row-major data.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.is_empty() {
            return Err(TensorError::ShapeMismatch {
                op: "new",
                details: format!("shape {:?} needs {} values, got {}", shape, numel, data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    /// A tensor of zeros.
    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self { shape, data: vec![0.0; numel] }
    }

    /// A tensor with every element set to `value`.
    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Self { shape, data: vec![value; numel] }
    }

    /// A rank-1 scalar wrapper, shape `[1]`.
    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    /// The `n`-by-`n` identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Samples every element uniformly from `[-limit, limit)`.
    pub fn uniform<R: rand::Rng>(shape: Vec<usize>, limit: f64, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.random_range(-limit..limit)).collect();
        Self { shape, data }
    }

    /// The tensor's shape.
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Number of elements.
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Flat row-major view of the data.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable flat row-major view of the data.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Row count of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2, "rows() on rank-{} tensor", self.shape.len());
        self.shape[0]
    }

    /// Column count of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2, "cols() on rank-{} tensor", self.shape.len());
        self.shape[1]
    }

    /// Element accessor for rank-2 tensors.
    pub fn at2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    /// Element setter for rank-2 tensors.
    pub fn set2(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.shape[1] + c] = v;
    }

    /// Element accessor for rank-3 tensors.
    pub fn at3(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    /// Element setter for rank-3 tensors.
    pub fn set3(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[(i * self.shape[1] + j) * self.shape[2] + k] = v;
    }

    /// True when every element is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check2(&self, op: &'static str) -> Result<(), TensorError> {
        if self.shape.len() == 2 {
            Ok(())
        } else {
            Err(TensorError::ShapeMismatch {
                op,
                details: format!("expected rank 2, got shape {:?}", self.shape),
            })
        }
    }

    /// Eager matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.check2("matmul")?;
        other.check2("matmul")?;
        if self.shape[1] != other.shape[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                details: format!("{:?} x {:?}", self.shape, other.shape),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = Tensor::zeros(vec![m, n]);
        matmul_into(&self.data, &other.data, &mut out.data, m, k, n);
        Ok(out)
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose2(&self) -> Result<Tensor, TensorError> {
        self.check2("transpose2")?;
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = Tensor::zeros(vec![n, m]);
        for r in 0..m {
            for c in 0..n {
                out.data[c * m + r] = self.data[r * n + c];
            }
        }
        Ok(out)
    }

    /// Eager elementwise sum of two tensors with identical shape.
    pub fn add(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                details: format!("{:?} vs {:?}", self.shape, other.shape),
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self { shape: self.shape.clone(), data })
    }

    /// Eager scalar multiple.
    pub fn scale(&self, factor: f64) -> Tensor {
        let data = self.data.iter().map(|v| v * factor).collect();
        Self { shape: self.shape.clone(), data }
    }

    /// Elementwise `max(v, floor)`.
    pub fn clamp_min(&self, floor: f64) -> Tensor {
        let data = self.data.iter().map(|v| v.max(floor)).collect();
        Self { shape: self.shape.clone(), data }
    }
}

/// `out += a (m x k) . b (k x n)`, all row-major. `out` must be zeroed by the caller.
fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for r in 0..m {
        for l in 0..k {
            let av = a[r * k + l];
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            let orow = &mut out[r * n..(r + 1) * n];
            for c in 0..n {
                orow[c] += av * brow[c];
            }
        }
    }
}
