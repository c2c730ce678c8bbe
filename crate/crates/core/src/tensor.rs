//! Dense row-major f64 tensors (rank 1 or 2) and the shared matrix kernels.

use alloc::vec;
use alloc::vec::Vec;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected scalar, got shape {shape:?}")]
    NonScalarLoss { op: &'static str, shape: Vec<usize> },
    #[error("{op}: non-finite value encountered")]
    NonFinite { op: &'static str },
    #[error("{op}: {msg}")]
    Contract { op: &'static str, msg: &'static str },
}

/// Dense numeric array, row-major, rank 1 or 2.
///
/// A rank-1 tensor of length `n` behaves as a `1×n` row in matrix contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert!(
            !shape.is_empty() && shape.len() <= 2,
            "tensor rank must be 1 or 2, got {:?}",
            shape
        );
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor::new(shape, vec![0.0; len])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::new(vec![1], vec![value])
    }

    pub fn with_grad(mut self, requires_grad: bool) -> Self {
        self.set_requires_grad(requires_grad);
        self
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
        if !requires_grad {
            self.grad = None;
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Accumulate a gradient; ignored unless `requires_grad` is set.
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        if !self.requires_grad {
            return;
        }
        assert_eq!(g.len(), self.data.len());
        match &mut self.grad {
            Some(acc) => {
                for (a, x) in acc.iter_mut().zip(g) {
                    *a += x;
                }
            }
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a rank-2 tensor at (row, col).
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let c = self.cols();
        &self.data[row * c..(row + 1) * c]
    }
}

/// Matrix kernels shared by the tape and the tape-free evaluation path.
///
/// All loops keep the innermost index contiguous so the compiler can
/// vectorize them.
pub mod kernels {
    /// `out += a · b` for row-major `a: m×k`, `b: k×n`, `out: m×n`.
    pub fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
        debug_assert_eq!(a.len(), m * k);
        debug_assert_eq!(b.len(), k * n);
        debug_assert_eq!(out.len(), m * n);
        for i in 0..m {
            let a_row = &a[i * k..(i + 1) * k];
            let out_row = &mut out[i * n..(i + 1) * n];
            for (a_ik, b_row) in a_row.iter().zip(b.chunks_exact(n)) {
                let a_ik = *a_ik;
                if a_ik == 0.0 {
                    continue;
                }
                for (o, b_kj) in out_row.iter_mut().zip(b_row) {
                    *o += a_ik * b_kj;
                }
            }
        }
    }

    /// `out += c · bᵀ` for `c: m×n`, `b: k×n`, `out: m×k` (matmul backward, lhs).
    pub fn matmul_acc_bt(c: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
        debug_assert_eq!(c.len(), m * n);
        debug_assert_eq!(b.len(), k * n);
        debug_assert_eq!(out.len(), m * k);
        for i in 0..m {
            let c_row = &c[i * n..(i + 1) * n];
            let out_row = &mut out[i * k..(i + 1) * k];
            for (o, b_row) in out_row.iter_mut().zip(b.chunks_exact(n)) {
                let mut acc = 0.0;
                for (c_ij, b_kj) in c_row.iter().zip(b_row) {
                    acc += c_ij * b_kj;
                }
                *o += acc;
            }
        }
    }

    /// `out += aᵀ · c` for `a: m×k`, `c: m×n`, `out: k×n` (matmul backward, rhs).
    pub fn matmul_acc_at(a: &[f64], c: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
        debug_assert_eq!(a.len(), m * k);
        debug_assert_eq!(c.len(), m * n);
        debug_assert_eq!(out.len(), k * n);
        for i in 0..m {
            let a_row = &a[i * k..(i + 1) * k];
            let c_row = &c[i * n..(i + 1) * n];
            for (a_ik, out_row) in a_row.iter().zip(out.chunks_exact_mut(n)) {
                let a_ik = *a_ik;
                if a_ik == 0.0 {
                    continue;
                }
                for (o, c_ij) in out_row.iter_mut().zip(c_row) {
                    *o += a_ik * c_ij;
                }
            }
        }
    }

    pub fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + libm::exp(-x))
    }

    pub fn tanh(x: f64) -> f64 {
        libm::tanh(x)
    }
}
