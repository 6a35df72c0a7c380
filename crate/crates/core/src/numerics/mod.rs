//! Dense tensors, a recording tape for reverse-mode gradients, and AdamW.
//!
//! Everything is generic over [`Real`] so the same graph-building code runs in
//! `f32` for training and in `f64` when checking gradients numerically.

mod adamw;
mod tape;
mod tensor;

pub use adamw::{AdamW, AdamWConfig};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Param, ParamStore, Tensor};

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NumericsError {
    #[error("shape {shape:?} needs {expected} values, got {actual}")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("variable is not part of the recorded graph")]
    NotInGraph,
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("optimizer state does not match parameter `{0}`")]
    StateMismatch(String),
    #[error("learning rate must be positive, got {0}")]
    InvalidLearningRate(f64),
}

/// Floating-point element type usable on a [`Tape`].
pub trait Real:
    Float
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + Default
    + Debug
    + Display
    + Sum
    + Send
    + Sync
    + 'static
{
    fn from_f64(value: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = alpha * a @ b + beta * c` on strided row/column layouts.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            #[inline]
            fn from_f64(value: f64) -> Self {
                value as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                let extent = |rows: usize, cols: usize, rs: isize, cs: isize| {
                    if rows == 0 || cols == 0 {
                        0
                    } else {
                        (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
                    }
                };
                assert!(
                    a.len() >= extent(m, k, rsa, csa),
                    "gemm: lhs buffer too small"
                );
                assert!(
                    b.len() >= extent(k, n, rsb, csb),
                    "gemm: rhs buffer too small"
                );
                assert!(
                    c.len() >= extent(m, n, rsc, csc),
                    "gemm: output buffer too small"
                );
                // SAFETY: strides are non-negative and every buffer was checked to
                // cover the addressed extent above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Row-major `a[m,k] @ b[k,n]` (or `a @ b^T` with `b[n,k]` when `trans_b`).
pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, trans_b: bool) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a,
        k as isize,
        1,
        b,
        rsb,
        csb,
        T::zero(),
        &mut out,
        n as isize,
        1,
    );
    out
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        assert_eq!(matmul(&a, &b, 2, 2, 2, false), vec![19.0, 22.0, 43.0, 50.0]);
        assert_eq!(matmul(&a, &b, 2, 2, 2, true), vec![17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0f32), 0.0);
        assert_eq!(sigmoid(1000.0f32), 1.0);
        assert!((sigmoid(0.0f64) - 0.5).abs() < 1e-15);
    }
}
