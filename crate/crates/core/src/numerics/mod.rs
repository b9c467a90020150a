//! Dense row-major matrices and the handful of kernels the flow needs:
//! matrix products (delegated to `matrixmultiply`), linear layers with
//! hand-derived gradients, ReLU, Adam, and a finite-difference gradient check.

mod adam;
mod gradcheck;
mod linear;
mod matrix;

pub use adam::{adam_step, AdamState};
pub use gradcheck::finite_diff_check;
pub use linear::{relu_backward, relu_forward, LinearLayer};
pub use matrix::{gemm, Matrix};

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

/// Floating-point element type for matrices and models. Models are trained
/// in `f32`; `f64` instances exist for gradient and Jacobian oracles.
pub trait Real:
    Float + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// Lossy conversion from `f64`.
    fn cast(x: f64) -> Self;
    /// Exact widening to `f64`.
    fn widen(self) -> f64;

    /// `C = alpha * A * B + beta * C` on strided views.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-aliasing views of the
    /// stated shapes, exactly as `matrixmultiply::sgemm` requires.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    fn cast(x: f64) -> Self {
        x as f32
    }
    fn widen(self) -> f64 {
        self as f64
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    fn cast(x: f64) -> Self {
        x
    }
    fn widen(self) -> f64 {
        self
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}
