use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{relu_backward, relu_forward, LinearLayer, Matrix, Real};

/// Bound on the coupling log-scale: `s = SCALE_BOUND · tanh(raw_s)`.
pub const SCALE_BOUND: f64 = 2.0;

/// Affine coupling over contiguous halves. The pass half (`⌈D/2⌉`
/// coordinates) is copied through and conditions a two-layer ReLU MLP that
/// emits `(raw_s, t)` for the transformed half:
/// `y_B = x_B ⊙ exp(s) + t`, `log|det| = Σ s`.
///
/// Even parity passes the leading coordinates, odd parity the trailing ones.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineCoupling<T = f32> {
    dim: usize,
    parity: usize,
    pub hidden: LinearLayer<T>,
    pub output: LinearLayer<T>,
}

/// Intermediates kept for backpropagation.
#[derive(Debug, Clone)]
pub struct CouplingCache<T> {
    pass: Matrix<T>,
    transformed_in: Matrix<T>,
    pre_activation: Matrix<T>,
    activation: Matrix<T>,
    raw_scale: Matrix<T>,
}

impl<T: Real> AffineCoupling<T> {
    /// Random hidden layer, zero output layer: starts as the identity map.
    pub fn new<R: Rng + ?Sized>(dim: usize, parity: usize, hidden: usize, rng: &mut R) -> Self {
        let (pass, transformed) = Self::ranges(dim, parity);
        Self {
            dim,
            parity: parity % 2,
            hidden: LinearLayer::init_uniform(pass.len(), hidden, rng),
            output: LinearLayer::zeros(hidden, 2 * transformed.len()),
        }
    }

    pub fn from_parts(
        dim: usize,
        parity: usize,
        hidden: LinearLayer<T>,
        output: LinearLayer<T>,
    ) -> Result<Self> {
        let (pass, transformed) = Self::ranges(dim, parity);
        if hidden.input_dim() != pass.len()
            || output.input_dim() != hidden.output_dim()
            || output.output_dim() != 2 * transformed.len()
        {
            return Err(Error::DimensionMismatch {
                context: "coupling network shape",
                expected: 2 * transformed.len(),
                actual: output.output_dim(),
            });
        }
        Ok(Self {
            dim,
            parity: parity % 2,
            hidden,
            output,
        })
    }

    /// `(pass, transformed)` coordinate ranges for a given parity.
    pub fn ranges(dim: usize, parity: usize) -> (Range<usize>, Range<usize>) {
        let pass_len = dim.div_ceil(2);
        if parity.is_multiple_of(2) {
            (0..pass_len, pass_len..dim)
        } else {
            (dim - pass_len..dim, 0..dim - pass_len)
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn parity(&self) -> usize {
        self.parity
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden.output_dim()
    }

    pub fn transformed_range(&self) -> Range<usize> {
        Self::ranges(self.dim, self.parity).1
    }

    fn condition(&self, pass: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>)> {
        let pre = self.hidden.forward(pass)?;
        let act = relu_forward(&pre);
        let out = self.output.forward(&act)?;
        Ok((pre, act, out))
    }

    fn bounded_scale(raw: T) -> T {
        T::cast(SCALE_BOUND) * raw.tanh()
    }

    /// Returns `(y, per-row log|det|, cache)`.
    pub fn forward(&self, x: &Matrix<T>) -> Result<(Matrix<T>, Vec<f64>, CouplingCache<T>)> {
        self.check(x.cols())?;
        let (pass_r, trans_r) = Self::ranges(self.dim, self.parity);
        let nb = trans_r.len();
        let pass = x.slice_cols(pass_r);
        let xb = x.slice_cols(trans_r.clone());
        let (pre, act, out) = self.condition(&pass)?;
        let mut y = x.clone();
        let mut yb = Matrix::zeros(x.rows(), nb);
        let mut log_det = vec![0.0f64; x.rows()];
        let raw_scale = out.slice_cols(0..nb);
        for (r, ld) in log_det.iter_mut().enumerate() {
            let o = out.row(r);
            let xr = xb.row(r);
            let mut acc = 0.0f64;
            for (j, v) in yb.row_mut(r).iter_mut().enumerate() {
                let s = Self::bounded_scale(o[j]);
                acc += s.widen();
                *v = xr[j] * s.exp() + o[nb + j];
            }
            *ld = acc;
        }
        y.write_cols(trans_r.start, &yb);
        let cache = CouplingCache {
            pass,
            transformed_in: xb,
            pre_activation: pre,
            activation: act,
            raw_scale,
        };
        Ok((y, log_det, cache))
    }

    pub fn inverse(&self, y: &Matrix<T>) -> Result<Matrix<T>> {
        self.check(y.cols())?;
        let (pass_r, trans_r) = Self::ranges(self.dim, self.parity);
        let nb = trans_r.len();
        let pass = y.slice_cols(pass_r);
        let yb = y.slice_cols(trans_r.clone());
        let (_, _, out) = self.condition(&pass)?;
        let mut xb = Matrix::zeros(y.rows(), nb);
        for r in 0..y.rows() {
            let o = out.row(r);
            let yr = yb.row(r);
            for (j, v) in xb.row_mut(r).iter_mut().enumerate() {
                let s = Self::bounded_scale(o[j]);
                *v = (yr[j] - o[nb + j]) * (-s).exp();
            }
        }
        let mut x = y.clone();
        x.write_cols(trans_r.start, &xb);
        Ok(x)
    }

    /// Backpropagate; `logdet_weights[r]` is the loss sensitivity to row `r`'s log-det.
    pub fn backward(
        &mut self,
        cache: &CouplingCache<T>,
        grad_y: &Matrix<T>,
        logdet_weights: &[f64],
    ) -> Result<Matrix<T>> {
        self.check(grad_y.cols())?;
        let (pass_r, trans_r) = Self::ranges(self.dim, self.parity);
        let nb = trans_r.len();
        let rows = grad_y.rows();
        if logdet_weights.len() != rows {
            return Err(Error::DimensionMismatch {
                context: "coupling log-det weights",
                expected: rows,
                actual: logdet_weights.len(),
            });
        }
        let g_yb = grad_y.slice_cols(trans_r.clone());
        let mut g_xb = Matrix::zeros(rows, nb);
        let mut g_out = Matrix::zeros(rows, 2 * nb);
        let bound = T::cast(SCALE_BOUND);
        for (r, &weight) in logdet_weights.iter().enumerate() {
            let raw = cache.raw_scale.row(r);
            let xb = cache.transformed_in.row(r);
            let gy = g_yb.row(r);
            let w = T::cast(weight);
            let go = g_out.row_mut(r);
            let mut gx = vec![T::zero(); nb];
            for j in 0..nb {
                let th = raw[j].tanh();
                let e = (bound * th).exp();
                gx[j] = gy[j] * e;
                let g_s = gy[j] * xb[j] * e + w;
                go[j] = g_s * bound * (T::one() - th * th);
                go[nb + j] = gy[j];
            }
            g_xb.row_mut(r).copy_from_slice(&gx);
        }
        let g_act = self.output.backward(&cache.activation, &g_out)?;
        let g_pre = relu_backward(&cache.pre_activation, &g_act)?;
        let g_pass_net = self.hidden.backward(&cache.pass, &g_pre)?;
        let mut grad_x = grad_y.clone();
        let mut g_pass = grad_y.slice_cols(pass_r.clone());
        for (a, &b) in g_pass.as_mut_slice().iter_mut().zip(g_pass_net.as_slice()) {
            *a = *a + b;
        }
        grad_x.write_cols(pass_r.start, &g_pass);
        grad_x.write_cols(trans_r.start, &g_xb);
        Ok(grad_x)
    }

    pub fn zero_grad(&mut self) {
        self.hidden.zero_grad();
        self.output.zero_grad();
    }

    fn check(&self, cols: usize) -> Result<()> {
        if cols != self.dim {
            return Err(Error::DimensionMismatch {
                context: "coupling input",
                expected: self.dim,
                actual: cols,
            });
        }
        Ok(())
    }
}
