use crate::error::{Error, Result};
use crate::numerics::{Matrix, Real};

/// Per-dimension affine map `y = x·exp(log_scale) + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActNorm<T = f32> {
    pub log_scale: Vec<T>,
    pub bias: Vec<T>,
    pub initialized: bool,
    pub grad_log_scale: Vec<T>,
    pub grad_bias: Vec<T>,
}

impl<T: Real> ActNorm<T> {
    /// Uninitialized layer; [`ActNorm::initialize`] must run before use.
    pub fn new(dim: usize) -> Self {
        Self {
            log_scale: vec![T::zero(); dim],
            bias: vec![T::zero(); dim],
            initialized: false,
            grad_log_scale: vec![T::zero(); dim],
            grad_bias: vec![T::zero(); dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            initialized: true,
            ..Self::new(dim)
        }
    }

    pub fn from_parts(log_scale: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if log_scale.len() != bias.len() {
            return Err(Error::DimensionMismatch {
                context: "actnorm parameters",
                expected: log_scale.len(),
                actual: bias.len(),
            });
        }
        let dim = bias.len();
        Ok(Self {
            log_scale,
            bias,
            initialized: true,
            grad_log_scale: vec![T::zero(); dim],
            grad_bias: vec![T::zero(); dim],
        })
    }

    pub fn dim(&self) -> usize {
        self.bias.len()
    }

    /// Log-determinant, identical for every input.
    pub fn log_det(&self) -> f64 {
        self.log_scale.iter().map(|s| s.widen()).sum()
    }

    /// Data-dependent initialization: afterwards `batch` maps to per-dimension
    /// zero mean and unit (population) variance. `block` is only used in errors.
    pub fn initialize(&mut self, batch: &Matrix<T>, block: usize) -> Result<()> {
        self.check(batch.cols())?;
        if batch.rows() < 2 {
            return Err(Error::InvalidArgument(format!(
                "actnorm initialization needs at least 2 rows, got {}",
                batch.rows()
            )));
        }
        let n = batch.rows() as f64;
        let mean: Vec<f64> = batch.column_sums().into_iter().map(|s| s / n).collect();
        let mut var = vec![0.0f64; self.dim()];
        for r in batch.iter_rows() {
            for ((v, &x), &m) in var.iter_mut().zip(r).zip(&mean) {
                let d = x.widen() - m;
                *v += d * d;
            }
        }
        for (dim, v) in var.iter().enumerate() {
            let std = (v / n).sqrt();
            if std <= 0.0 || !std.is_finite() {
                return Err(Error::ZeroVariance { block, dim });
            }
            self.log_scale[dim] = T::cast(-std.ln());
            self.bias[dim] = T::cast(-mean[dim] / std);
        }
        self.initialized = true;
        Ok(())
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.check(x.cols())?;
        let scale: Vec<T> = self.log_scale.iter().map(|s| s.exp()).collect();
        let mut y = x.clone();
        for i in 0..y.rows() {
            for ((v, &s), &b) in y.row_mut(i).iter_mut().zip(&scale).zip(&self.bias) {
                *v = *v * s + b;
            }
        }
        Ok(y)
    }

    pub fn inverse(&self, y: &Matrix<T>) -> Result<Matrix<T>> {
        self.check(y.cols())?;
        let inv_scale: Vec<T> = self.log_scale.iter().map(|s| (-*s).exp()).collect();
        let mut x = y.clone();
        for i in 0..x.rows() {
            for ((v, &s), &b) in x.row_mut(i).iter_mut().zip(&inv_scale).zip(&self.bias) {
                *v = (*v - b) * s;
            }
        }
        Ok(x)
    }

    /// Backpropagate through the layer given its input `x`. `logdet_weight`
    /// is the summed loss sensitivity to the per-sample log-determinants.
    pub fn backward(
        &mut self,
        x: &Matrix<T>,
        grad_y: &Matrix<T>,
        logdet_weight: f64,
    ) -> Result<Matrix<T>> {
        self.check(x.cols())?;
        let d = self.dim();
        let scale: Vec<T> = self.log_scale.iter().map(|s| s.exp()).collect();
        let mut g_scale = vec![0.0f64; d];
        let mut g_bias = vec![0.0f64; d];
        let mut grad_x = grad_y.clone();
        for i in 0..x.rows() {
            let xr = x.row(i);
            let gr = grad_y.row(i);
            for j in 0..d {
                let g = gr[j].widen();
                g_bias[j] += g;
                g_scale[j] += g * xr[j].widen() * scale[j].widen();
            }
            for (gx, &s) in grad_x.row_mut(i).iter_mut().zip(&scale) {
                *gx = *gx * s;
            }
        }
        for j in 0..d {
            self.grad_log_scale[j] = self.grad_log_scale[j] + T::cast(g_scale[j] + logdet_weight);
            self.grad_bias[j] = self.grad_bias[j] + T::cast(g_bias[j]);
        }
        Ok(grad_x)
    }

    pub fn zero_grad(&mut self) {
        self.grad_log_scale.iter_mut().for_each(|g| *g = T::zero());
        self.grad_bias.iter_mut().for_each(|g| *g = T::zero());
    }

    fn check(&self, cols: usize) -> Result<()> {
        if cols != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "actnorm input",
                expected: self.dim(),
                actual: cols,
            });
        }
        Ok(())
    }
}
