use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Real};
use crate::parallel;

const SOLVE_ROW_CHUNK: usize = 64;

/// Invertible `D × D` map `z = P·L·U·x` with `P` a fixed permutation, `L`
/// unit lower triangular and `U` upper triangular whose diagonal is stored as
/// a fixed sign and a learned log-magnitude, so `log|det| = Σ log_magnitude`.
///
/// `permutation[i] = j` means output coordinate `i` reads coordinate `j` of `L·U·x`.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertibleLinear<T = f32> {
    pub permutation: Vec<usize>,
    /// Only the strictly lower triangle is used.
    pub lower: Matrix<T>,
    /// Only the strictly upper triangle is used.
    pub upper: Matrix<T>,
    pub sign: Vec<i8>,
    pub log_magnitude: Vec<T>,
    pub grad_lower: Matrix<T>,
    pub grad_upper: Matrix<T>,
    pub grad_log_magnitude: Vec<T>,
}

impl<T: Real> InvertibleLinear<T> {
    pub fn identity(dim: usize) -> Self {
        Self {
            permutation: (0..dim).collect(),
            lower: Matrix::zeros(dim, dim),
            upper: Matrix::zeros(dim, dim),
            sign: vec![1; dim],
            log_magnitude: vec![T::zero(); dim],
            grad_lower: Matrix::zeros(dim, dim),
            grad_upper: Matrix::zeros(dim, dim),
            grad_log_magnitude: vec![T::zero(); dim],
        }
    }

    /// `L = U = I` with a random permutation.
    pub fn random_permutation<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let mut layer = Self::identity(dim);
        layer.permutation.shuffle(rng);
        layer
    }

    pub fn from_parts(
        permutation: Vec<usize>,
        lower: Matrix<T>,
        upper: Matrix<T>,
        sign: Vec<i8>,
        log_magnitude: Vec<T>,
    ) -> Result<Self> {
        let d = permutation.len();
        let mut seen = vec![false; d];
        for &p in &permutation {
            if p >= d || std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidArgument(
                    "invertible linear permutation is not a permutation".into(),
                ));
            }
        }
        if lower.shape() != (d, d) || upper.shape() != (d, d) {
            return Err(Error::DimensionMismatch {
                context: "invertible linear factors",
                expected: d * d,
                actual: lower.rows() * lower.cols(),
            });
        }
        if sign.len() != d || log_magnitude.len() != d || sign.iter().any(|s| s.abs() != 1) {
            return Err(Error::InvalidArgument(
                "invertible linear diagonal must have D entries with sign ±1".into(),
            ));
        }
        let mut layer = Self {
            permutation,
            lower,
            upper,
            sign,
            log_magnitude,
            ..Self::identity(d)
        };
        layer.mask_factors();
        Ok(layer)
    }

    pub fn dim(&self) -> usize {
        self.permutation.len()
    }

    pub fn log_det(&self) -> f64 {
        self.log_magnitude.iter().map(|m| m.widen()).sum()
    }

    /// Zero the unused triangles so stored factors are canonical.
    pub fn mask_factors(&mut self) {
        let d = self.dim();
        for i in 0..d {
            for j in 0..d {
                if j >= i {
                    self.lower.set(i, j, T::zero());
                }
                if j <= i {
                    self.upper.set(i, j, T::zero());
                }
            }
        }
    }

    /// Unit lower triangular factor.
    pub fn lower_matrix(&self) -> Matrix<T> {
        let d = self.dim();
        Matrix::from_fn(d, d, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => self.lower.get(i, j),
            std::cmp::Ordering::Equal => T::one(),
            std::cmp::Ordering::Less => T::zero(),
        })
    }

    /// Upper triangular factor including its diagonal.
    pub fn upper_matrix(&self) -> Matrix<T> {
        let d = self.dim();
        Matrix::from_fn(d, d, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Less => self.upper.get(i, j),
            std::cmp::Ordering::Equal => self.diagonal(i),
            std::cmp::Ordering::Greater => T::zero(),
        })
    }

    /// The full matrix `P·L·U`.
    pub fn weight(&self) -> Result<Matrix<T>> {
        let lu = self.lower_matrix().matmul(&self.upper_matrix())?;
        Ok(lu.select_rows(&self.permutation))
    }

    fn diagonal(&self, i: usize) -> T {
        let m = self.log_magnitude[i].exp();
        if self.sign[i] < 0 {
            -m
        } else {
            m
        }
    }

    /// Returns `(z, U·x)`; the second is kept for backpropagation.
    pub fn forward(&self, x: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>)> {
        self.check(x.cols())?;
        let ux = x.matmul_nt(&self.upper_matrix())?;
        let lux = ux.matmul_nt(&self.lower_matrix())?;
        let mut z = Matrix::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let src = lux.row(r);
            for (o, &p) in z.row_mut(r).iter_mut().zip(&self.permutation) {
                *o = src[p];
            }
        }
        Ok((z, ux))
    }

    /// Row-wise triangular solves: `x = U⁻¹ L⁻¹ Pᵀ z`.
    pub fn inverse(&self, z: &Matrix<T>) -> Result<Matrix<T>> {
        self.check(z.cols())?;
        let d = self.dim();
        let lower = self.lower.cast::<f64>();
        let upper = self.upper.cast::<f64>();
        let diag: Vec<f64> = (0..d).map(|i| self.diagonal(i).widen()).collect();
        let perm = &self.permutation;
        let mut x = Matrix::zeros(z.rows(), d);
        if d == 0 {
            return Ok(x);
        }
        // solves accumulate in f64; f32 sums over D terms lose too much at large D
        parallel::for_each_chunk_mut(x.as_mut_slice(), SOLVE_ROW_CHUNK * d, |ci, block| {
            let mut y = vec![0.0f64; d];
            let mut w = vec![0.0f64; d];
            for (k, out) in block.chunks_exact_mut(d).enumerate() {
                let zr = z.row(ci * SOLVE_ROW_CHUNK + k);
                for (i, &p) in perm.iter().enumerate() {
                    y[p] = zr[i].widen();
                }
                // L·w = y, unit diagonal
                for i in 0..d {
                    let li = lower.row(i);
                    let mut acc = y[i];
                    for j in 0..i {
                        acc -= li[j] * y[j];
                    }
                    y[i] = acc;
                }
                // U·x = w
                for i in (0..d).rev() {
                    let ui = upper.row(i);
                    let mut acc = y[i];
                    for j in i + 1..d {
                        acc -= ui[j] * w[j];
                    }
                    w[i] = acc / diag[i];
                }
                for (o, &v) in out.iter_mut().zip(&w) {
                    *o = T::cast(v);
                }
            }
        });
        Ok(x)
    }

    /// Backpropagate given the layer input `x` and the cached `U·x`.
    pub fn backward(
        &mut self,
        x: &Matrix<T>,
        ux: &Matrix<T>,
        grad_z: &Matrix<T>,
        logdet_weight: f64,
    ) -> Result<Matrix<T>> {
        self.check(x.cols())?;
        let d = self.dim();
        let mut g_lux = Matrix::zeros(grad_z.rows(), d);
        for r in 0..grad_z.rows() {
            let src = grad_z.row(r);
            let dst = g_lux.row_mut(r);
            for (i, &p) in self.permutation.iter().enumerate() {
                dst[p] = src[i];
            }
        }
        let g_lower = g_lux.matmul_tn(ux)?;
        let g_ux = g_lux.matmul(&self.lower_matrix())?;
        let g_upper = g_ux.matmul_tn(x)?;
        for i in 0..d {
            for j in 0..d {
                if j < i {
                    let g = self.grad_lower.get(i, j) + g_lower.get(i, j);
                    self.grad_lower.set(i, j, g);
                } else if j > i {
                    let g = self.grad_upper.get(i, j) + g_upper.get(i, j);
                    self.grad_upper.set(i, j, g);
                }
            }
            // d u_ii / d log_magnitude_i = u_ii
            let g = g_upper.get(i, i).widen() * self.diagonal(i).widen() + logdet_weight;
            self.grad_log_magnitude[i] = self.grad_log_magnitude[i] + T::cast(g);
        }
        g_ux.matmul(&self.upper_matrix())
    }

    pub fn zero_grad(&mut self) {
        self.grad_lower.fill(T::zero());
        self.grad_upper.fill(T::zero());
        self.grad_log_magnitude.iter_mut().for_each(|g| *g = T::zero());
    }

    fn check(&self, cols: usize) -> Result<()> {
        if cols != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "invertible linear input",
                expected: self.dim(),
                actual: cols,
            });
        }
        Ok(())
    }
}
