use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{ActNorm, AffineCoupling, CouplingCache, InvertibleLinear};
use crate::numerics::{Matrix, Real};
use crate::parallel;

/// Rows evaluated together when a large batch is split for parallel evaluation.
const EVAL_ROW_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    /// ActNorm → invertible linear → affine coupling per block.
    #[default]
    Glow,
    /// Affine couplings with fixed half alternation only.
    RealNvp,
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Glow => "glow",
            Self::RealNvp => "realnvp",
        })
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "glow" => Ok(Self::Glow),
            "realnvp" => Ok(Self::RealNvp),
            other => Err(Error::InvalidArgument(format!("unknown architecture `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowBlock<T = f32> {
    pub actnorm: Option<ActNorm<T>>,
    pub linear: Option<InvertibleLinear<T>>,
    pub coupling: AffineCoupling<T>,
}

/// Stack of invertible blocks mapping features to a standard-normal base.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel<T = f32> {
    dim: usize,
    hidden_width: usize,
    architecture: Architecture,
    /// Whether the model was fit on L2-normalized features.
    pub normalized_features: bool,
    pub blocks: Vec<FlowBlock<T>>,
}

/// Per-block intermediates from [`FlowModel::forward_cached`].
#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    actnorm_in: Option<Matrix<T>>,
    linear_in: Option<(Matrix<T>, Matrix<T>)>,
    coupling: CouplingCache<T>,
}

/// `(z, per-row log|det|, per-block caches)`.
pub type CachedForward<T> = (Matrix<T>, Vec<f64>, Vec<BlockCache<T>>);

/// `log N(z; 0, I)` for one row.
pub fn base_log_density<T: Real>(z: &[T]) -> f64 {
    let sq: f64 = z.iter().map(|v| v.widen() * v.widen()).sum();
    -0.5 * z.len() as f64 * (2.0 * PI).ln() - 0.5 * sq
}

impl<T: Real> FlowModel<T> {
    /// Fresh model: uninitialized ActNorm, random permutation with `L = U = I`,
    /// couplings with zeroed output layers.
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        block_count: usize,
        hidden_width: usize,
        architecture: Architecture,
        rng: &mut R,
    ) -> Result<Self> {
        Self::validate_shape(dim, block_count, hidden_width)?;
        let blocks = (0..block_count)
            .map(|b| {
                let (actnorm, linear) = match architecture {
                    Architecture::Glow => (
                        Some(ActNorm::new(dim)),
                        Some(InvertibleLinear::random_permutation(dim, rng)),
                    ),
                    Architecture::RealNvp => (None, None),
                };
                FlowBlock {
                    actnorm,
                    linear,
                    coupling: AffineCoupling::new(dim, b % 2, hidden_width, rng),
                }
            })
            .collect();
        Ok(Self {
            dim,
            hidden_width,
            architecture,
            normalized_features: false,
            blocks,
        })
    }

    /// Exact identity map: initialized unit ActNorm, identity permutation and
    /// factors, zeroed coupling outputs.
    pub fn identity(
        dim: usize,
        block_count: usize,
        hidden_width: usize,
        architecture: Architecture,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Self::new(dim, block_count, hidden_width, architecture, &mut rng)?;
        for block in &mut model.blocks {
            if let Some(a) = &mut block.actnorm {
                *a = ActNorm::identity(dim);
            }
            if let Some(l) = &mut block.linear {
                *l = InvertibleLinear::identity(dim);
            }
        }
        Ok(model)
    }

    /// Assemble a model from explicit blocks; shapes are checked.
    pub fn from_blocks(
        dim: usize,
        hidden_width: usize,
        architecture: Architecture,
        normalized_features: bool,
        blocks: Vec<FlowBlock<T>>,
    ) -> Result<Self> {
        Self::validate_shape(dim, blocks.len(), hidden_width)?;
        for (b, block) in blocks.iter().enumerate() {
            let glow = architecture == Architecture::Glow;
            if block.actnorm.is_some() != glow || block.linear.is_some() != glow {
                return Err(Error::InvalidArgument(format!(
                    "block {b} does not match the {architecture:?} architecture"
                )));
            }
            let a_ok = block.actnorm.as_ref().is_none_or(|a| a.dim() == dim);
            let l_ok = block.linear.as_ref().is_none_or(|l| l.dim() == dim);
            let c = &block.coupling;
            if !a_ok || !l_ok || c.dim() != dim || c.hidden_width() != hidden_width {
                return Err(Error::DimensionMismatch {
                    context: "flow block",
                    expected: dim,
                    actual: c.dim(),
                });
            }
            if c.parity() != b % 2 {
                return Err(Error::InvalidArgument(format!(
                    "block {b} coupling parity must alternate"
                )));
            }
        }
        Ok(Self {
            dim,
            hidden_width,
            architecture,
            normalized_features,
            blocks,
        })
    }

    fn validate_shape(dim: usize, block_count: usize, hidden_width: usize) -> Result<()> {
        if dim < 2 {
            return Err(Error::InvalidArgument(format!(
                "flow dimension must be at least 2, got {dim}"
            )));
        }
        if block_count == 0 || hidden_width == 0 {
            return Err(Error::InvalidArgument(
                "block count and hidden width must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden_width
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    fn check_input(&self, x: &Matrix<T>) -> Result<()> {
        if x.cols() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "flow input",
                expected: self.dim,
                actual: x.cols(),
            });
        }
        Ok(())
    }

    /// Forward pass keeping every intermediate needed by [`FlowModel::backward`].
    pub fn forward_cached(&self, x: &Matrix<T>) -> Result<CachedForward<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        let mut log_det = vec![0.0f64; x.rows()];
        let mut caches = Vec::with_capacity(self.blocks.len());
        for (b, block) in self.blocks.iter().enumerate() {
            let actnorm_in = match &block.actnorm {
                Some(a) => {
                    if !a.initialized {
                        return Err(Error::Uninitialized { block: b });
                    }
                    let out = a.forward(&h)?;
                    let ld = a.log_det();
                    log_det.iter_mut().for_each(|v| *v += ld);
                    Some(std::mem::replace(&mut h, out))
                }
                None => None,
            };
            let linear_in = match &block.linear {
                Some(l) => {
                    let (out, ux) = l.forward(&h)?;
                    let ld = l.log_det();
                    log_det.iter_mut().for_each(|v| *v += ld);
                    Some((std::mem::replace(&mut h, out), ux))
                }
                None => None,
            };
            let (out, ld, coupling) = block.coupling.forward(&h)?;
            for (v, c) in log_det.iter_mut().zip(ld) {
                *v += c;
            }
            h = out;
            caches.push(BlockCache {
                actnorm_in,
                linear_in,
                coupling,
            });
        }
        Ok((h, log_det, caches))
    }

    /// `z = f(x)` and per-row `log|det ∂f/∂x|`. Rows are evaluated in
    /// independent chunks, so results do not depend on the thread count.
    pub fn forward(&self, x: &Matrix<T>) -> Result<(Matrix<T>, Vec<f64>)> {
        self.check_input(x)?;
        if x.rows() <= EVAL_ROW_CHUNK {
            let (z, ld, _) = self.forward_cached(x)?;
            return Ok((z, ld));
        }
        let chunks = x.rows().div_ceil(EVAL_ROW_CHUNK);
        let parts = parallel::map_range(chunks, |c| {
            let lo = c * EVAL_ROW_CHUNK;
            let hi = (lo + EVAL_ROW_CHUNK).min(x.rows());
            self.forward_cached(&x.slice_rows(lo..hi)).map(|(z, ld, _)| (z, ld))
        });
        let mut zs = Vec::with_capacity(chunks);
        let mut log_det = Vec::with_capacity(x.rows());
        for part in parts {
            let (z, ld) = part?;
            zs.push(z);
            log_det.extend(ld);
        }
        let refs: Vec<&Matrix<T>> = zs.iter().collect();
        Ok((Matrix::vstack(&refs)?, log_det))
    }

    pub fn inverse(&self, z: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(z)?;
        let mut h = z.clone();
        for block in self.blocks.iter().rev() {
            h = block.coupling.inverse(&h)?;
            if let Some(l) = &block.linear {
                h = l.inverse(&h)?;
            }
            if let Some(a) = &block.actnorm {
                h = a.inverse(&h)?;
            }
        }
        Ok(h)
    }

    /// `log p(x) = log N(f(x); 0, I) + log|det ∂f/∂x|`, per row.
    pub fn log_prob(&self, x: &Matrix<T>) -> Result<Vec<f64>> {
        let (z, log_det) = self.forward(x)?;
        Ok(z
            .iter_rows()
            .zip(log_det)
            .map(|(row, ld)| base_log_density(row) + ld)
            .collect())
    }

    /// `n` samples: standard-normal draws from `seed` pushed through the inverse.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Matrix<T>> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * self.dim)
            .map(|_| T::cast(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        self.inverse(&Matrix::new(n, self.dim, data)?)
    }

    /// Data-dependent ActNorm initialization, block by block, on `batch`.
    pub fn actnorm_init(&mut self, batch: &Matrix<T>) -> Result<()> {
        self.check_input(batch)?;
        if batch.rows() < 2 {
            return Err(Error::InvalidArgument(
                "actnorm initialization needs at least 2 rows".into(),
            ));
        }
        let mut h = batch.clone();
        for (b, block) in self.blocks.iter_mut().enumerate() {
            if let Some(a) = &mut block.actnorm {
                a.initialize(&h, b)?;
                h = a.forward(&h)?;
            }
            if let Some(l) = &block.linear {
                h = l.forward(&h)?.0;
            }
            h = block.coupling.forward(&h)?.0;
        }
        Ok(())
    }

    /// Accumulate parameter gradients of a loss given its sensitivity to `z`
    /// and to each row's log-determinant.
    pub fn backward(
        &mut self,
        caches: &[BlockCache<T>],
        grad_z: &Matrix<T>,
        logdet_weights: &[f64],
    ) -> Result<Matrix<T>> {
        if caches.len() != self.blocks.len() || logdet_weights.len() != grad_z.rows() {
            return Err(Error::DimensionMismatch {
                context: "flow backward",
                expected: self.blocks.len(),
                actual: caches.len(),
            });
        }
        let total_weight: f64 = logdet_weights.iter().sum();
        let mut g = grad_z.clone();
        for (block, cache) in self.blocks.iter_mut().zip(caches).rev() {
            g = block.coupling.backward(&cache.coupling, &g, logdet_weights)?;
            if let (Some(l), Some((x, ux))) = (&mut block.linear, &cache.linear_in) {
                g = l.backward(x, ux, &g, total_weight)?;
            }
            if let (Some(a), Some(x)) = (&mut block.actnorm, &cache.actnorm_in) {
                g = a.backward(x, &g, total_weight)?;
            }
        }
        Ok(g)
    }

    /// Mean negative log-likelihood of `batch`; accumulates its gradient.
    pub fn accumulate_nll_gradient(&mut self, batch: &Matrix<T>) -> Result<f64> {
        let (z, log_det, caches) = self.forward_cached(batch)?;
        let n = batch.rows() as f64;
        let nll: f64 = z
            .iter_rows()
            .zip(&log_det)
            .map(|(row, ld)| -(base_log_density(row) + ld))
            .sum::<f64>()
            / n;
        let inv_n = T::cast(1.0 / n);
        let grad_z = z.map(|v| v * inv_n);
        let weights = vec![-1.0 / n; batch.rows()];
        self.backward(&caches, &grad_z, &weights)?;
        Ok(nll)
    }

    pub fn zero_grad(&mut self) {
        for block in &mut self.blocks {
            if let Some(a) = &mut block.actnorm {
                a.zero_grad();
            }
            if let Some(l) = &mut block.linear {
                l.zero_grad();
            }
            block.coupling.zero_grad();
        }
    }

    /// Visit every trainable parameter block as `(name, values, gradients)`,
    /// always in the same order.
    pub fn visit_parameters<F>(&mut self, mut f: F) -> Result<()>
    where
        F: FnMut(&str, &mut [T], &[T]) -> Result<()>,
    {
        for (b, block) in self.blocks.iter_mut().enumerate() {
            if let Some(a) = &mut block.actnorm {
                f(&format!("block{b}.actnorm.log_scale"), &mut a.log_scale, &a.grad_log_scale)?;
                f(&format!("block{b}.actnorm.bias"), &mut a.bias, &a.grad_bias)?;
            }
            if let Some(l) = &mut block.linear {
                f(
                    &format!("block{b}.linear.lower"),
                    l.lower.as_mut_slice(),
                    l.grad_lower.as_slice(),
                )?;
                f(
                    &format!("block{b}.linear.upper"),
                    l.upper.as_mut_slice(),
                    l.grad_upper.as_slice(),
                )?;
                f(
                    &format!("block{b}.linear.log_magnitude"),
                    &mut l.log_magnitude,
                    &l.grad_log_magnitude,
                )?;
            }
            let c = &mut block.coupling;
            for (name, layer) in [("hidden", &mut c.hidden), ("output", &mut c.output)] {
                f(
                    &format!("block{b}.coupling.{name}.weight"),
                    layer.weight.as_mut_slice(),
                    layer.grad_weight.as_slice(),
                )?;
                f(
                    &format!("block{b}.coupling.{name}.bias"),
                    &mut layer.bias,
                    &layer.grad_bias,
                )?;
            }
        }
        Ok(())
    }

    /// Sizes of the parameter blocks in visiting order.
    pub fn parameter_sizes(&mut self) -> Vec<usize> {
        let mut sizes = Vec::new();
        self.visit_parameters(|_, p, _| {
            sizes.push(p.len());
            Ok(())
        })
        .expect("infallible visitor");
        sizes
    }

    /// All parameters flattened, widened to `f64`.
    pub fn flat_parameters(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_parameters(|_, p, _| {
            out.extend(p.iter().map(|v| v.widen()));
            Ok(())
        })
        .expect("infallible visitor");
        out
    }

    pub fn flat_gradients(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_parameters(|_, _, g| {
            out.extend(g.iter().map(|v| v.widen()));
            Ok(())
        })
        .expect("infallible visitor");
        out
    }

    pub fn set_flat_parameters(&mut self, values: &[f64]) -> Result<()> {
        let total: usize = self.parameter_sizes().iter().sum();
        if total != values.len() {
            return Err(Error::DimensionMismatch {
                context: "flat parameter vector",
                expected: total,
                actual: values.len(),
            });
        }
        let mut offset = 0;
        self.visit_parameters(|_, p, _| {
            for (dst, &src) in p.iter_mut().zip(&values[offset..]) {
                *dst = T::cast(src);
            }
            offset += p.len();
            Ok(())
        })?;
        self.mask_linear_factors();
        Ok(())
    }

    /// Add uniform noise in `±scale` to every parameter (triangular masks
    /// are kept). Useful for exercising non-trivial models.
    pub fn jitter_parameters<R: Rng + ?Sized>(&mut self, scale: f64, rng: &mut R) {
        self.visit_parameters(|_, p, _| {
            for v in p.iter_mut() {
                *v = T::cast(v.widen() + rng.random_range(-scale..=scale));
            }
            Ok(())
        })
        .expect("infallible visitor");
        self.mask_linear_factors();
        for block in &mut self.blocks {
            if let Some(a) = &mut block.actnorm {
                a.initialized = true;
            }
        }
    }

    fn mask_linear_factors(&mut self) {
        for block in &mut self.blocks {
            if let Some(l) = &mut block.linear {
                l.mask_factors();
            }
        }
    }

    /// Same model with every parameter converted to another precision.
    pub fn cast<U: Real>(&self) -> FlowModel<U> {
        let lin = |l: &crate::numerics::LinearLayer<T>| {
            crate::numerics::LinearLayer::from_parts(
                l.weight.cast(),
                l.bias.iter().map(|v| U::cast(v.widen())).collect(),
            )
            .expect("shapes preserved")
        };
        let vec = |v: &[T]| v.iter().map(|x| U::cast(x.widen())).collect::<Vec<U>>();
        let blocks = self
            .blocks
            .iter()
            .map(|b| FlowBlock {
                actnorm: b.actnorm.as_ref().map(|a| {
                    let mut out = ActNorm::from_parts(vec(&a.log_scale), vec(&a.bias))
                        .expect("shapes preserved");
                    out.initialized = a.initialized;
                    out
                }),
                linear: b.linear.as_ref().map(|l| {
                    InvertibleLinear::from_parts(
                        l.permutation.clone(),
                        l.lower.cast(),
                        l.upper.cast(),
                        l.sign.clone(),
                        vec(&l.log_magnitude),
                    )
                    .expect("shapes preserved")
                }),
                coupling: AffineCoupling::from_parts(
                    self.dim,
                    b.coupling.parity(),
                    lin(&b.coupling.hidden),
                    lin(&b.coupling.output),
                )
                .expect("shapes preserved"),
            })
            .collect();
        FlowModel {
            dim: self.dim,
            hidden_width: self.hidden_width,
            architecture: self.architecture,
            normalized_features: self.normalized_features,
            blocks,
        }
    }
}
