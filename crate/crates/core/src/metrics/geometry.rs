//! Uniformity and tolerance of L2-normalized features. Pair expectations are
//! means over all N² ordered pairs, self-pairs included.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::l2_normalize;
use crate::numerics::{Matrix, Real};
use crate::parallel;

/// Largest N evaluated over every pair; beyond it pairs are subsampled.
pub const EXACT_PAIR_LIMIT: usize = 20_000;
/// Ordered pairs drawn when subsampling.
pub const SUBSAMPLED_PAIRS: usize = 4_000_000;
const NORM_TOLERANCE: f64 = 1e-3;
const ROW_BLOCK: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub uniformity: f64,
    pub negative_uniformity: f64,
    pub tolerance: Option<f64>,
    pub t: f64,
    pub n: usize,
    /// Ordered pairs behind the uniformity estimate.
    pub pair_count: u64,
    pub subsampled: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

fn check_normalized<T: Real>(features: &Matrix<T>) -> Result<()> {
    for (row, r) in features.iter_rows().enumerate() {
        let norm = r.iter().map(|v| v.widen() * v.widen()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() >= NORM_TOLERANCE {
            return Err(Error::NotNormalized { row, norm });
        }
    }
    Ok(())
}

/// `log mean_{i,j} exp(−t‖zᵢ − zⱼ‖²)`, exact over all ordered pairs.
pub fn uniformity<T: Real>(features: &Matrix<T>, t: f64) -> Result<f64> {
    validate_t(t)?;
    check_normalized(features)?;
    if features.rows() == 0 {
        return Err(Error::InvalidArgument("uniformity of an empty set".into()));
    }
    Ok(exact_kernel_sum(&features.cast::<f64>(), t)?.ln())
}

fn validate_t(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("kernel weight t must be > 0, got {t}")));
    }
    Ok(())
}

/// Mean kernel value over all ordered pairs, accumulated block by block in a
/// fixed order.
fn exact_kernel_sum(x: &Matrix<f64>, t: f64) -> Result<f64> {
    let n = x.rows();
    let sq: Vec<f64> = x.iter_rows().map(|r| r.iter().map(|v| v * v).sum()).collect();
    let blocks = n.div_ceil(ROW_BLOCK);
    let partial = parallel::map_range(blocks, |b| -> Result<f64> {
        let lo = b * ROW_BLOCK;
        let hi = (lo + ROW_BLOCK).min(n);
        let gram = x.slice_rows(lo..hi).matmul_nt(x)?;
        let mut acc = 0.0;
        for (ri, i) in (lo..hi).enumerate() {
            let g = gram.row(ri);
            for j in 0..n {
                let d2 = if i == j {
                    0.0
                } else {
                    (sq[i] + sq[j] - 2.0 * g[j]).max(0.0)
                };
                acc += (-t * d2).exp();
            }
        }
        Ok(acc)
    });
    let mut total = 0.0;
    for p in partial {
        total += p?;
    }
    Ok(total / (n as f64 * n as f64))
}

/// Mean of `zᵢᵀzⱼ` over ordered pairs with equal labels, self-pairs included.
/// Uses `Σ_{i,j∈c} zᵢᵀzⱼ = ‖Σ_{i∈c} zᵢ‖²`, so it is exact for any N.
pub fn tolerance<T: Real>(features: &Matrix<T>, labels: &[i64]) -> Result<f64> {
    check_normalized(features)?;
    if labels.len() != features.rows() {
        return Err(Error::DimensionMismatch {
            context: "tolerance labels",
            expected: features.rows(),
            actual: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("tolerance of an empty set".into()));
    }
    let mut sums: BTreeMap<i64, (Vec<f64>, u64)> = BTreeMap::new();
    for (row, &y) in features.iter_rows().zip(labels) {
        let entry = sums
            .entry(y)
            .or_insert_with(|| (vec![0.0; features.cols()], 0));
        for (a, v) in entry.0.iter_mut().zip(row) {
            *a += v.widen();
        }
        entry.1 += 1;
    }
    let (mut dot, mut pairs) = (0.0f64, 0.0f64);
    for (s, count) in sums.values() {
        dot += s.iter().map(|v| v * v).sum::<f64>();
        pairs += (*count as f64) * (*count as f64);
    }
    Ok(dot / pairs)
}

/// Normalize, then report uniformity (subsampled above [`EXACT_PAIR_LIMIT`]
/// rows) and, when labels are given, tolerance.
pub fn geometry_report(
    features: &Matrix<f32>,
    labels: Option<&[i64]>,
    t: f64,
    seed: u64,
) -> Result<GeometryReport> {
    validate_t(t)?;
    let n = features.rows();
    if n == 0 {
        return Err(Error::InvalidArgument("geometry of an empty feature set".into()));
    }
    let (z, _) = l2_normalize(&features.cast::<f64>())?;
    let (mean_kernel, pair_count, subsampled) = if n <= EXACT_PAIR_LIMIT {
        (exact_kernel_sum(&z, t)?, (n as u64) * (n as u64), false)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut acc = 0.0;
        for _ in 0..SUBSAMPLED_PAIRS {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            let d2: f64 = z.row(i).iter().zip(z.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            acc += (-t * d2).exp();
        }
        (acc / SUBSAMPLED_PAIRS as f64, SUBSAMPLED_PAIRS as u64, true)
    };
    let uniformity = mean_kernel.ln();
    let (tolerance, warning) = match labels {
        Some(l) => (Some(tolerance(&z, l)?), None),
        None => (None, Some("no labels available; tolerance omitted".to_string())),
    };
    Ok(GeometryReport {
        uniformity,
        negative_uniformity: -uniformity,
        tolerance,
        t,
        n,
        pair_count,
        subsampled,
        warning,
    })
}
