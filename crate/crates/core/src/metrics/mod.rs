//! Threshold-free evaluation and feature-space geometry.

mod geometry;

pub use geometry::{
    geometry_report, tolerance, uniformity, GeometryReport, EXACT_PAIR_LIMIT, SUBSAMPLED_PAIRS,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability that a random ID score exceeds a random OOD score, ties
/// counted one half (Mann–Whitney U / (n_id·n_ood)), via rank sums.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    if id_scores.is_empty() || ood_scores.is_empty() {
        return Err(Error::InvalidArgument(
            "AUROC needs at least one ID and one OOD score".into(),
        ));
    }
    if id_scores.iter().chain(ood_scores).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("AUROC input score".into()));
    }
    let mut all: Vec<(f64, bool)> = id_scores
        .iter()
        .map(|&s| (s, true))
        .chain(ood_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

    // Twice the ID rank sum, so tied (average) ranks stay integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // 1-based positions i+1..=j+1 share rank (i+1 + j+1)/2
        let twice_rank = (i + 1 + j + 1) as u128;
        let ids = all[i..=j].iter().filter(|e| e.1).count() as u128;
        twice_rank_sum += twice_rank * ids;
        i = j + 1;
    }
    let n = id_scores.len() as u128;
    let m = ood_scores.len() as u128;
    let twice_u = twice_rank_sum - n * (n + 1);
    let denom = 2 * n * m;
    // Dividing the smaller side keeps auroc(a, b) + auroc(b, a) == 1 exactly.
    Ok(if 2 * twice_u <= denom {
        twice_u as f64 / denom as f64
    } else {
        1.0 - (denom - twice_u) as f64 / denom as f64
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// `edge_low,edge_high,count` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("edge_low,edge_high,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", self.edges[i], self.edges[i + 1], c));
        }
        out
    }
}

/// Uniform-width histogram over `range` (default: min..max of `scores`).
/// Interior edges belong to the bin on their right; the last bin includes
/// its right edge. Values outside an explicit range are not counted. A
/// degenerate range yields a single bin holding everything.
pub fn histogram(scores: &[f64], bins: usize, range: Option<(f64, f64)>) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("histogram input".into()));
    }
    let (lo, hi) = match range {
        Some(r) => r,
        None if scores.is_empty() => (0.0, 0.0),
        None => scores
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v))),
    };
    if !(lo.is_finite() && hi.is_finite()) || hi < lo {
        return Err(Error::InvalidArgument(format!("invalid histogram range ({lo}, {hi})")));
    }
    if lo == hi {
        let inside = scores.iter().filter(|&&v| v == lo).count() as u64;
        return Ok(Histogram {
            edges: vec![lo, hi],
            counts: vec![inside],
        });
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut counts = vec![0u64; bins];
    for &v in scores {
        if v < lo || v > hi {
            continue;
        }
        let mut b = (((v - lo) / width).floor() as usize).min(bins - 1);
        // guard against rounding in (v - lo) / width near edges
        while b > 0 && v < edges[b] {
            b -= 1;
        }
        while b + 1 < bins && v >= edges[b + 1] {
            b += 1;
        }
        counts[b] += 1;
    }
    Ok(Histogram { edges, counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub auroc: f64,
    pub n_id: usize,
    pub n_ood: usize,
    pub id_histogram: Histogram,
    pub ood_histogram: Histogram,
}

/// AUROC plus paired histograms over the shared score range.
pub fn evaluate(id_scores: &[f64], ood_scores: &[f64], bins: usize, method: &str) -> Result<EvalReport> {
    let auroc = auroc(id_scores, ood_scores)?;
    let (lo, hi) = id_scores
        .iter()
        .chain(ood_scores)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    Ok(EvalReport {
        method: method.to_string(),
        auroc,
        n_id: id_scores.len(),
        n_ood: ood_scores.len(),
        id_histogram: histogram(id_scores, bins, Some((lo, hi)))?,
        ood_histogram: histogram(ood_scores, bins, Some((lo, hi)))?,
    })
}
