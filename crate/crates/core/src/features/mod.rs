//! Feature sets exchanged with the extractor as NPY directories, plus
//! normalization, splitting and a synthetic clustered-hypersphere generator.
//!
//! Directory layout: `features.npy` (f32 `[N×D]`, required), `logits.npy`
//! (f32 `[N×C]`), `labels.npy` (i64 `[N]`), `head_weight.npy` (f32 `[C×D]`),
//! `head_bias.npy` (f32 `[C]`), `meta.json`.

mod npy;
mod synthetic;

pub use npy::{read_npy, write_npy, NpyArray, NpyData};
pub use synthetic::{generate_synthetic, SyntheticSets, SyntheticSpec};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Real};

pub const FEATURES_FILE: &str = "features.npy";
pub const LOGITS_FILE: &str = "logits.npy";
pub const LABELS_FILE: &str = "labels.npy";
pub const HEAD_WEIGHT_FILE: &str = "head_weight.npy";
pub const HEAD_BIAS_FILE: &str = "head_bias.npy";
pub const META_FILE: &str = "meta.json";

/// Maximum tolerated |stored logits − head(features)|.
pub const HEAD_IDENTITY_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    #[serde(default)]
    pub source_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backbone: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augment: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub features: Matrix<f32>,
    pub logits: Option<Matrix<f32>>,
    pub labels: Option<Vec<i64>>,
    pub head_weight: Option<Matrix<f32>>,
    pub head_bias: Option<Vec<f32>>,
    pub source_name: String,
    pub meta: FeatureMeta,
}

impl FeatureSet {
    pub fn from_features(features: Matrix<f32>, source_name: impl Into<String>) -> Result<Self> {
        let source_name = source_name.into();
        let fs = Self {
            features,
            logits: None,
            labels: None,
            head_weight: None,
            head_bias: None,
            meta: FeatureMeta {
                source_name: source_name.clone(),
                ..FeatureMeta::default()
            },
            source_name,
        };
        fs.validate()?;
        Ok(fs)
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Check cross-field shape consistency and finiteness.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let d = self.dim();
        if !self.features.is_finite() {
            return Err(Error::NonFinite(FEATURES_FILE.into()));
        }
        let classes = self.logits.as_ref().map(|l| l.cols());
        if let Some(l) = &self.logits {
            if l.rows() != n {
                return Err(Error::Inconsistent(format!(
                    "{LOGITS_FILE} has {} rows but {FEATURES_FILE} has {n}",
                    l.rows()
                )));
            }
            if !l.is_finite() {
                return Err(Error::NonFinite(LOGITS_FILE.into()));
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(Error::Inconsistent(format!(
                    "{LABELS_FILE} has {} entries but {FEATURES_FILE} has {n} rows",
                    labels.len()
                )));
            }
            let bad = labels
                .iter()
                .find(|&&y| y < 0 || classes.is_some_and(|c| y as usize >= c));
            if let Some(y) = bad {
                return Err(Error::Inconsistent(format!(
                    "label {y} in {LABELS_FILE} is outside [0, {})",
                    classes.map_or("∞".to_string(), |c| c.to_string())
                )));
            }
        }
        if let Some(w) = &self.head_weight {
            if w.cols() != d {
                return Err(Error::Inconsistent(format!(
                    "{HEAD_WEIGHT_FILE} has {} columns but features have dimension {d}",
                    w.cols()
                )));
            }
            if let Some(c) = classes {
                if w.rows() != c {
                    return Err(Error::Inconsistent(format!(
                        "{HEAD_WEIGHT_FILE} has {} rows but {LOGITS_FILE} has {c} classes",
                        w.rows()
                    )));
                }
            }
            if !w.is_finite() {
                return Err(Error::NonFinite(HEAD_WEIGHT_FILE.into()));
            }
        }
        match (&self.head_weight, &self.head_bias) {
            (Some(w), Some(b)) if b.len() != w.rows() => Err(Error::Inconsistent(format!(
                "{HEAD_BIAS_FILE} has {} entries but {HEAD_WEIGHT_FILE} has {} rows",
                b.len(),
                w.rows()
            ))),
            (None, Some(_)) => Err(Error::Inconsistent(format!(
                "{HEAD_BIAS_FILE} present without {HEAD_WEIGHT_FILE}"
            ))),
            (_, Some(b)) if b.iter().any(|v| !v.is_finite()) => {
                Err(Error::NonFinite(HEAD_BIAS_FILE.into()))
            }
            _ => Ok(()),
        }
    }

    /// `features·head_weightᵀ + head_bias` for arbitrary features of this dimension.
    pub fn apply_head(&self, features: &Matrix<f32>) -> Result<Matrix<f32>> {
        let w = self
            .head_weight
            .as_ref()
            .ok_or_else(|| Error::Missing(format!("{HEAD_WEIGHT_FILE} (classifier head)")))?;
        let mut logits = features.matmul_nt(w)?;
        if let Some(b) = &self.head_bias {
            for r in 0..logits.rows() {
                for (v, &bi) in logits.row_mut(r).iter_mut().zip(b) {
                    *v += bi;
                }
            }
        }
        Ok(logits)
    }

    /// Max |stored logits − head(features)|, when both are present.
    pub fn head_identity_deviation(&self) -> Option<f64> {
        let stored = self.logits.as_ref()?;
        let recomputed = self.apply_head(&self.features).ok()?;
        Some(
            stored
                .as_slice()
                .iter()
                .zip(recomputed.as_slice())
                .map(|(a, b)| (*a as f64 - *b as f64).abs())
                .fold(0.0, f64::max),
        )
    }

    /// Non-fatal findings, such as a head that does not reproduce the logits.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(dev) = self.head_identity_deviation() {
            if dev >= HEAD_IDENTITY_TOLERANCE {
                out.push(format!(
                    "stored logits deviate from features·head_weightᵀ + head_bias by {dev:.3e}"
                ));
            }
        }
        out
    }

    /// Rows `idx` with all per-row optionals carried along.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            logits: self.logits.as_ref().map(|l| l.select_rows(idx)),
            labels: self
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
            head_weight: self.head_weight.clone(),
            head_bias: self.head_bias.clone(),
            source_name: self.source_name.clone(),
            meta: self.meta.clone(),
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mat = |m: &Matrix<f32>| NpyArray::f32_matrix(m.rows(), m.cols(), m.as_slice().to_vec());
        write_npy(dir.join(FEATURES_FILE), &mat(&self.features)?)?;
        if let Some(l) = &self.logits {
            write_npy(dir.join(LOGITS_FILE), &mat(l)?)?;
        }
        if let Some(l) = &self.labels {
            write_npy(dir.join(LABELS_FILE), &NpyArray::i64_vector(l.clone()))?;
        }
        if let Some(w) = &self.head_weight {
            write_npy(dir.join(HEAD_WEIGHT_FILE), &mat(w)?)?;
        }
        if let Some(b) = &self.head_bias {
            write_npy(dir.join(HEAD_BIAS_FILE), &NpyArray::f32_vector(b.clone()))?;
        }
        let meta = FeatureMeta {
            source_name: self.source_name.clone(),
            ..self.meta.clone()
        };
        let path = dir.join(META_FILE);
        let text = serde_json::to_string_pretty(&meta)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn float_matrix(arr: NpyArray, path: &Path) -> Result<Matrix<f32>> {
    let [rows, cols] = arr.shape[..] else {
        return Err(Error::npy(path, format!("expected a 2-D array, got shape {:?}", arr.shape)));
    };
    let data = match arr.data {
        NpyData::F32(v) => v,
        NpyData::F64(v) => v.into_iter().map(|x| x as f32).collect(),
        NpyData::I64(_) => return Err(Error::npy(path, "expected a floating-point array")),
    };
    Matrix::new(rows, cols, data)
}

fn float_vector(arr: NpyArray, path: &Path) -> Result<Vec<f32>> {
    if arr.shape.len() != 1 {
        return Err(Error::npy(path, format!("expected a 1-D array, got shape {:?}", arr.shape)));
    }
    match arr.data {
        NpyData::F32(v) => Ok(v),
        NpyData::F64(v) => Ok(v.into_iter().map(|x| x as f32).collect()),
        NpyData::I64(_) => Err(Error::npy(path, "expected a floating-point array")),
    }
}

/// Load and validate a feature directory.
pub fn load_feature_set(dir: impl AsRef<Path>) -> Result<FeatureSet> {
    let dir = dir.as_ref();
    let features_path = dir.join(FEATURES_FILE);
    if !features_path.is_file() {
        return Err(Error::Missing(format!("{}", features_path.display())));
    }
    let features = float_matrix(read_npy(&features_path)?, &features_path)?;
    let optional = |name: &str| -> Result<Option<(NpyArray, std::path::PathBuf)>> {
        let p = dir.join(name);
        if p.is_file() {
            Ok(Some((read_npy(&p)?, p)))
        } else {
            Ok(None)
        }
    };
    let logits = optional(LOGITS_FILE)?
        .map(|(a, p)| float_matrix(a, &p))
        .transpose()?;
    let labels = optional(LABELS_FILE)?
        .map(|(a, p)| match (a.shape.len(), a.data) {
            (1, NpyData::I64(v)) => Ok(v),
            _ => Err(Error::npy(&p, "expected a 1-D integer array")),
        })
        .transpose()?;
    let head_weight = optional(HEAD_WEIGHT_FILE)?
        .map(|(a, p)| float_matrix(a, &p))
        .transpose()?;
    let head_bias = optional(HEAD_BIAS_FILE)?
        .map(|(a, p)| float_vector(a, &p))
        .transpose()?;
    let meta_path = dir.join(META_FILE);
    let meta: FeatureMeta = if meta_path.is_file() {
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        serde_json::from_str(&text)?
    } else {
        FeatureMeta::default()
    };
    let source_name = if meta.source_name.is_empty() {
        dir.file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    } else {
        meta.source_name.clone()
    };
    let fs = FeatureSet {
        features,
        logits,
        labels,
        head_weight,
        head_bias,
        source_name,
        meta,
    };
    fs.validate()?;
    Ok(fs)
}

/// Scale each row to unit Euclidean norm; also returns the original norms.
pub fn l2_normalize<T: Real>(features: &Matrix<T>) -> Result<(Matrix<T>, Vec<f64>)> {
    let mut out = features.clone();
    let mut norms = Vec::with_capacity(features.rows());
    for r in 0..features.rows() {
        let row = out.row_mut(r);
        let norm = row.iter().map(|v| v.widen() * v.widen()).sum::<f64>().sqrt();
        if norm <= 0.0 || !norm.is_finite() {
            return Err(Error::ZeroNorm { row: r });
        }
        for v in row.iter_mut() {
            *v = T::cast(v.widen() / norm);
        }
        norms.push(norm);
    }
    Ok((out, norms))
}

/// Random disjoint partition with `round(fraction·N)` rows in the first part.
/// Each part keeps the original row order.
pub fn split(fs: &FeatureSet, fraction: f64, seed: u64) -> Result<(FeatureSet, FeatureSet)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction must be in (0, 1), got {fraction}"
        )));
    }
    let n = fs.len();
    let n_a = (fraction * n as f64).round() as usize;
    if n_a == 0 || n_a == n {
        return Err(Error::InvalidArgument(format!(
            "splitting {n} rows at fraction {fraction} leaves one side empty"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (a, b) = idx.split_at_mut(n_a);
    a.sort_unstable();
    b.sort_unstable();
    Ok((fs.select(a), fs.select(b)))
}
