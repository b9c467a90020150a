//! Per-sample OOD scores. Every method is oriented so that a higher score
//! means "more in-distribution".

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{l2_normalize, FeatureSet};
use crate::flow::FlowModel;
use crate::numerics::Matrix;

pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_REACT_PERCENTILE: f64 = 90.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMethod {
    /// Flow log-likelihood of the features.
    Fde,
    /// Maximum softmax probability.
    Msp,
    /// Negative free energy `T·logsumexp(logits/T)`.
    Energy,
    /// Energy of logits recomputed from clipped features.
    #[serde(rename = "react")]
    ReactEnergy,
}

impl std::fmt::Display for ScoreMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Fde => "fde",
            Self::Msp => "msp",
            Self::Energy => "energy",
            Self::ReactEnergy => "react",
        })
    }
}

impl std::str::FromStr for ScoreMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fde" => Ok(Self::Fde),
            "msp" => Ok(Self::Msp),
            "energy" => Ok(Self::Energy),
            "react" => Ok(Self::ReactEnergy),
            other => Err(Error::InvalidArgument(format!("unknown score method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalize: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub values: Vec<f64>,
    pub method: ScoreMethod,
    pub params: ScoreParams,
}

impl ScoreVector {
    fn checked(values: Vec<f64>, method: ScoreMethod, params: ScoreParams) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{method:?} score of row {i}")));
        }
        Ok(Self {
            values,
            method,
            params,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Flow log-likelihood. `normalize` must match how the model was trained.
pub fn fde_score(model: &FlowModel<f32>, fs: &FeatureSet, normalize: bool) -> Result<ScoreVector> {
    if normalize != model.normalized_features {
        return Err(Error::NormalizationMismatch {
            model: model.normalized_features,
            requested: normalize,
        });
    }
    if fs.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "feature dimension vs model",
            expected: model.dim(),
            actual: fs.dim(),
        });
    }
    let values = if normalize {
        model.log_prob(&l2_normalize(&fs.features)?.0)?
    } else {
        model.log_prob(&fs.features)?
    };
    ScoreVector::checked(
        values,
        ScoreMethod::Fde,
        ScoreParams {
            normalize: Some(normalize),
            ..ScoreParams::default()
        },
    )
}

fn logsumexp(row: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = row.clone().fold(f64::NEG_INFINITY, f64::max);
    max + row.map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn msp_score(logits: &Matrix<f32>) -> Result<ScoreVector> {
    if logits.cols() < 2 {
        return Err(Error::InvalidArgument(format!(
            "softmax scores need at least 2 classes, got {}",
            logits.cols()
        )));
    }
    let values = logits
        .iter_rows()
        .map(|r| {
            let it = r.iter().map(|&v| v as f64);
            let max = it.clone().fold(f64::NEG_INFINITY, f64::max);
            1.0 / it.map(|v| (v - max).exp()).sum::<f64>()
        })
        .collect();
    ScoreVector::checked(values, ScoreMethod::Msp, ScoreParams::default())
}

pub fn energy_score(logits: &Matrix<f32>, temperature: f64) -> Result<ScoreVector> {
    energy_with_method(logits, temperature, ScoreMethod::Energy, None)
}

fn energy_with_method(
    logits: &Matrix<f32>,
    temperature: f64,
    method: ScoreMethod,
    clip_threshold: Option<f64>,
) -> Result<ScoreVector> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if logits.cols() == 0 {
        return Err(Error::InvalidArgument("energy score needs at least 1 class".into()));
    }
    let values = logits
        .iter_rows()
        .map(|r| temperature * logsumexp(r.iter().map(|&v| v as f64 / temperature)))
        .collect();
    ScoreVector::checked(
        values,
        method,
        ScoreParams {
            temperature: Some(temperature),
            clip_threshold,
            normalize: None,
        },
    )
}

/// Clip every feature activation at `clip_threshold`, recompute logits
/// through the stored head, then take the energy score.
pub fn react_energy_score(fs: &FeatureSet, clip_threshold: f64, temperature: f64) -> Result<ScoreVector> {
    if clip_threshold.is_nan() {
        return Err(Error::InvalidArgument("clip threshold is NaN".into()));
    }
    if fs.head_weight.is_none() {
        return Err(Error::Missing(
            "head_weight.npy (ReAct needs the classifier head)".into(),
        ));
    }
    if fs.head_bias.is_none() {
        return Err(Error::Missing(
            "head_bias.npy (ReAct needs the classifier head)".into(),
        ));
    }
    let clipped = fs.features.map(|v| if (v as f64) > clip_threshold { clip_threshold as f32 } else { v });
    let logits = fs.apply_head(&clipped)?;
    energy_with_method(
        &logits,
        temperature,
        ScoreMethod::ReactEnergy,
        clip_threshold.is_finite().then_some(clip_threshold),
    )
}

/// Percentile (linear interpolation between order statistics) of all ID
/// activations pooled together.
pub fn fit_react_threshold(id_features: &Matrix<f32>, percentile: f64) -> Result<f64> {
    if !(percentile > 0.0 && percentile < 100.0) {
        return Err(Error::InvalidArgument(format!(
            "percentile must be in (0, 100), got {percentile}"
        )));
    }
    if id_features.is_empty() {
        return Err(Error::InvalidArgument("no activations to fit a ReAct threshold".into()));
    }
    let mut v: Vec<f32> = id_features.as_slice().to_vec();
    v.sort_unstable_by(f32::total_cmp);
    let pos = percentile / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(v[lo] as f64 + frac * (v[hi] as f64 - v[lo] as f64))
}
