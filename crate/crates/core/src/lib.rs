//! Out-of-distribution detection by density estimation on classifier
//! features.
//!
//! A Glow-style normalizing flow is fit to (optionally L2-normalized)
//! penultimate-layer features of a frozen classifier; its log-likelihood is
//! the OOD score. The crate also provides the classification baselines
//! (MSP, energy, ReAct), AUROC evaluation, and feature-space geometry
//! diagnostics (uniformity, tolerance).
//!
//! Row-parallel work runs on rayon when the default `parallel` feature is
//! enabled and falls back to sequential loops otherwise.

pub mod error;
pub mod features;
pub mod flow;
pub mod metrics;
pub mod numerics;
pub mod parallel;
pub mod scores;

pub use error::{Error, Result};
pub use features::{
    generate_synthetic, l2_normalize, load_feature_set, split, FeatureSet, SyntheticSpec,
};
pub use flow::{train, Architecture, FlowModel, TrainConfig, TrainHistory};
pub use metrics::{auroc, histogram, tolerance, uniformity, EvalReport, GeometryReport};
pub use numerics::Matrix;
pub use scores::{ScoreMethod, ScoreVector};
