use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("actnorm layer in block {block} is not initialized")]
    Uninitialized { block: usize },

    #[error("zero variance in dimension {dim} while initializing actnorm in block {block}")]
    ZeroVariance { block: usize, dim: usize },

    #[error("row {row} has zero norm")]
    ZeroNorm { row: usize },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("model format error: {0}")]
    Format(String),

    #[error("npy error in {path}: {message}")]
    Npy { path: PathBuf, message: String },

    #[error("inconsistent feature set: {0}")]
    Inconsistent(String),

    #[error("missing input: {0}")]
    Missing(String),

    #[error("features are not L2-normalized (row {row} has norm {norm})")]
    NotNormalized { row: usize, norm: f64 },

    #[error("model normalization flag is {model}, but scoring requested {requested}")]
    NormalizationMismatch { model: bool, requested: bool },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn npy(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Npy {
            path: path.into(),
            message: message.into(),
        }
    }
}
