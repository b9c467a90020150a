//! Glow-style normalizing flow over feature vectors.
//!
//! Each block is ActNorm → LU-parameterized invertible linear → affine
//! coupling (or coupling alone in RealNVP mode). Densities follow from the
//! change of variables `log p(x) = log N(f(x); 0, I) + log|det ∂f/∂x|`.

mod actnorm;
mod coupling;
mod invertible_linear;
mod io;
mod model;
mod train;

pub use actnorm::ActNorm;
pub use coupling::{AffineCoupling, CouplingCache, SCALE_BOUND};
pub use invertible_linear::InvertibleLinear;
pub use io::{FORMAT_VERSION, MAGIC};
pub use model::{base_log_density, Architecture, BlockCache, FlowBlock, FlowModel};
pub use train::{train, train_with_observer, HistoryRecord, TrainConfig, TrainHistory};
