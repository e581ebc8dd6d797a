//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! Single-threaded and deterministic: every reduction runs in a fixed order,
//! so forward and backward passes are bit-reproducible for fixed inputs.

mod adam;
pub mod check;
mod conv;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use params::{Bound, ParamStore};
pub use tape::{NormKind, Tape, Var};
pub use tensor::{Real, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("normalization epsilon must be positive, got {0}")]
    NonPositiveEps(f64),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("parameter {0:?} is defined twice")]
    DuplicateParam(String),
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
}
