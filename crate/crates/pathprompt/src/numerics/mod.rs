//! Minimal dense-tensor kernel with reverse-mode automatic differentiation,
//! optimizers, a cosine learning-rate schedule and a flat checkpoint format.
//!
//! Everything computes in `f64`; checkpoints store 32-bit floats (see
//! [`checkpoint`]). A [`graph::Graph`] and the tensors it owns are confined
//! to one thread; independent graphs may run concurrently.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod tensor;

pub use graph::{Graph, Reduction, Var};
pub use optim::{cosine_lr, Adam, Optimizer, Sgd};
pub use params::{Binding, Param, ParamSet};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: String, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("parameter `{name}` already registered")]
    DuplicateParam { name: String },
    #[error("unknown parameter `{name}`")]
    UnknownParam { name: String },
    #[error("invalid learning-rate schedule: {detail}")]
    InvalidSchedule { detail: String },
    #[error("checkpoint io failed for {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad checkpoint {path}: {detail}")]
    BadCheckpoint { path: String, detail: String },
}
