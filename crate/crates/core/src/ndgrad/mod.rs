//! Minimal reverse-mode automatic differentiation over dense tensors.

pub mod checkpoint;
pub mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use graph::{ConvGeom, Gradients, Graph, Taps, Var};
pub use params::{sgd_step, Bound, ParamStore};
pub use tensor::Tensor;

pub(crate) use graph::{sigmoid, smooth_l1};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GradError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("expected a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("graph cycle at node {0}")]
    Cycle(usize),
    #[error("missing gradient for parameter {0}")]
    MissingGradient(String),
    #[error("parameter mismatch: {0}")]
    Mismatch(String),
}
