//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operator applied during one forward pass and
//! replays them backwards to produce gradients for its leaves. Parameter
//! tensors live outside the tape and are re-inserted as leaves on each
//! step; [`OptimizerState`] applies the resulting gradients.

mod kernels;
mod optim;
mod rng;
mod tape;
#[allow(clippy::module_inception)]
mod tensor;

pub use kernels::{sigmoid, softplus};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use rng::{RngSnapshot, RngState, RNG_ALGORITHM};
pub use tape::{ConvAttrs, Gradients, NodeId, OpKind, Tape};
pub use tensor::{Precision, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("shape {shape:?} does not describe {len} elements")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("{op}: domain error: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("training diverged in {op} ({phase}): {detail}")]
    Divergence { op: &'static str, phase: &'static str, detail: String },
    #[error("{op}: expected {expected} inputs, got {got}")]
    Arity { op: &'static str, expected: usize, got: usize },
    #[error("{0}: no inputs")]
    Empty(&'static str),
    #[error("{op}: node {node} is not on this tape")]
    UnknownNode { op: &'static str, node: usize },
    #[error("loss node {0} is not on this tape")]
    NotOnTape(usize),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("{0}")]
    InvalidConfig(String),
}

impl TensorError {
    pub fn is_divergence(&self) -> bool {
        matches!(self, TensorError::Divergence { .. })
    }
}
