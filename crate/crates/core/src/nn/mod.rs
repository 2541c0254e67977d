//! Declarative networks: generators, discriminators, encoders and the
//! defense-bearing layer variants (dropout, weight normalization, noise).

mod forward;
mod params;
pub mod presets;
mod spec;
mod weight_norm;

pub use forward::{
    discriminator_scores, dropout_mask, forward_network, forward_on_tape, reparameterize, sample_latent,
    split_encoding, ForwardHooks, ForwardTrace, Mode,
};
pub use params::{build_network, Binding, ParamEntry, Parameters, INIT_STD};
pub use presets::{Preset, PresetOptions};
pub use spec::{Activation, LatentPrior, LayerKind, LayerSpec, NetworkRole, NetworkSpec};
pub use weight_norm::apply_weight_norm;

use thiserror::Error;

use crate::tensor::{RngState, TensorError};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid network: {0}")]
    Spec(String),
    #[error("input shape mismatch: expected {expected:?}, got {got:?}")]
    InputShape { expected: Vec<usize>, got: Vec<usize> },
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("zero-norm weight vector in `{0}`")]
    ZeroNorm(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl NnError {
    pub fn is_divergence(&self) -> bool {
        matches!(self, NnError::Tensor(e) if e.is_divergence())
    }
}

/// A network specification together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub params: Parameters,
}

impl Network {
    pub fn build(spec: NetworkSpec, rng: &mut RngState) -> Result<Self, NnError> {
        let params = build_network(&spec, rng)?;
        Ok(Self { spec, params })
    }
}
