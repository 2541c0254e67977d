//! Training loops for GAN, VAE-GAN and BEGAN models, the DP defense and
//! its privacy accountant, and checkpoints.

mod checkpoint;
mod config;
mod dp;
mod gan;
mod loss;
mod trainer;

#[cfg(test)]
mod tests;

pub use checkpoint::{
    encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointReader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
    DISCRIMINATOR, ENCODER, GENERATOR,
};
pub use config::{BeganConfig, DPConfig, Defense, GeneratorLoss, InjectionSite, TrainConfig, VaeConfig};
pub use dp::{clip_factor, dp_apply, epsilon_account, rdp_sampled_gaussian, sigma_for_epsilon, DpInput, RDP_ORDERS};
pub use gan::{
    began_step, discriminator_update, reconstruction_distance, gan_step, generate, generator_update, sample_generator, vaegan_step, BeganState, GanModel,
    Learner, ModelFamily, StepLosses,
};
pub use loss::{
    bce_with_logits, generator_objective, kl_divergence, negative_elbo_on_tape, smooth_label_pair, smooth_labels, vae_elbo,
    LabelRole,
};
pub use trainer::{seed_streams, MetricsWriter, StepRecord, TrainSink, Trainer};

use std::path::PathBuf;

use thiserror::Error;

use crate::data::DataError;
use crate::nn::NnError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training diverged at step {step}: {detail} (last good checkpoint: {})", last_checkpoint.as_ref().map_or("none".to_string(), |p| p.display().to_string()))]
    Divergence { step: u64, detail: String, last_checkpoint: Option<PathBuf> },
    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("artifact has no {0} network")]
    MissingNetwork(&'static str),
    #[error("privacy budget is not accounted for forward-pass noise")]
    NotAccounted,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TrainError {
    pub fn is_divergence(&self) -> bool {
        match self {
            TrainError::Divergence { .. } => true,
            TrainError::Nn(e) => e.is_divergence(),
            TrainError::Tensor(e) => e.is_divergence(),
            _ => false,
        }
    }
}
