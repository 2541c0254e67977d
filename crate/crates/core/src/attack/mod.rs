//! Membership-inference attacks. Every attack sees the candidate records
//! and some view of the target, and returns a ranking of the candidates;
//! which candidates are members is never visible here.

mod attacks;
mod oracle;
mod rank;

#[cfg(test)]
mod tests;

pub use attacks::{
    blackbox_attack, discriminative_aux_attack, euclidean_attack, generative_aux_attack, shadow_attack, train_shadow,
    whitebox_attack, AttackOutcome, AttackerConfig, DiscriminativeSetting, EvalHook, GenerativeSetting, StreamMix,
    BLACKBOX_DEFAULT_STEPS, DEFAULT_AUX_DELAY, DEFAULT_EVAL_INTERVAL, DEFAULT_NUM_GENERATED, GENERATIVE_AUX_DEFAULT_STEPS,
};
pub use oracle::{GeneratorSampler, Sampler};
pub use rank::{rank_scores, score_and_rank, PredictionRanking, ScoreVector};

use thiserror::Error;

use crate::nn::NnError;
use crate::tensor::TensorError;
use crate::train::TrainError;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack configuration: {0}")]
    Config(String),
    #[error("unsupported target: {0}")]
    UnsupportedTarget(String),
    #[error("candidate shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },
    #[error("score of candidate {0} is not finite")]
    NonFinite(usize),
    #[error("target query failed: {0}")]
    Query(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
