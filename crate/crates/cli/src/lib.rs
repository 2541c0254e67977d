//! Experiment orchestration for `genleak`: config files, run directories,
//! the train / attack / evaluate pipeline, sweeps and reports.

pub mod config;
pub mod pipeline;
pub mod sweep;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{derive_seed, AttackKind, ExperimentConfig};
pub use pipeline::{open_target, run_attack, run_experiment, run_train, write_report, RunManifest, RunOutcome, Stage, TargetAccess};
pub use sweep::{parse_axis, run_sweep, workers_from_env, SweepAxis};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error in {file} at line {line}, column {column}: {message}")]
    Parse { file: String, line: usize, column: usize, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("run directory {} is not empty; pass --resume to continue it", .0.display())]
    RunExists(PathBuf),
    #[error("{stage} stage failed: {message}")]
    Stage { stage: Stage, message: String },
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
