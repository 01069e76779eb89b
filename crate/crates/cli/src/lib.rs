//! Config-driven experiment runner: data generation, training, evaluation,
//! probes, ablations and cross-run reports.

pub mod config;
pub mod commands;
pub mod pipeline;
pub mod run_dir;

use cgd_core::datagen::DatagenError;
use cgd_core::engine::EngineError;
use cgd_core::probes::ProbeError;
use cgd_core::taskworld::TaskError;
use cgd_core::training::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Train(TrainError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { step, loss } => CliError::Diverged { step, loss },
            e => CliError::Train(e),
        }
    }
}

impl CliError {
    /// 2 config error, 3 divergence, 4 missing artifact, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Diverged { .. } => 3,
            CliError::MissingArtifact(_) => 4,
            _ => 1,
        }
    }
}
