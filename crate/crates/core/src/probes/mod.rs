//! Evaluation and diagnostics over trained students.

mod attention;
mod counterfactual;
mod diagnostics;
mod eval;
mod report;
mod stats;

pub use attention::{aggregate_flow, attention_flow, section_shares, AttentionFlowReport, LayerFlow, Phase, PhaseShare};
pub use counterfactual::{counterfactual_probe, counterfactual_table, CounterfactualOutcome, CounterfactualTable};
pub use diagnostics::{
    entropy, entropy_probe, entropy_probe_window, grad_norm_probe, grad_norm_report, Condition, EntropyReport,
    EntropyRow, GradNormReport, GradNormRow,
};
pub use eval::{
    exact_match, format_drift_rate, has_marker, score_outputs, EchoCritiqueResponder, EvalReport, EvalRow, Evaluation,
    ModelResponder, OracleResponder, Responder, TaskBreakdown,
};
pub use report::{read_report, write_report, ReportFile, REPORT_VERSION};
pub use stats::{argmax, bayes_posterior, kl_divergence, mean, paired_test, std_dev, BayesCase, BayesResult, PairedTest};

use thiserror::Error;

use crate::engine::EngineError;
use crate::taskworld::TaskError;
use crate::training::TrainError;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("context of {len} tokens does not fit max_seq_len {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("generation produced no attention capture")]
    CaptureMissing,
    #[error("posterior normalizer is zero")]
    ZeroNormalizer,
    #[error("invalid bayes case: {0}")]
    InvalidCase(String),
    #[error("paired samples differ in length ({a} vs {b})")]
    LengthMismatch { a: usize, b: usize },
    #[error("paired test needs at least 2 pairs, got {0}")]
    TooFew(usize),
    #[error("report {path}: {message}")]
    Report { path: String, message: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
