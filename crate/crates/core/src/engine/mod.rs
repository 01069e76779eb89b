//! Tensor numerics, reverse-mode autodiff and the tiny decoder-only
//! transformer used as the student model.

mod checkpoint;
mod gradcheck;
mod model;
mod tape;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use gradcheck::{finite_diff_grad, grad_l2_norm};
pub use model::{
    forward, generate, init_params, AttentionCapture, Decode, ForwardOutput, Generation, GenerateOptions, InitMode,
    LayerParams, ModelConfig, ModelParams, ParamVars, Section,
};
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {id} is outside the vocabulary of size {vocab}")]
    TokenOutOfVocab { id: usize, vocab: usize },
    #[error("context overflow: prompt {prompt} + max_new {max_new} > max_seq_len {max}")]
    ContextOverflow { prompt: usize, max_new: usize, max: usize },
    #[error("generation needs a non-empty prompt")]
    EmptyPrompt,
    #[error("backward called on a value that does not depend on any grad-requiring leaf")]
    Detached,
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("loss mask selects no positions")]
    EmptyMask,
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("finite-difference step must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
}
