//! Objective rendering, the masked NLL loss and the optimization loop.

mod optim;
mod render;

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use optim::{adamw_step, clip_grad_norm, lr_at, AdamState, AdamW, TrainHP};
pub use render::{answer_context, assemble, cgd_context, render, render_gold, Objective, TokenizedExample};

use crate::datagen::Corpus;
use crate::engine::{EngineError, ModelParams, Tape, Tensor};
use crate::seed::item_seed;
use crate::taskworld::{render_solution, TaskError};
use crate::tokenizer::UnknownChar;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("rendered sequence of length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("record {index}: {source}")]
    Record { index: usize, source: Box<TrainError> },
    #[error(transparent)]
    Tokenize(#[from] UnknownChar),
    #[error("unknown objective {0:?}")]
    UnknownObjective(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidHp(String),
    #[error("nothing to train on")]
    EmptyCorpus,
    #[error("non-finite gradient")]
    NonFiniteGrad,
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("loss curve io: {0}")]
    Io(#[from] std::io::Error),
    #[error("loss curve line {line}: {message}")]
    MalformedCurve { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub points: Vec<LossPoint>,
}

impl LossCurve {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.loss).collect()
    }

    pub fn write(&self, path: &Path) -> Result<(), TrainError> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        for p in &self.points {
            writeln!(out, "{}", serde_json::to_string(p).expect("loss point serializes"))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, TrainError> {
        let mut points = Vec::new();
        for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let p = serde_json::from_str(&line)
                .map_err(|e| TrainError::MalformedCurve { line: i + 1, message: e.to_string() })?;
            points.push(p);
        }
        Ok(Self { points })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub curve: LossCurve,
}

/// Renders every record of `corpus` for `obj`, regenerating SFT gold answers
/// from the stored problem seeds.
pub fn render_corpus(corpus: &Corpus, obj: Objective, max_len: usize) -> Result<Vec<TokenizedExample>, TrainError> {
    corpus
        .records
        .iter()
        .enumerate()
        .map(|(index, r)| {
            let gold = if obj == Objective::Sft { render_solution(&r.problem()?) } else { String::new() };
            render(r, &gold, obj, max_len).map_err(|e| TrainError::Record { index, source: Box::new(e) })
        })
        .collect()
}

/// Masked NLL over a batch: summed token losses divided by the batch's
/// total number of masked positions.
pub fn masked_nll(logits: &Tensor, target_ids: &[usize], loss_mask: &[bool]) -> Result<f64, TrainError> {
    let denom = loss_mask.iter().filter(|&&m| m).count() as f64;
    let mut tape = Tape::new();
    let l = tape.leaf(logits.clone(), false);
    let loss = tape.masked_nll(l, target_ids, loss_mask, denom.max(1.0))?;
    Ok(tape.value(loss).data[0])
}

/// Mean-over-masked-tokens loss of `batch` and its gradient for every
/// parameter tensor (canonical order).
pub fn loss_and_grads(params: &ModelParams, batch: &[&TokenizedExample]) -> Result<(f64, Vec<Tensor>), TrainError> {
    let denom: usize = batch.iter().map(|e| e.masked_count()).sum();
    if denom == 0 {
        return Err(EngineError::EmptyMask.into());
    }
    let mut total = 0.0;
    let mut grads: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(&t.shape)).collect();
    for ex in batch {
        let mut tape = Tape::new();
        let pv = params.to_tape(&mut tape, true);
        let (logits, _) = pv.forward(&mut tape, &params.config, &ex.input_ids)?;
        let loss = tape.masked_nll(logits, &ex.target_ids, &ex.loss_mask, denom as f64)?;
        total += tape.value(loss).data[0];
        let mut g = tape.backward(loss)?;
        for (acc, &v) in grads.iter_mut().zip(&pv.vars) {
            let gi = g.take(v).expect("parameter gradient");
            acc.data.iter_mut().zip(&gi.data).for_each(|(a, b)| *a += b);
        }
    }
    Ok((total, grads))
}

/// Loss of a batch without gradients.
pub fn batch_loss(params: &ModelParams, batch: &[&TokenizedExample]) -> Result<f64, TrainError> {
    let denom: usize = batch.iter().map(|e| e.masked_count()).sum();
    let mut total = 0.0;
    for ex in batch {
        let mut tape = Tape::new();
        let pv = params.to_tape(&mut tape, false);
        let (logits, _) = pv.forward(&mut tape, &params.config, &ex.input_ids)?;
        let loss = tape.masked_nll(logits, &ex.target_ids, &ex.loss_mask, denom.max(1) as f64)?;
        total += tape.value(loss).data[0];
    }
    Ok(total)
}

/// Stream of example indices: a fresh seeded permutation per epoch.
struct Shuffler {
    n: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl Shuffler {
    fn new(n: usize, seed: u64) -> Self {
        Self { n, seed, epoch: 0, order: Vec::new(), cursor: 0 }
    }

    fn next(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order = (0..self.n).collect();
            self.order.shuffle(&mut ChaCha8Rng::seed_from_u64(item_seed(self.seed, self.epoch)));
            self.epoch += 1;
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }
}

pub fn train(init: &ModelParams, examples: &[TokenizedExample], hp: &TrainHP) -> Result<TrainOutput, TrainError> {
    train_with(init, examples, hp, |_| {})
}

/// Runs `hp.total_steps` AdamW updates; update `s` (1-based) uses
/// `lr_at(s)`. `on_step` sees every recorded point.
pub fn train_with(
    init: &ModelParams,
    examples: &[TokenizedExample],
    hp: &TrainHP,
    mut on_step: impl FnMut(&LossPoint),
) -> Result<TrainOutput, TrainError> {
    hp.validate()?;
    if examples.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let mut params = init.clone();
    let decay: Vec<bool> = params.tensors().iter().map(|t| t.shape.len() >= 2).collect();
    let mut state = AdamState::new(&params.tensors());
    let mut shuffler = Shuffler::new(examples.len(), hp.seed);
    let mut curve = LossCurve::default();
    for step in 1..=hp.total_steps {
        let batch: Vec<&TokenizedExample> = (0..hp.batch_size).map(|_| &examples[shuffler.next()]).collect();
        let (loss, mut grads) = match loss_and_grads(&params, &batch) {
            Ok(r) => r,
            Err(TrainError::Engine(EngineError::NonFinite { .. })) => {
                return Err(TrainError::Diverged { step, loss: f64::NAN })
            }
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Err(TrainError::Diverged { step, loss });
        }
        let grad_norm = clip_grad_norm(&mut grads, hp.grad_clip);
        let lr = lr_at(step, hp);
        let mut tensors = params.tensors_mut();
        match adamw_step(&mut tensors, &grads, &decay, &mut state, lr, &hp.adamw) {
            Ok(()) => {}
            Err(TrainError::NonFiniteGrad) => return Err(TrainError::Diverged { step, loss }),
            Err(e) => return Err(e),
        }
        let point = LossPoint { step, loss, lr, grad_norm };
        on_step(&point);
        curve.points.push(point);
    }
    if !params.is_finite() {
        return Err(TrainError::Diverged { step: hp.total_steps, loss: f64::NAN });
    }
    Ok(TrainOutput { params, curve })
}
