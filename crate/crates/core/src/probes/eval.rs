use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ProbeError;
use crate::engine::{generate, Decode, EngineError, GenerateOptions, ModelParams};
use crate::taskworld::{extract_final_answer, render_solution, Problem, TaskKind, MARKER_RIGHT, MARKER_WRONG};
use crate::tokenizer::{self, ANSWER, CRITIQUE};
use crate::training::answer_context;

/// Anything that answers a rendered context.
pub trait Responder {
    fn respond(&self, problem: &Problem, context: &[usize]) -> Result<String, ProbeError>;
}

/// Greedy (or sampled) decoding from a student checkpoint. The generation
/// budget shrinks to fit the context window.
pub struct ModelResponder<'a> {
    pub params: &'a ModelParams,
    pub max_new: usize,
    pub decode: Decode,
}

impl<'a> ModelResponder<'a> {
    pub fn greedy(params: &'a ModelParams, max_new: usize) -> Self {
        Self { params, max_new, decode: Decode::Greedy }
    }
}

impl Responder for ModelResponder<'_> {
    fn respond(&self, _problem: &Problem, context: &[usize]) -> Result<String, ProbeError> {
        let max = self.params.config.max_seq_len;
        if context.len() >= max {
            return Err(ProbeError::ContextOverflow { len: context.len(), max });
        }
        let opts = GenerateOptions {
            max_new: self.max_new.min(max - context.len()),
            decode: self.decode,
            stop_token: Some(tokenizer::EOS),
            capture: false,
        };
        let g = generate(self.params, context, &opts)?;
        Ok(tokenizer::decode(g.content()))
    }
}

/// Always answers with the gold derivation.
pub struct OracleResponder;

impl Responder for OracleResponder {
    fn respond(&self, problem: &Problem, _context: &[usize]) -> Result<String, ProbeError> {
        Ok(render_solution(problem))
    }
}

/// Repeats the critique found in the context (empty when there is none).
pub struct EchoCritiqueResponder;

impl Responder for EchoCritiqueResponder {
    fn respond(&self, _problem: &Problem, context: &[usize]) -> Result<String, ProbeError> {
        let start = context.iter().position(|&t| t == CRITIQUE);
        let end = context.iter().rposition(|&t| t == ANSWER);
        Ok(match (start, end) {
            (Some(s), Some(e)) if s < e => tokenizer::decode(&context[s + 1..e]),
            _ => String::new(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskBreakdown {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub correct: usize,
    pub exact_match_accuracy: f64,
    pub format_drift_rate: f64,
    pub per_task: BTreeMap<TaskKind, TaskBreakdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub problem_seed: u64,
    pub task_kind: TaskKind,
    pub output: String,
    pub predicted: Option<String>,
    pub gold: String,
    pub correct: bool,
    pub drift: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: EvalReport,
    pub rows: Vec<EvalRow>,
}

fn ratio(a: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        a as f64 / n as f64
    }
}

pub fn has_marker(text: &str) -> bool {
    text.contains(MARKER_RIGHT) || text.contains(MARKER_WRONG)
}

/// Fraction of outputs containing a critique conclusion marker.
pub fn format_drift_rate(outputs: &[String]) -> f64 {
    ratio(outputs.iter().filter(|o| has_marker(o)).count(), outputs.len())
}

/// Scores generated texts against their problems: the last `Answer:` line
/// must equal the gold answer string.
pub fn score_outputs(problems: &[Problem], outputs: &[String]) -> Evaluation {
    assert_eq!(problems.len(), outputs.len(), "one output per problem");
    let rows: Vec<EvalRow> = problems
        .iter()
        .zip(outputs)
        .map(|(p, out)| {
            let predicted = extract_final_answer(out);
            EvalRow {
                problem_seed: p.seed,
                task_kind: p.kind,
                correct: predicted.as_deref() == Some(p.gold_answer.as_str()),
                predicted,
                gold: p.gold_answer.clone(),
                drift: has_marker(out),
                output: out.clone(),
            }
        })
        .collect();
    let mut per_task: BTreeMap<TaskKind, TaskBreakdown> = BTreeMap::new();
    for r in &rows {
        let b = per_task.entry(r.task_kind).or_default();
        b.n += 1;
        b.correct += r.correct as usize;
    }
    for b in per_task.values_mut() {
        b.accuracy = ratio(b.correct, b.n);
    }
    let correct = rows.iter().filter(|r| r.correct).count();
    let report = EvalReport {
        n: rows.len(),
        correct,
        exact_match_accuracy: ratio(correct, rows.len()),
        format_drift_rate: ratio(rows.iter().filter(|r| r.drift).count(), rows.len()),
        per_task,
    };
    Evaluation { report, rows }
}

/// Prompt-only evaluation: `<|prompt|> x <|answer|>` → response → exact match.
pub fn exact_match(responder: &dyn Responder, problems: &[Problem]) -> Result<Evaluation, ProbeError> {
    let outputs = problems
        .iter()
        .map(|p| {
            let ctx = answer_context(&p.prompt)?;
            match responder.respond(p, &ctx) {
                Err(ProbeError::Engine(EngineError::ContextOverflow { .. })) => Ok(String::new()),
                r => r,
            }
        })
        .collect::<Result<Vec<_>, ProbeError>>()?;
    Ok(score_outputs(problems, &outputs))
}
