use serde::{Deserialize, Serialize};

use super::stats::{mean, std_dev};
use super::ProbeError;
use crate::datagen::AugmentedRecord;
use crate::engine::{forward, grad_l2_norm, ModelParams};
use crate::tokenizer;
use crate::training::{cgd_context, loss_and_grads, render, Objective};

/// Shannon entropy (nats) of `softmax(logits)`.
pub fn entropy(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|x| (x - max).exp()).sum();
    let lse = max + z.ln();
    let h: f64 = logits
        .iter()
        .map(|&x| {
            let lp = x - lse;
            let p = lp.exp();
            if p > 0.0 {
                -p * lp
            } else {
                0.0
            }
        })
        .sum();
    h.max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub problem_seed: u64,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    /// Number of refined-answer positions averaged per record.
    pub window: usize,
    pub rows: Vec<EntropyRow>,
}

impl EntropyReport {
    pub fn values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.entropy).collect()
    }
}

/// Entropy of the first refined-answer token given `x ‖ y′ ‖ c ‖ <|answer|>`.
pub fn entropy_probe(params: &ModelParams, records: &[AugmentedRecord]) -> Result<EntropyReport, ProbeError> {
    entropy_probe_window(params, records, 1)
}

/// Mean entropy over the first `window` refined-answer positions, teacher
/// forcing `ŷ`. `window = 1` is the single next-token measurement.
pub fn entropy_probe_window(
    params: &ModelParams,
    records: &[AugmentedRecord],
    window: usize,
) -> Result<EntropyReport, ProbeError> {
    let window = window.max(1);
    let max = params.config.max_seq_len;
    let rows = records
        .iter()
        .map(|r| {
            let (mut ctx, _) = cgd_context(&r.prompt, &r.initial_answer, &r.critique)?;
            let start = ctx.len() - 1;
            let forced = tokenizer::encode(&r.refined_answer).map_err(crate::training::TrainError::from)?;
            ctx.extend(forced.iter().take(window - 1));
            if ctx.len() > max {
                return Err(ProbeError::ContextOverflow { len: ctx.len(), max });
            }
            let logits = forward(params, &ctx, false)?.logits;
            let positions = start..ctx.len();
            let n = positions.len() as f64;
            let h = positions.map(|t| entropy(logits.row(t))).sum::<f64>() / n;
            Ok(EntropyRow { problem_seed: r.problem_seed, entropy: h })
        })
        .collect::<Result<Vec<_>, ProbeError>>()?;
    let values: Vec<f64> = rows.iter().map(|r| r.entropy).collect();
    Ok(EntropyReport { n: rows.len(), mean: mean(&values), std: std_dev(&values), window, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    WithCritique,
    WithoutCritique,
}

/// Full-parameter gradient L2 norm of the refined-answer loss for one
/// record, rendered with or without the critique. No update is taken.
pub fn grad_norm_probe(params: &ModelParams, record: &AugmentedRecord, condition: Condition) -> Result<f64, ProbeError> {
    let obj = match condition {
        Condition::WithCritique => Objective::Cgd,
        Condition::WithoutCritique => Objective::CgdNoCritique,
    };
    let ex = render(record, "", obj, params.config.max_seq_len)?;
    let (_, grads) = loss_and_grads(params, &[&ex])?;
    Ok(grad_l2_norm(&grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradNormRow {
    pub problem_seed: u64,
    pub with_critique: f64,
    pub without_critique: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradNormReport {
    pub n: usize,
    pub mean_with: f64,
    pub mean_without: f64,
    pub std_with: f64,
    pub std_without: f64,
    pub rows: Vec<GradNormRow>,
}

pub fn grad_norm_report(params: &ModelParams, records: &[AugmentedRecord]) -> Result<GradNormReport, ProbeError> {
    let rows = records
        .iter()
        .map(|r| {
            Ok(GradNormRow {
                problem_seed: r.problem_seed,
                with_critique: grad_norm_probe(params, r, Condition::WithCritique)?,
                without_critique: grad_norm_probe(params, r, Condition::WithoutCritique)?,
            })
        })
        .collect::<Result<Vec<_>, ProbeError>>()?;
    let with: Vec<f64> = rows.iter().map(|r| r.with_critique).collect();
    let without: Vec<f64> = rows.iter().map(|r| r.without_critique).collect();
    Ok(GradNormReport {
        n: rows.len(),
        mean_with: mean(&with),
        mean_without: mean(&without),
        std_with: std_dev(&with),
        std_without: std_dev(&without),
        rows,
    })
}
