use serde::{Deserialize, Serialize};

use super::ProbeError;
use crate::datagen::AugmentedRecord;
use crate::engine::{generate, AttentionCapture, Decode, GenerateOptions, ModelParams, Section, Tensor};
use crate::tokenizer::EOS;
use crate::training::cgd_context;

/// Generation phases. `FirstToken` is the first generated token alone;
/// `Early`, `Middle` and `Late` partition all generated tokens by the
/// midpoint fraction `(i + 0.5) / n` at 0.25 and 0.75.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    FirstToken,
    Early,
    Middle,
    Late,
}

impl Phase {
    fn of(i: usize, n: usize) -> Phase {
        let f = (i as f64 + 0.5) / n as f64;
        if f < 0.25 {
            Phase::Early
        } else if f < 0.75 {
            Phase::Middle
        } else {
            Phase::Late
        }
    }
}

/// Percentages of attention on (problem, student answer, critique).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseShare {
    pub phase: Phase,
    pub tokens: usize,
    pub problem: f64,
    pub student_answer: f64,
    pub critique: f64,
}

impl PhaseShare {
    pub fn total(&self) -> f64 {
        self.problem + self.student_answer + self.critique
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFlow {
    pub layer: usize,
    /// Phases with at least one token, in phase order.
    pub phases: Vec<PhaseShare>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionFlowReport {
    pub problem_seed: u64,
    pub generated: usize,
    pub sections: Vec<Section>,
    pub layers: Vec<LayerFlow>,
}

/// Attention mass of query `row` over the three sections, renormalized to
/// percentages.
pub fn section_shares(attn: &Tensor, row: usize, sections: &[Section]) -> [f64; 3] {
    let probs = attn.row(row);
    let mut mass = [0.0; 3];
    for (m, s) in mass.iter_mut().zip(sections) {
        *m = probs[s.start..s.end].iter().sum();
    }
    let total: f64 = mass.iter().sum();
    if total > 0.0 {
        mass.iter_mut().for_each(|m| *m *= 100.0 / total);
    }
    mass
}

/// Per-layer, per-phase mean shares for `n_generated` tokens following a
/// context of `context_len` tokens.
pub fn aggregate_flow(capture: &AttentionCapture, context_len: usize, n_generated: usize) -> Vec<LayerFlow> {
    capture
        .layers
        .iter()
        .enumerate()
        .map(|(layer, attn)| {
            let mut acc: Vec<(Phase, usize, [f64; 3])> = Vec::new();
            let mut add = |phase: Phase, s: [f64; 3]| match acc.iter_mut().find(|(p, _, _)| *p == phase) {
                Some((_, n, sum)) => {
                    *n += 1;
                    sum.iter_mut().zip(s).for_each(|(a, b)| *a += b);
                }
                None => acc.push((phase, 1, s)),
            };
            for i in 0..n_generated {
                let s = section_shares(attn, context_len - 1 + i, &capture.sections);
                if i == 0 {
                    add(Phase::FirstToken, s);
                }
                add(Phase::of(i, n_generated), s);
            }
            acc.sort_by_key(|(p, _, _)| *p);
            let phases = acc
                .into_iter()
                .map(|(phase, n, sum)| PhaseShare {
                    phase,
                    tokens: n,
                    problem: sum[0] / n as f64,
                    student_answer: sum[1] / n as f64,
                    critique: sum[2] / n as f64,
                })
                .collect();
            LayerFlow { layer, phases }
        })
        .collect()
}

/// Greedy generation from the full critique-conditioned context with
/// attention capture, aggregated by section and phase. The stop token counts
/// as generated.
pub fn attention_flow(params: &ModelParams, record: &AugmentedRecord, max_new: usize) -> Result<AttentionFlowReport, ProbeError> {
    let (ctx, sections) = cgd_context(&record.prompt, &record.initial_answer, &record.critique)?;
    let max = params.config.max_seq_len;
    if ctx.len() >= max {
        return Err(ProbeError::ContextOverflow { len: ctx.len(), max });
    }
    let opts =
        GenerateOptions { max_new: max_new.min(max - ctx.len()), decode: Decode::Greedy, stop_token: Some(EOS), capture: true };
    let g = generate(params, &ctx, &opts)?;
    let mut capture = g.capture.ok_or(ProbeError::CaptureMissing)?;
    capture.sections = sections.clone();
    Ok(AttentionFlowReport {
        problem_seed: record.problem_seed,
        generated: g.tokens.len(),
        layers: aggregate_flow(&capture, ctx.len(), g.tokens.len()),
        sections,
    })
}
