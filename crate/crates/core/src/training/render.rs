use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::datagen::AugmentedRecord;
use crate::engine::Section;
use crate::taskworld::{render_solution, Problem};
use crate::tokenizer::{self, ANSWER, CRITIQUE, EOS, INITIAL, PROMPT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Sft,
    DistilledSft,
    Cft,
    Cgd,
    CgdNoCritique,
}

impl Objective {
    pub const ALL: [Objective; 5] =
        [Objective::Sft, Objective::DistilledSft, Objective::Cft, Objective::Cgd, Objective::CgdNoCritique];

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Sft => "sft",
            Objective::DistilledSft => "distilled_sft",
            Objective::Cft => "cft",
            Objective::Cgd => "cgd",
            Objective::CgdNoCritique => "cgd_no_critique",
        }
    }

    /// Display name used in tables.
    pub fn label(self) -> &'static str {
        match self {
            Objective::Sft => "SFT",
            Objective::DistilledSft => "Distilled SFT",
            Objective::Cft => "CFT",
            Objective::Cgd => "CGD",
            Objective::CgdNoCritique => "CGD w/o critique",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Objective {
    type Err = TrainError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Objective::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| TrainError::UnknownObjective(s.to_string()))
    }
}

/// One rendered training sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedExample {
    /// `context ‖ target` (without the terminator).
    pub input_ids: Vec<usize>,
    /// `input_ids` shifted left by one, ending in `<|eos|>`.
    pub target_ids: Vec<usize>,
    /// True exactly where `target_ids` is a target token or the terminator.
    pub loss_mask: Vec<bool>,
    pub context_len: usize,
}

impl TokenizedExample {
    pub fn masked_count(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m).count()
    }

    /// Target tokens, terminator excluded.
    pub fn target(&self) -> &[usize] {
        &self.input_ids[self.context_len..]
    }
}

fn text(s: &str) -> Result<Vec<usize>, TrainError> {
    Ok(tokenizer::encode(s)?)
}

/// `<|prompt|> x <|answer|>`: the prompt-only context used at evaluation.
pub fn answer_context(prompt: &str) -> Result<Vec<usize>, TrainError> {
    let mut ids = vec![PROMPT];
    ids.extend(text(prompt)?);
    ids.push(ANSWER);
    Ok(ids)
}

/// `<|prompt|> x <|initial|> y′ <|critique|> c <|answer|>` with its sections:
/// the problem, the student answer and the critique, each including the
/// delimiter that opens it.
pub fn cgd_context(prompt: &str, initial: &str, critique: &str) -> Result<(Vec<usize>, Vec<Section>), TrainError> {
    let mut ids = vec![PROMPT];
    ids.extend(text(prompt)?);
    let initial_at = ids.len();
    ids.push(INITIAL);
    ids.extend(text(initial)?);
    let critique_at = ids.len();
    ids.push(CRITIQUE);
    ids.extend(text(critique)?);
    let answer_at = ids.len();
    ids.push(ANSWER);
    let sections = vec![
        Section { name: "problem".into(), start: 0, end: initial_at },
        Section { name: "student_answer".into(), start: initial_at, end: critique_at },
        Section { name: "critique".into(), start: critique_at, end: answer_at },
    ];
    Ok((ids, sections))
}

fn context_for(obj: Objective, r: &AugmentedRecord) -> Result<Vec<usize>, TrainError> {
    let mut ids = vec![PROMPT];
    ids.extend(text(&r.prompt)?);
    match obj {
        Objective::Sft | Objective::DistilledSft => ids.push(ANSWER),
        Objective::Cft => {
            ids.push(INITIAL);
            ids.extend(text(&r.initial_answer)?);
            ids.push(CRITIQUE);
        }
        Objective::Cgd => return Ok(cgd_context(&r.prompt, &r.initial_answer, &r.critique)?.0),
        Objective::CgdNoCritique => {
            ids.push(INITIAL);
            ids.extend(text(&r.initial_answer)?);
            ids.push(ANSWER);
        }
    }
    Ok(ids)
}

/// Joins context and target; the loss mask covers the target and the
/// terminator only.
pub fn assemble(context: Vec<usize>, target: &[usize], max_len: usize) -> Result<TokenizedExample, TrainError> {
    let context_len = context.len();
    let mut input_ids = context;
    input_ids.extend_from_slice(target);
    if input_ids.len() > max_len {
        return Err(TrainError::SequenceTooLong { len: input_ids.len(), max: max_len });
    }
    let mut target_ids = input_ids[1..].to_vec();
    target_ids.push(EOS);
    let loss_mask = (0..input_ids.len()).map(|t| t + 1 >= context_len).collect();
    Ok(TokenizedExample { input_ids, target_ids, loss_mask, context_len })
}

/// Renders `record` for `obj`; `gold` is the reference answer used by SFT.
pub fn render(record: &AugmentedRecord, gold: &str, obj: Objective, max_len: usize) -> Result<TokenizedExample, TrainError> {
    let target = match obj {
        Objective::Sft => gold,
        Objective::DistilledSft | Objective::Cgd | Objective::CgdNoCritique => &record.refined_answer,
        Objective::Cft => &record.critique,
    };
    assemble(context_for(obj, record)?, &text(target)?, max_len)
}

/// Prompt → gold derivation, used to pretrain the student.
pub fn render_gold(problem: &Problem, max_len: usize) -> Result<TokenizedExample, TrainError> {
    assemble(answer_context(&problem.prompt)?, &text(&render_solution(problem))?, max_len)
}
