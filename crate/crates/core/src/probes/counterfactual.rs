use serde::{Deserialize, Serialize};

use super::eval::Responder;
use super::ProbeError;
use crate::datagen::AugmentedRecord;
use crate::taskworld::{corrupt_critique, critique, verify, CorruptionMode};
use crate::training::cgd_context;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterfactualOutcome {
    pub problem_seed: u64,
    pub factual_correct: bool,
    pub counterfactual_correct: bool,
}

/// Responds to `x ‖ y′ ‖ c` twice: once with the teacher's critique of the
/// record's initial answer and once with an off-topic critique carrying the
/// same conclusion. Both responses are verified against the problem.
pub fn counterfactual_probe(responder: &dyn Responder, record: &AugmentedRecord) -> Result<CounterfactualOutcome, ProbeError> {
    let problem = record.problem()?;
    let factual = critique(&problem, &record.initial_answer);
    let nonsense = corrupt_critique(&factual, CorruptionMode::Nonsense, record.problem_seed);
    let run = |text: &str| -> Result<bool, ProbeError> {
        let (ctx, _) = cgd_context(&record.prompt, &record.initial_answer, text)?;
        Ok(verify(&problem, &responder.respond(&problem, &ctx)?).correct)
    };
    Ok(CounterfactualOutcome {
        problem_seed: record.problem_seed,
        factual_correct: run(&factual.text)?,
        counterfactual_correct: run(&nonsense.text)?,
    })
}

/// 2×2 outcome counts: factual correct/incorrect × counterfactual
/// correct/incorrect (an incorrect counterfactual answer is a derailment).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterfactualTable {
    pub n: usize,
    pub both_correct: usize,
    pub factual_only: usize,
    pub counterfactual_only: usize,
    pub neither: usize,
}

impl CounterfactualTable {
    pub fn factual_correct(&self) -> usize {
        self.both_correct + self.factual_only
    }

    pub fn counterfactual_correct(&self) -> usize {
        self.both_correct + self.counterfactual_only
    }

    pub fn cells(&self) -> [[usize; 2]; 2] {
        [[self.both_correct, self.factual_only], [self.counterfactual_only, self.neither]]
    }
}

pub fn counterfactual_table(outcomes: &[CounterfactualOutcome]) -> CounterfactualTable {
    let mut t = CounterfactualTable { n: outcomes.len(), ..Default::default() };
    for o in outcomes {
        match (o.factual_correct, o.counterfactual_correct) {
            (true, true) => t.both_correct += 1,
            (true, false) => t.factual_only += 1,
            (false, true) => t.counterfactual_only += 1,
            (false, false) => t.neither += 1,
        }
    }
    t
}
