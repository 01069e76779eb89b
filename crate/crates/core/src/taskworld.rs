//! Synthetic step-by-step tasks and the rule-based teacher.
//!
//! Canonical answer grammar (shared with evaluation):
//!
//! ```text
//! step 1: 3+5=8
//! step 2: 8+9=17
//! step 3: 17 mod 10=7
//! Answer: 7
//! ```
//!
//! Critiques end with exactly one marker line, [`MARKER_RIGHT`] or
//! [`MARKER_WRONG`]. Refined answers never contain a marker.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MARKER_RIGHT: &str = "Conclusion: right.";
pub const MARKER_WRONG: &str = "Conclusion: wrong.";
pub const ANSWER_PREFIX: &str = "Answer: ";
pub const STEP_PREFIX: &str = "step ";

const CHAINED_MODULUS: i64 = 10;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaskError {
    #[error("invalid difficulty: {0}")]
    InvalidDifficulty(String),
    #[error("unknown task kind {0:?}")]
    UnknownKind(String),
    #[error("unknown corruption mode {0:?}")]
    UnknownMode(String),
    #[error("problem set needs at least one task kind")]
    NoKinds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    ChainedArithmetic,
    ListSortTrace,
    ModularEval,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::ChainedArithmetic, TaskKind::ListSortTrace, TaskKind::ModularEval];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::ChainedArithmetic => "chained-arithmetic",
            TaskKind::ListSortTrace => "list-sort-trace",
            TaskKind::ModularEval => "modular-eval",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = TaskError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| TaskError::UnknownKind(s.to_string()))
    }
}

/// Step count plus the inclusive operand range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Difficulty {
    pub steps: usize,
    pub min_operand: i64,
    pub max_operand: i64,
}

impl Difficulty {
    pub fn validate(&self) -> Result<(), TaskError> {
        if self.steps < 2 {
            return Err(TaskError::InvalidDifficulty(format!("step count {} < 2", self.steps)));
        }
        if self.min_operand < 0 || self.min_operand > self.max_operand {
            return Err(TaskError::InvalidDifficulty(format!(
                "operand range [{}, {}] is empty or negative",
                self.min_operand, self.max_operand
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub expr: String,
    pub value: String,
}

/// Task-specific payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TaskSpec {
    /// `operands[0] op[0] operands[1] op[1] ...`, then `mod modulus`.
    Chain { operands: Vec<i64>, ops: Vec<char>, modulus: i64 },
    /// Selection-sort trace of `items`.
    Sort { items: Vec<i64> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub kind: TaskKind,
    pub difficulty: Difficulty,
    pub seed: u64,
    pub spec: TaskSpec,
    pub prompt: String,
    pub gold_steps: Vec<Step>,
    pub gold_answer: String,
}

fn kind_salt(kind: TaskKind) -> u64 {
    match kind {
        TaskKind::ChainedArithmetic => 0x43_48_41_49,
        TaskKind::ListSortTrace => 0x53_4f_52_54,
        TaskKind::ModularEval => 0x4d_4f_44_45,
    }
}

/// Deterministic problem for `(kind, difficulty, seed)`.
pub fn sample_problem(kind: TaskKind, difficulty: Difficulty, seed: u64) -> Result<Problem, TaskError> {
    difficulty.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ kind_salt(kind).rotate_left(32));
    let operand = |rng: &mut ChaCha8Rng| rng.gen_range(difficulty.min_operand..=difficulty.max_operand);
    let spec = match kind {
        TaskKind::ChainedArithmetic | TaskKind::ModularEval => {
            let n_ops = difficulty.steps - 1;
            let operands: Vec<i64> = (0..difficulty.steps).map(|_| operand(&mut rng)).collect();
            let mut ops = Vec::with_capacity(n_ops);
            let mut acc = operands[0];
            for &x in &operands[1..] {
                let op = if kind == TaskKind::ChainedArithmetic {
                    if rng.gen_bool(0.5) && acc >= x {
                        '-'
                    } else {
                        '+'
                    }
                } else if rng.gen_bool(0.5) {
                    '*'
                } else {
                    '+'
                };
                acc = apply(acc, op, x);
                ops.push(op);
            }
            let modulus = if kind == TaskKind::ChainedArithmetic { CHAINED_MODULUS } else { rng.gen_range(5..=9) };
            TaskSpec::Chain { operands, ops, modulus }
        }
        TaskKind::ListSortTrace => TaskSpec::Sort { items: (0..difficulty.steps).map(|_| operand(&mut rng)).collect() },
    };
    let (prompt, gold_steps, gold_answer) = derive(&spec);
    let problem = Problem { kind, difficulty, seed, spec, prompt, gold_steps, gold_answer };
    debug_assert!(verify(&problem, &render_solution(&problem)).correct);
    Ok(problem)
}

/// Disjoint problem-seed ranges for training, evaluation and probe sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
    Probe,
}

const SPLIT_SPAN: u64 = 1 << 40;

impl Split {
    /// Seeds of this split lie in `[base, base + 2^40)`.
    pub fn base(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Eval => SPLIT_SPAN,
            Split::Probe => 2 * SPLIT_SPAN,
        }
    }

    pub fn contains(self, seed: u64) -> bool {
        (self.base()..self.base() + SPLIT_SPAN).contains(&seed)
    }
}

/// `n` problems cycling through `kinds`, with consecutive seeds starting at
/// `split.base() + stream % 2^39`.
pub fn problem_set(
    split: Split,
    stream: u64,
    kinds: &[TaskKind],
    difficulty: Difficulty,
    n: usize,
) -> Result<Vec<Problem>, TaskError> {
    if kinds.is_empty() {
        return Err(TaskError::NoKinds);
    }
    let start = split.base() + stream % (SPLIT_SPAN / 2);
    (0..n).map(|i| sample_problem(kinds[i % kinds.len()], difficulty, start + i as u64)).collect()
}

fn apply(a: i64, op: char, b: i64) -> i64 {
    match op {
        '+' => a + b,
        '-' => a - b,
        '*' => a * b,
        _ => unreachable!("operator {op}"),
    }
}

fn join(items: &[i64]) -> String {
    items.iter().map(i64::to_string).collect::<Vec<_>>().join(",")
}

fn derive(spec: &TaskSpec) -> (String, Vec<Step>, String) {
    match spec {
        TaskSpec::Chain { operands, ops, modulus } => {
            let mut prompt = operands[0].to_string();
            let mut steps = Vec::new();
            let mut acc = operands[0];
            for (i, (&op, &x)) in ops.iter().zip(&operands[1..]).enumerate() {
                prompt = if i == 0 { format!("{prompt}{op}{x}") } else { format!("({prompt}){op}{x}") };
                let next = apply(acc, op, x);
                steps.push(Step { expr: format!("{acc}{op}{x}"), value: next.to_string() });
                acc = next;
            }
            let prompt = format!("({prompt}) mod {modulus}");
            let answer = acc.rem_euclid(*modulus);
            steps.push(Step { expr: format!("{acc} mod {modulus}"), value: answer.to_string() });
            (prompt, steps, answer.to_string())
        }
        TaskSpec::Sort { items } => {
            let mut rest = items.clone();
            let mut steps = Vec::new();
            let mut sorted = Vec::new();
            while !rest.is_empty() {
                let (idx, &min) = rest.iter().enumerate().min_by_key(|(_, &v)| v).expect("non-empty");
                steps.push(Step { expr: format!("min({})", join(&rest)), value: min.to_string() });
                sorted.push(min);
                rest.remove(idx);
            }
            (format!("sort {}", join(items)), steps, join(&sorted))
        }
    }
}

/// Gold derivation in the canonical grammar.
pub fn render_solution(p: &Problem) -> String {
    render_steps(&p.gold_steps, &p.gold_answer)
}

fn render_steps(steps: &[Step], answer: &str) -> String {
    let mut out = String::new();
    for (i, s) in steps.iter().enumerate() {
        out.push_str(&format!("{STEP_PREFIX}{}: {}={}\n", i + 1, s.expr, s.value));
    }
    out.push_str(ANSWER_PREFIX);
    out.push_str(answer);
    out
}

/// A step line as written, with its claimed index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedStep {
    pub index: usize,
    pub expr: String,
    pub value: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedAnswer {
    pub steps: Vec<ParsedStep>,
    /// Value of the last `Answer:` line.
    pub answer: Option<String>,
}

fn parse_step_line(line: &str) -> Option<ParsedStep> {
    let rest = line.strip_prefix(STEP_PREFIX)?;
    let (idx, body) = rest.split_once(": ")?;
    let index = idx.parse().ok()?;
    let (expr, value) = body.rsplit_once('=')?;
    Some(ParsedStep { index, expr: expr.trim().to_string(), value: value.trim().to_string() })
}

/// Lenient parse of arbitrary text; lines outside the grammar are skipped.
pub fn parse_answer(text: &str) -> ParsedAnswer {
    let mut parsed = ParsedAnswer::default();
    for line in text.lines().map(str::trim) {
        if let Some(a) = line.strip_prefix(ANSWER_PREFIX) {
            parsed.answer = Some(a.trim().to_string());
        } else if let Some(s) = parse_step_line(line) {
            parsed.steps.push(s);
        }
    }
    parsed
}

/// Final answer value of a generation, if any.
pub fn extract_final_answer(text: &str) -> Option<String> {
    parse_answer(text).answer
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub correct: bool,
    /// 1-based; `steps + 1` designates the `Answer:` line.
    pub first_wrong_step: Option<usize>,
    pub expected_value: Option<String>,
    /// What the answer claimed at the first wrong step, when it claimed anything.
    pub found_value: Option<String>,
}

/// Step-level check of `answer_text` against `p`. Total: garbage is wrong at step 1.
pub fn verify(p: &Problem, answer_text: &str) -> Verdict {
    let parsed = parse_answer(answer_text);
    let n = p.gold_steps.len();
    let wrong = |k: usize, expected: &str, found: Option<&str>| Verdict {
        correct: false,
        first_wrong_step: Some(k),
        expected_value: Some(expected.to_string()),
        found_value: found.map(str::to_string),
    };
    for (i, gold) in p.gold_steps.iter().enumerate() {
        match parsed.steps.get(i) {
            Some(s) if s.index == i + 1 && s.value == gold.value => {}
            Some(s) if s.index == i + 1 => return wrong(i + 1, &gold.value, Some(&s.value)),
            _ => return wrong(i + 1, &gold.value, None),
        }
    }
    if parsed.steps.len() > n {
        return wrong(n + 1, &p.gold_answer, None);
    }
    match parsed.answer.as_deref() {
        Some(a) if a == p.gold_answer => Verdict { correct: true, first_wrong_step: None, expected_value: None, found_value: None },
        found => wrong(n + 1, &p.gold_answer, found),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conclusion {
    Right,
    Wrong,
}

impl Conclusion {
    pub fn marker(self) -> &'static str {
        match self {
            Conclusion::Right => MARKER_RIGHT,
            Conclusion::Wrong => MARKER_WRONG,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Conclusion::Right => Conclusion::Wrong,
            Conclusion::Wrong => Conclusion::Right,
        }
    }

    /// Conclusion stated by the final line of `text`.
    pub fn of_text(text: &str) -> Option<Self> {
        match text.lines().last()? {
            MARKER_RIGHT => Some(Conclusion::Right),
            MARKER_WRONG => Some(Conclusion::Wrong),
            _ => None,
        }
    }
}

/// Teacher critique. For critiques straight from [`critique`],
/// `verdict == Right` iff `first_wrong_step` is `None`; corrupted critiques
/// only guarantee the marker line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Critique {
    pub text: String,
    pub verdict: Conclusion,
    pub first_wrong_step: Option<usize>,
    pub correction_hint: Option<String>,
}

impl Critique {
    fn assemble(body: &str, verdict: Conclusion) -> String {
        if body.is_empty() {
            verdict.marker().to_string()
        } else {
            format!("{body}\n{}", verdict.marker())
        }
    }

    /// Text without the marker line.
    pub fn body(&self) -> &str {
        let marker = self.verdict.marker();
        self.text.strip_suffix(marker).map(|b| b.strip_suffix('\n').unwrap_or(b)).unwrap_or(&self.text)
    }
}

/// Discursive critique of `initial_answer`: locates the first error, says
/// what the step should give, and concludes.
pub fn critique(p: &Problem, initial_answer: &str) -> Critique {
    let v = verify(p, initial_answer);
    if v.correct {
        let body = format!("Every step checks out and the answer {} is correct.", p.gold_answer);
        return Critique {
            text: Critique::assemble(&body, Conclusion::Right),
            verdict: Conclusion::Right,
            first_wrong_step: None,
            correction_hint: None,
        };
    }
    let k = v.first_wrong_step.expect("wrong verdict has a step");
    let expected = v.expected_value.clone().expect("wrong verdict has a value");
    let n = p.gold_steps.len();
    let body = if k > n {
        match &v.found_value {
            Some(found) => format!("The steps are fine but the final answer is {expected}, not {found}."),
            None => format!("The steps are fine but the final answer line should say {expected}."),
        }
    } else {
        let expr = &p.gold_steps[k - 1].expr;
        match &v.found_value {
            Some(found) => format!("The first error is in step {k}: {expr} is {expected}, not {found}."),
            None => format!("The first error is in step {k}: it is missing. {expr} is {expected}."),
        }
    };
    Critique {
        text: Critique::assemble(&body, Conclusion::Wrong),
        verdict: Conclusion::Wrong,
        first_wrong_step: Some(k),
        correction_hint: Some(expected),
    }
}

/// Refined answer: the initial answer restyled when it is right, otherwise
/// the full corrected derivation. Always verifies.
pub fn refine(p: &Problem, initial_answer: &str, _critique: &Critique) -> String {
    // The oracle re-checks instead of trusting the critique, so a corrupted
    // critique can never produce a wrong refinement.
    if verify(p, initial_answer).correct {
        let parsed = parse_answer(initial_answer);
        let steps: Vec<Step> = p
            .gold_steps
            .iter()
            .zip(&parsed.steps)
            .map(|(g, s)| Step { expr: g.expr.clone(), value: s.value.clone() })
            .collect();
        render_steps(&steps, parsed.answer.as_deref().unwrap_or(&p.gold_answer))
    } else {
        render_solution(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionMode {
    Nonsense,
    FlipConclusion,
    Blank,
}

impl FromStr for CorruptionMode {
    type Err = TaskError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nonsense" => Ok(CorruptionMode::Nonsense),
            "flip_conclusion" => Ok(CorruptionMode::FlipConclusion),
            "blank" => Ok(CorruptionMode::Blank),
            other => Err(TaskError::UnknownMode(other.to_string())),
        }
    }
}

/// Off-topic bodies for counterfactual critiques. No digits, no step references.
const NONSENSE_BODIES: [&str; 5] = [
    "The quadratic formula was applied with the wrong sign on the discriminant.",
    "The derivative of the logarithm term was dropped when simplifying.",
    "The triangle inequality is violated by the chosen side lengths.",
    "The prime factorization forgot to include the largest prime factor.",
    "The integral was evaluated without changing the limits after substitution.",
];

/// Degrades a critique for robustness studies.
pub fn corrupt_critique(c: &Critique, mode: CorruptionMode, seed: u64) -> Critique {
    match mode {
        CorruptionMode::Nonsense => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let body = NONSENSE_BODIES.choose(&mut rng).expect("non-empty");
            Critique {
                text: Critique::assemble(body, c.verdict),
                verdict: c.verdict,
                first_wrong_step: None,
                correction_hint: None,
            }
        }
        CorruptionMode::FlipConclusion => {
            let flipped = c.verdict.flipped();
            Critique {
                text: Critique::assemble(c.body(), flipped),
                verdict: flipped,
                first_wrong_step: if flipped == Conclusion::Right { None } else { c.first_wrong_step },
                correction_hint: if flipped == Conclusion::Right { None } else { c.correction_hint.clone() },
            }
        }
        CorruptionMode::Blank => Critique {
            text: Critique::assemble("", c.verdict),
            verdict: c.verdict,
            first_wrong_step: None,
            correction_hint: None,
        },
    }
}

/// Number of lines in `text` that are exactly a conclusion marker.
pub fn marker_lines(text: &str) -> usize {
    text.lines().filter(|l| *l == MARKER_RIGHT || *l == MARKER_WRONG).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn example() -> Problem {
        let spec = TaskSpec::Chain { operands: vec![3, 5, 9], ops: vec!['+', '+'], modulus: 10 };
        let (prompt, gold_steps, gold_answer) = derive(&spec);
        Problem {
            kind: TaskKind::ChainedArithmetic,
            difficulty: Difficulty { steps: 3, min_operand: 1, max_operand: 9 },
            seed: 0,
            spec,
            prompt,
            gold_steps,
            gold_answer,
        }
    }

    const DIFF: Difficulty = Difficulty { steps: 3, min_operand: 1, max_operand: 9 };

    #[test]
    fn worked_example() {
        let p = example();
        assert_eq!(p.prompt, "((3+5)+9) mod 10");
        let values: Vec<&str> = p.gold_steps.iter().map(|s| s.value.as_str()).collect();
        assert_eq!(values, ["8", "17", "7"]);
        assert_eq!(p.gold_answer, "7");
        assert_eq!(render_solution(&p), "step 1: 3+5=8\nstep 2: 8+9=17\nstep 3: 17 mod 10=7\nAnswer: 7");
    }

    #[test]
    fn sampling_is_deterministic_and_validated() {
        for kind in TaskKind::ALL {
            assert_eq!(sample_problem(kind, DIFF, 42).unwrap(), sample_problem(kind, DIFF, 42).unwrap());
        }
        let bad = Difficulty { steps: 1, ..DIFF };
        assert!(matches!(sample_problem(TaskKind::ChainedArithmetic, bad, 0), Err(TaskError::InvalidDifficulty(_))));
        let empty = Difficulty { min_operand: 5, max_operand: 4, ..DIFF };
        assert!(sample_problem(TaskKind::ListSortTrace, empty, 0).is_err());
    }

    #[test]
    fn sort_trace_shape() {
        let p = sample_problem(TaskKind::ListSortTrace, DIFF, 7).unwrap();
        assert!(p.prompt.starts_with("sort "));
        assert_eq!(p.gold_steps.len(), 3);
        assert!(p.gold_steps[0].expr.starts_with("min("));
    }

    #[test]
    fn render_then_parse_keeps_values() {
        let p = example();
        let parsed = parse_answer(&render_solution(&p));
        let values: Vec<String> = parsed.steps.iter().map(|s| s.value.clone()).collect();
        let gold: Vec<String> = p.gold_steps.iter().map(|s| s.value.clone()).collect();
        assert_eq!(values, gold);
        assert_eq!(parsed.answer.as_deref(), Some("7"));
    }

    #[test]
    fn verify_locates_first_error() {
        let p = example();
        assert!(verify(&p, &render_solution(&p)).correct);
        let altered = render_solution(&p).replace("8+9=17", "8+9=16");
        let v = verify(&p, &altered);
        assert!(!v.correct);
        assert_eq!(v.first_wrong_step, Some(2));
        assert_eq!(v.expected_value.as_deref(), Some("17"));
        let garbage = verify(&p, "%%% not an answer");
        assert_eq!((garbage.correct, garbage.first_wrong_step), (false, Some(1)));
        assert_eq!(garbage.expected_value.as_deref(), Some("8"));
        let bad_answer = render_solution(&p).replace("Answer: 7", "Answer: 8");
        assert_eq!(verify(&p, &bad_answer).first_wrong_step, Some(4));
        let no_answer = render_solution(&p).replace("\nAnswer: 7", "");
        assert_eq!(verify(&p, &no_answer).first_wrong_step, Some(4));
        let extra = render_solution(&p).replace("Answer: 7", "step 4: 7+0=7\nAnswer: 7");
        assert!(!verify(&p, &extra).correct);
    }

    #[test]
    fn critique_text_contract() {
        let p = example();
        let right = critique(&p, &render_solution(&p));
        assert!(right.text.ends_with("\nConclusion: right."));
        assert_eq!(right.verdict, Conclusion::Right);
        assert_eq!(right.first_wrong_step, None);
        let wrong = critique(&p, &render_solution(&p).replace("8+9=17", "8+9=16"));
        assert!(wrong.text.contains("step 2") && wrong.text.contains("17") && wrong.text.ends_with(MARKER_WRONG));
        assert_eq!(wrong.first_wrong_step, Some(2));
        assert_eq!(marker_lines(&wrong.text), 1);
        assert_eq!(Conclusion::of_text(&wrong.text), Some(Conclusion::Wrong));
        assert!(!critique(&p, "").text.is_empty());
    }

    #[test]
    fn refine_contract() {
        let p = example();
        let bad = render_solution(&p).replace("8+9=17", "8+9=16");
        let c = critique(&p, &bad);
        assert_eq!(refine(&p, &bad, &c), render_solution(&p));
        let sloppy = "  step 1: 3 + 5 = 8\nstep 2: 8+9 =17\nstep 3: 17 mod 10= 7\nAnswer:  7 ";
        let c = critique(&p, sloppy);
        assert_eq!(c.verdict, Conclusion::Right);
        let refined = refine(&p, sloppy, &c);
        assert_eq!(refined, render_solution(&p));
        assert_eq!(extract_final_answer(&refined).as_deref(), Some("7"));
        assert_eq!(marker_lines(&refined), 0);
    }

    #[test]
    fn corruption_modes() {
        let p = example();
        let c = critique(&p, &render_solution(&p).replace("8+9=17", "8+9=16"));
        let n = corrupt_critique(&c, CorruptionMode::Nonsense, 3);
        assert!(!n.text.contains("step") && !n.text.chars().any(|ch| ch.is_ascii_digit()));
        assert!(n.text.ends_with(MARKER_WRONG));
        let f = corrupt_critique(&c, CorruptionMode::FlipConclusion, 0);
        assert!(f.text.ends_with(MARKER_RIGHT));
        assert_eq!(f.body(), c.body());
        let ff = corrupt_critique(&f, CorruptionMode::FlipConclusion, 0);
        assert_eq!(ff.text, c.text);
        let b = corrupt_critique(&c, CorruptionMode::Blank, 0);
        assert_eq!(b.text, MARKER_WRONG);
        assert_eq!("flip_conclusion".parse::<CorruptionMode>().unwrap(), CorruptionMode::FlipConclusion);
        assert!(matches!("shuffle".parse::<CorruptionMode>(), Err(TaskError::UnknownMode(_))));
    }

    proptest! {
        #[test]
        fn oracle_soundness(kind_idx in 0usize..3, seed in any::<u64>(), steps in 2usize..5,
                            noise in "[ -~\n]{0,40}", corrupt_step in 0usize..6) {
            let kind = TaskKind::ALL[kind_idx];
            let p = sample_problem(kind, Difficulty { steps, min_operand: 0, max_operand: 12 }, seed).unwrap();
            let gold = render_solution(&p);
            prop_assert!(verify(&p, &gold).correct);
            prop_assert_eq!(marker_lines(&gold), 0);
            let mut lines: Vec<String> = gold.lines().map(str::to_string).collect();
            if corrupt_step < lines.len() {
                lines[corrupt_step] = noise.clone();
            }
            let attempt = lines.join("\n");
            let c = critique(&p, &attempt);
            let v = verify(&p, &attempt);
            prop_assert_eq!(c.verdict == Conclusion::Right, v.correct);
            prop_assert_eq!(c.first_wrong_step, v.first_wrong_step);
            prop_assert_eq!(marker_lines(&c.text), 1);
            let refined = refine(&p, &attempt, &c);
            prop_assert!(verify(&p, &refined).correct);
            prop_assert_eq!(marker_lines(&refined), 0);
            prop_assert!(crate::tokenizer::encode(&p.prompt).is_ok());
        }
    }
}
