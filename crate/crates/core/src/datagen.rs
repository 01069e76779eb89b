//! Augmentation loop: for every problem, sample the student's initial answer,
//! have the teacher critique and refine it, and emit one record.
//!
//! Corpus file: one JSON object per line with fields `prompt`,
//! `initial_answer`, `critique`, `refined_answer`, `label`, `problem_seed`,
//! `task_kind`, `difficulty` (plus `corruption` when a critique was
//! corrupted). Provenance lives in the sidecar `<corpus>.meta`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{generate, Decode, EngineError, GenerateOptions, ModelParams};
use crate::seed::item_seed;
use crate::taskworld::{
    corrupt_critique, critique, refine, render_solution, sample_problem, Conclusion, ANSWER_PREFIX, CorruptionMode, Difficulty,
    Problem, TaskError, TaskKind,
};
use crate::tokenizer;
use crate::training::answer_context;

/// Stand-in initial answer when the student could not produce one.
pub const UNPARSEABLE_ANSWER: &str = "(no answer)";

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("no problems to augment")]
    NoProblems,
    #[error("student failed on record {index}: {source}")]
    Student { index: usize, source: EngineError },
    #[error("insufficient stratum: need {need_correct} correct / {need_incorrect} incorrect, have {have_correct} / {have_incorrect}")]
    InsufficientStratum { need_correct: usize, need_incorrect: usize, have_correct: usize, have_incorrect: usize },
    #[error("mixture fraction {0} outside [0, 1]")]
    BadFraction(f64),
    #[error("{path}:{line}: malformed record: {message}")]
    MalformedLine { path: PathBuf, line: usize, message: String },
    #[error("record {index} violates an invariant: {message}")]
    InvalidRecord { index: usize, message: String },
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Correct,
    Incorrect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedRecord {
    pub prompt: String,
    pub initial_answer: String,
    pub critique: String,
    pub refined_answer: String,
    pub label: Label,
    pub problem_seed: u64,
    pub task_kind: TaskKind,
    pub difficulty: Difficulty,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corruption: Option<CorruptionMode>,
}

impl AugmentedRecord {
    /// Regenerates the source problem from its seed.
    pub fn problem(&self) -> Result<Problem, TaskError> {
        sample_problem(self.task_kind, self.difficulty, self.problem_seed)
    }

    /// Non-empty text fields and label/marker agreement.
    pub fn check(&self) -> Result<(), String> {
        for (name, v) in [
            ("prompt", &self.prompt),
            ("initial_answer", &self.initial_answer),
            ("critique", &self.critique),
            ("refined_answer", &self.refined_answer),
        ] {
            if v.is_empty() {
                return Err(format!("{name} is empty"));
            }
        }
        let expected = match self.label {
            Label::Correct => Conclusion::Right,
            Label::Incorrect => Conclusion::Wrong,
        };
        if Conclusion::of_text(&self.critique) != Some(expected) {
            return Err(format!("label {:?} disagrees with the critique's conclusion marker", self.label));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub decode_temperature: f64,
    pub max_new: usize,
    pub corruption_rate: f64,
    pub corruption_mode: CorruptionMode,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self { decode_temperature: 0.8, max_new: 96, corruption_rate: 0.0, corruption_mode: CorruptionMode::Nonsense }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub student_checkpoint: String,
    pub gen_config: GenConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub records: Vec<AugmentedRecord>,
    pub provenance: Provenance,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }

    /// Fraction of records labelled correct.
    pub fn correct_ratio(&self) -> f64 {
        if self.records.is_empty() {
            0.0
        } else {
            self.count(Label::Correct) as f64 / self.records.len() as f64
        }
    }
}

/// Source of initial answers y′.
pub trait Student {
    /// Initial answer for `problem`; `truncate` asks the student to shrink its
    /// generation budget to fit the context.
    fn initial_answer(&self, problem: &Problem, seed: u64, truncate: bool) -> Result<String, EngineError>;

    fn id(&self) -> String;
}

/// The transformer student, sampling at a fixed temperature.
pub struct ModelStudent<'a> {
    pub params: &'a ModelParams,
    pub checkpoint_id: String,
    pub temperature: f64,
    pub max_new: usize,
}

impl Student for ModelStudent<'_> {
    fn initial_answer(&self, problem: &Problem, seed: u64, truncate: bool) -> Result<String, EngineError> {
        let prompt = answer_context(&problem.prompt).map_err(|e| EngineError::Format(e.to_string()))?;
        let room = self.params.config.max_seq_len.saturating_sub(prompt.len());
        let max_new = if truncate { self.max_new.min(room) } else { self.max_new };
        let opts = GenerateOptions {
            max_new,
            decode: Decode::Temperature { tau: self.temperature, seed },
            stop_token: Some(tokenizer::EOS),
            capture: false,
        };
        let g = generate(self.params, &prompt, &opts)?;
        Ok(tokenizer::decode(g.content()))
    }

    fn id(&self) -> String {
        self.checkpoint_id.clone()
    }
}

/// Test and baseline student: the gold derivation with each step value
/// independently replaced by a wrong one with probability `error_rate`.
pub struct NoisyOracleStudent {
    pub error_rate: f64,
}

impl Student for NoisyOracleStudent {
    fn initial_answer(&self, problem: &Problem, seed: u64, _truncate: bool) -> Result<String, EngineError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut lines: Vec<String> = render_solution(problem).lines().map(str::to_string).collect();
        for line in &mut lines {
            if !rng.gen_bool(self.error_rate) {
                continue;
            }
            let sep = if line.starts_with(ANSWER_PREFIX) { ' ' } else { '=' };
            if let Some((head, value)) = line.rsplit_once(sep) {
                let wrong = match value.parse::<i64>() {
                    Ok(v) => (v + rng.gen_range(1..=3)).to_string(),
                    Err(_) => "0".to_string(),
                };
                *line = format!("{head}{sep}{wrong}");
            }
        }
        Ok(lines.join("\n"))
    }

    fn id(&self) -> String {
        format!("noisy-oracle:{}", self.error_rate)
    }
}

fn label_of(c: Conclusion) -> Label {
    match c {
        Conclusion::Right => Label::Correct,
        Conclusion::Wrong => Label::Incorrect,
    }
}

fn augment_one(
    problem: &Problem,
    student: &dyn Student,
    cfg: &GenConfig,
    record_seed: u64,
    index: usize,
) -> Result<AugmentedRecord, DatagenError> {
    let decode_seed = item_seed(record_seed, 0);
    let initial = match student.initial_answer(problem, decode_seed, false) {
        Ok(y) => y,
        Err(EngineError::ContextOverflow { .. }) => match student.initial_answer(problem, decode_seed, true) {
            Ok(y) => y,
            Err(EngineError::ContextOverflow { .. }) | Err(EngineError::EmptyPrompt) => UNPARSEABLE_ANSWER.to_string(),
            Err(source) => return Err(DatagenError::Student { index, source }),
        },
        Err(source) => return Err(DatagenError::Student { index, source }),
    };
    let initial = tokenizer::sanitize(&initial);
    let initial = if initial.trim().is_empty() { UNPARSEABLE_ANSWER.to_string() } else { initial };

    let c = critique(problem, &initial);
    let refined = refine(problem, &initial, &c);

    let mut rng = ChaCha8Rng::seed_from_u64(item_seed(record_seed, 1));
    let corrupt = cfg.corruption_rate > 0.0 && rng.gen::<f64>() < cfg.corruption_rate;
    let (c, corruption) = if corrupt {
        (corrupt_critique(&c, cfg.corruption_mode, item_seed(record_seed, 2)), Some(cfg.corruption_mode))
    } else {
        (c, None)
    };
    Ok(AugmentedRecord {
        prompt: problem.prompt.clone(),
        initial_answer: initial,
        label: label_of(c.verdict),
        critique: c.text,
        refined_answer: refined,
        problem_seed: problem.seed,
        task_kind: problem.kind,
        difficulty: problem.difficulty,
        corruption,
    })
}

/// Builds D′ from D: exactly one record per input problem, in input order.
/// Record `i` draws all its randomness from `item_seed(seed, i)`.
pub fn augment(problems: &[Problem], student: &dyn Student, cfg: &GenConfig, seed: u64) -> Result<Corpus, DatagenError> {
    if problems.is_empty() {
        return Err(DatagenError::NoProblems);
    }
    let records = problems
        .iter()
        .enumerate()
        .map(|(i, p)| augment_one(p, student, cfg, item_seed(seed, i as u64), i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Corpus {
        records,
        provenance: Provenance { student_checkpoint: student.id(), gen_config: cfg.clone(), seed },
    })
}

/// Exact-count stratified subsample: `round(ρ·n)` correct and the rest
/// incorrect, drawn without replacement and shuffled.
pub fn apply_mixture(corpus: &Corpus, correct_fraction: f64, n: usize, seed: u64) -> Result<Corpus, DatagenError> {
    if !(0.0..=1.0).contains(&correct_fraction) {
        return Err(DatagenError::BadFraction(correct_fraction));
    }
    let need_correct = (correct_fraction * n as f64).round() as usize;
    let need_incorrect = n - need_correct;
    let mut correct: Vec<usize> = Vec::new();
    let mut incorrect: Vec<usize> = Vec::new();
    for (i, r) in corpus.records.iter().enumerate() {
        match r.label {
            Label::Correct => correct.push(i),
            Label::Incorrect => incorrect.push(i),
        }
    }
    if correct.len() < need_correct || incorrect.len() < need_incorrect {
        return Err(DatagenError::InsufficientStratum {
            need_correct,
            need_incorrect,
            have_correct: correct.len(),
            have_incorrect: incorrect.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (picked_correct, _) = correct.partial_shuffle(&mut rng, need_correct);
    let mut picked: Vec<usize> = picked_correct.to_vec();
    let (picked_incorrect, _) = incorrect.partial_shuffle(&mut rng, need_incorrect);
    picked.extend_from_slice(picked_incorrect);
    picked.shuffle(&mut rng);
    Ok(Corpus {
        records: picked.into_iter().map(|i| corpus.records[i].clone()).collect(),
        provenance: corpus.provenance.clone(),
    })
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<(), DatagenError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for (index, r) in corpus.records.iter().enumerate() {
        r.check().map_err(|message| DatagenError::InvalidRecord { index, message })?;
        let line = serde_json::to_string(r).expect("records serialize");
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    let meta = serde_json::to_string_pretty(&corpus.provenance).expect("provenance serializes");
    fs::write(meta_path(path), meta + "\n")?;
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<Corpus, DatagenError> {
    let file = BufReader::new(fs::File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| DatagenError::MalformedLine { path: path.to_path_buf(), line: i + 1, message };
        let r: AugmentedRecord = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        r.check().map_err(malformed)?;
        records.push(r);
    }
    let meta = meta_path(path);
    let provenance = if meta.exists() {
        serde_json::from_str(&fs::read_to_string(&meta)?).map_err(|e| DatagenError::MalformedLine {
            path: meta.clone(),
            line: e.line(),
            message: e.to_string(),
        })?
    } else {
        Provenance { student_checkpoint: String::new(), gen_config: GenConfig::default(), seed: 0 }
    };
    Ok(Corpus { records, provenance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskworld::verify;

    const DIFF: Difficulty = Difficulty { steps: 3, min_operand: 1, max_operand: 9 };

    fn problems(n: usize) -> Vec<Problem> {
        (0..n as u64)
            .map(|s| sample_problem(TaskKind::ALL[(s % 3) as usize], DIFF, 1000 + s).unwrap())
            .collect()
    }

    #[test]
    fn one_record_per_problem_and_labels_match_verify() {
        let ps = problems(100);
        let corpus = augment(&ps, &NoisyOracleStudent { error_rate: 0.15 }, &GenConfig::default(), 5).unwrap();
        assert_eq!(corpus.len(), 100);
        for (p, r) in ps.iter().zip(&corpus.records) {
            assert!(verify(p, &r.refined_answer).correct);
            let correct = verify(p, &r.initial_answer).correct;
            assert_eq!(r.label == Label::Correct, correct);
            r.check().unwrap();
        }
        assert!(corpus.count(Label::Correct) > 0 && corpus.count(Label::Incorrect) > 0);
    }

    #[test]
    fn augmentation_is_deterministic() {
        let ps = problems(30);
        let s = NoisyOracleStudent { error_rate: 0.3 };
        let cfg = GenConfig { corruption_rate: 0.5, ..GenConfig::default() };
        assert_eq!(augment(&ps, &s, &cfg, 9).unwrap(), augment(&ps, &s, &cfg, 9).unwrap());
        assert!(matches!(augment(&[], &s, &cfg, 9), Err(DatagenError::NoProblems)));
    }

    #[test]
    fn corruption_keeps_label_and_marker_consistent() {
        let ps = problems(60);
        for mode in [CorruptionMode::Nonsense, CorruptionMode::FlipConclusion, CorruptionMode::Blank] {
            let cfg = GenConfig { corruption_rate: 1.0, corruption_mode: mode, ..GenConfig::default() };
            let corpus = augment(&ps, &NoisyOracleStudent { error_rate: 0.3 }, &cfg, 2).unwrap();
            for (p, r) in ps.iter().zip(&corpus.records) {
                r.check().unwrap();
                assert_eq!(r.corruption, Some(mode));
                assert!(verify(p, &r.refined_answer).correct);
            }
        }
    }

    struct Overflowing;
    impl Student for Overflowing {
        fn initial_answer(&self, _: &Problem, _: u64, _: bool) -> Result<String, EngineError> {
            Err(EngineError::ContextOverflow { prompt: 10, max_new: 10, max: 5 })
        }
        fn id(&self) -> String {
            "overflow".into()
        }
    }

    #[test]
    fn overflowing_student_yields_unparseable_records() {
        let ps = problems(3);
        let corpus = augment(&ps, &Overflowing, &GenConfig::default(), 0).unwrap();
        assert_eq!(corpus.len(), 3);
        for r in &corpus.records {
            assert_eq!(r.initial_answer, UNPARSEABLE_ANSWER);
            assert_eq!(r.label, Label::Incorrect);
            assert!(r.critique.contains("step 1"));
        }
    }

    #[test]
    fn mixture_counts_and_errors() {
        let ps = problems(200);
        let corpus = augment(&ps, &NoisyOracleStudent { error_rate: 0.12 }, &GenConfig::default(), 1).unwrap();
        let (c, i) = (corpus.count(Label::Correct), corpus.count(Label::Incorrect));
        assert!(c >= 50 && i >= 50, "{c} {i}");
        let mixed = apply_mixture(&corpus, 0.5, 100, 3).unwrap();
        assert_eq!((mixed.count(Label::Correct), mixed.count(Label::Incorrect)), (50, 50));
        let all_correct = apply_mixture(&corpus, 1.0, 40, 3).unwrap();
        assert!(all_correct.records.iter().all(|r| r.label == Label::Correct));
        let mut seeds: Vec<u64> = mixed.records.iter().map(|r| r.problem_seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 100);
        for r in &mixed.records {
            assert!(corpus.records.contains(r));
        }
        assert!(matches!(
            apply_mixture(&corpus, 1.0, c + 1, 3),
            Err(DatagenError::InsufficientStratum { have_correct, .. }) if have_correct == c
        ));
        assert!(matches!(apply_mixture(&corpus, 1.5, 10, 3), Err(DatagenError::BadFraction(_))));
    }
}
