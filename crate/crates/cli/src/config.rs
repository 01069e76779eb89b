//! Experiment configuration. Every field has a default and the resolved
//! config is written back in full, so a run directory's `config.toml`
//! reproduces the run on its own.

use std::path::{Path, PathBuf};

use cgd_core::engine::ModelConfig;
use cgd_core::seed::stream_seed;
use cgd_core::taskworld::{CorruptionMode, Difficulty, TaskKind};
use cgd_core::tokenizer::VOCAB_SIZE;
use cgd_core::training::{AdamW, Objective, TrainHP};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub out: PathBuf,
    pub objective: Objective,
    pub seeds: Seeds,
    pub task: TaskConfig,
    pub model: ModelSection,
    pub student: StudentConfig,
    pub datagen: DatagenConfig,
    pub train: TrainSection,
    pub eval: EvalConfig,
    pub probes: ProbeConfig,
    pub ablate: AblateConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("runs/default"),
            objective: Objective::Cgd,
            seeds: Seeds::default(),
            task: TaskConfig::default(),
            model: ModelSection::default(),
            student: StudentConfig::default(),
            datagen: DatagenConfig::default(),
            train: TrainSection::default(),
            eval: EvalConfig::default(),
            probes: ProbeConfig::default(),
            ablate: AblateConfig::default(),
        }
    }
}

/// The master seed fans out into named streams; see [`Seeds::streams`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub master: u64,
}

/// Named seed streams derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Streams {
    pub datagen: u64,
    pub init: u64,
    pub train_shuffle: u64,
    pub decode: u64,
    pub probes: u64,
}

impl Seeds {
    pub fn streams(&self) -> Streams {
        let s = |name| stream_seed(self.master, name);
        Streams {
            datagen: s("datagen"),
            init: s("init"),
            train_shuffle: s("train-shuffle"),
            decode: s("decode"),
            probes: s("probes"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub kinds: Vec<TaskKind>,
    pub steps: usize,
    pub min_operand: i64,
    pub max_operand: i64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self { kinds: TaskKind::ALL.to_vec(), steps: 3, min_operand: 1, max_operand: 9 }
    }
}

impl TaskConfig {
    pub fn difficulty(&self) -> Difficulty {
        Difficulty { steps: self.steps, min_operand: self.min_operand, max_operand: self.max_operand }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub tied_embeddings: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { d_model: 32, n_layers: 2, n_heads: 2, d_ff: 128, max_seq_len: 320, tied_embeddings: true }
    }
}

/// Hyperparameters of one optimization stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_ratio: f64,
    pub total_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Non-positive disables clipping.
    pub grad_clip: f64,
}

impl Default for TrainSection {
    // Reference scale used batch 64, lr 1e-6, cosine schedule, warmup 0.1,
    // one epoch. 3e-5 plays the same role here: it adapts the student to the
    // new context layouts without erasing its prompt-only skill, which 3e-4
    // and above do.
    fn default() -> Self {
        let a = AdamW::default();
        Self {
            batch_size: 16,
            peak_lr: 3e-5,
            warmup_ratio: 0.1,
            total_steps: 300,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            weight_decay: a.weight_decay,
            grad_clip: 1.0,
        }
    }
}

impl TrainSection {
    pub fn hp(&self, seed: u64, lr_multiplier: f64) -> TrainHP {
        TrainHP {
            batch_size: self.batch_size,
            peak_lr: self.peak_lr * lr_multiplier,
            warmup_ratio: self.warmup_ratio,
            total_steps: self.total_steps,
            adamw: AdamW { beta1: self.beta1, beta2: self.beta2, eps: self.eps, weight_decay: self.weight_decay },
            grad_clip: (self.grad_clip > 0.0).then_some(self.grad_clip),
            seed,
        }
    }
}

/// The student θ_init: gold-answer pretraining on problems disjoint from
/// the augmented set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentConfig {
    pub problems: usize,
    /// Fraction of pretraining problems rendered as review documents
    /// (answer, optional critique, refinement) instead of prompt → gold.
    pub review_fraction: f64,
    /// Step error rate of the synthetic answers inside review documents.
    pub review_error_rate: f64,
    pub train: TrainSection,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            problems: 3000,
            review_fraction: 0.0,
            review_error_rate: 0.5,
            train: TrainSection { batch_size: 16, peak_lr: 3e-3, total_steps: 1200, ..TrainSection::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatagenConfig {
    pub corpus_size: usize,
    pub temperature: f64,
    pub max_new: usize,
    pub corruption_rate: f64,
    pub corruption_mode: CorruptionMode,
    /// Fraction of correct initial answers; `None` keeps the natural mix.
    pub mixture: Option<f64>,
    /// Size of the mixture subsample.
    pub mixture_size: usize,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        Self {
            corpus_size: 2000,
            temperature: 0.8,
            max_new: 96,
            corruption_rate: 0.0,
            corruption_mode: CorruptionMode::Nonsense,
            mixture: None,
            mixture_size: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub problems: usize,
    pub max_new: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { problems: 500, max_new: 96 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub entropy: bool,
    pub grad_norm: bool,
    pub attention: bool,
    pub counterfactual: bool,
    /// Size of the probe fixture.
    pub records: usize,
    pub attention_records: usize,
    pub counterfactual_problems: usize,
    pub max_new: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            entropy: true,
            grad_norm: true,
            attention: true,
            counterfactual: true,
            records: 500,
            attention_records: 20,
            counterfactual_problems: 100,
            max_new: 96,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub mixture: Vec<f64>,
    pub lr_multipliers: Vec<f64>,
    pub lr_objectives: Vec<Objective>,
    pub objectives: Vec<Objective>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            mixture: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            lr_multipliers: vec![1.0, 5.0],
            lr_objectives: vec![Objective::Cgd, Objective::Cft],
            objectives: Objective::ALL.to_vec(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            vocab_size: VOCAB_SIZE,
            d_model: m.d_model,
            n_layers: m.n_layers,
            n_heads: m.n_heads,
            d_ff: m.d_ff,
            max_seq_len: m.max_seq_len,
            seed: self.seeds.streams().init,
            tied_embeddings: m.tied_embeddings,
        }
    }

    /// Field-level validation.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, msg: &str| Err(CliError::Config(format!("{field}: {msg}")));
        if i64::try_from(self.seeds.master).is_err() {
            return bad("seeds.master", "must fit in a signed 64-bit TOML integer");
        }
        if self.task.kinds.is_empty() {
            return bad("task.kinds", "must list at least one task kind");
        }
        if let Err(e) = self.task.difficulty().validate() {
            return bad("task", &e.to_string());
        }
        if let Err(e) = self.model_config().validate() {
            return bad("model", &e.to_string());
        }
        for (name, t) in [("train", &self.train), ("student.train", &self.student.train)] {
            if let Err(e) = t.hp(0, 1.0).validate() {
                return bad(name, &e.to_string());
            }
            if t.total_steps == 0 {
                return bad(&format!("{name}.total_steps"), "must be positive");
            }
        }
        if !(0.0..=1.0).contains(&self.student.review_fraction) {
            return bad("student.review_fraction", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.student.review_error_rate) {
            return bad("student.review_error_rate", "must lie in [0, 1]");
        }
        if self.student.problems == 0 {
            return bad("student.problems", "must be positive");
        }
        if self.datagen.corpus_size == 0 {
            return bad("datagen.corpus_size", "must be positive");
        }
        if !(self.datagen.temperature >= 0.0) {
            return bad("datagen.temperature", "must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.datagen.corruption_rate) {
            return bad("datagen.corruption_rate", "must lie in [0, 1]");
        }
        if let Some(rho) = self.datagen.mixture {
            if !(0.0..=1.0).contains(&rho) {
                return bad("datagen.mixture", "must lie in [0, 1]");
            }
        }
        if self.ablate.mixture.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad("ablate.mixture", "values must lie in [0, 1]");
        }
        if self.ablate.lr_multipliers.iter().any(|m| !(*m > 0.0)) {
            return bad("ablate.lr_multipliers", "values must be positive");
        }
        if self.eval.problems == 0 {
            return bad("eval.problems", "must be positive");
        }
        Ok(())
    }
}
