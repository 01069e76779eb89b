//! The experiment stages as plain functions over in-memory artifacts. The
//! commands persist what these return; the acceptance suite calls them
//! directly.

use cgd_core::datagen::{apply_mixture, augment, Corpus, GenConfig, ModelStudent, NoisyOracleStudent, Student};
use cgd_core::engine::{init_params, InitMode, ModelParams};
use cgd_core::probes::{
    attention_flow, counterfactual_probe, counterfactual_table, entropy_probe, exact_match, grad_norm_report,
    AttentionFlowReport, CounterfactualOutcome, CounterfactualTable, EntropyReport, Evaluation, GradNormReport,
    ModelResponder,
};
use cgd_core::seed::item_seed;
use cgd_core::taskworld::{critique, problem_set, refine, Problem, Split};
use cgd_core::tokenizer::{encode, ANSWER, CRITIQUE, INITIAL, PROMPT};
use cgd_core::training::{
    assemble, render_corpus, render_gold, train_with, LossPoint, Objective, TokenizedExample, TrainError, TrainOutput,
};

use crate::config::ExperimentConfig;
use crate::CliError;

/// Training-split problems: the first `student.problems` pretrain the
/// student, the next `datagen.corpus_size` are augmented.
pub fn train_problems(cfg: &ExperimentConfig) -> Result<(Vec<Problem>, Vec<Problem>), CliError> {
    let n = cfg.student.problems + cfg.datagen.corpus_size;
    let mut all =
        problem_set(Split::Train, cfg.seeds.streams().datagen, &cfg.task.kinds, cfg.task.difficulty(), n)?;
    let rest = all.split_off(cfg.student.problems);
    Ok((all, rest))
}

pub fn eval_problems(cfg: &ExperimentConfig) -> Result<Vec<Problem>, CliError> {
    Ok(problem_set(Split::Eval, cfg.seeds.streams().datagen, &cfg.task.kinds, cfg.task.difficulty(), cfg.eval.problems)?)
}

pub fn probe_problems(cfg: &ExperimentConfig) -> Result<Vec<Problem>, CliError> {
    Ok(problem_set(Split::Probe, cfg.seeds.streams().probes, &cfg.task.kinds, cfg.task.difficulty(), cfg.probes.records)?)
}

/// A review document: the prompt is context and everything after it,
/// a synthetic answer, the oracle critique (when `with_critique`) and the
/// refinement, is trained on.
fn review_document(p: &Problem, error_rate: f64, seed: u64, with_critique: bool, max_len: usize) -> Result<TokenizedExample, CliError> {
    let initial = NoisyOracleStudent { error_rate }.initial_answer(p, seed, false)?;
    let c = critique(p, &initial);
    let enc = |t: &str| encode(t).map_err(|e| CliError::Train(TrainError::from(e)));
    let mut context = vec![PROMPT];
    context.extend(enc(&p.prompt)?);
    let mut target = vec![INITIAL];
    target.extend(enc(&initial)?);
    if with_critique {
        target.push(CRITIQUE);
        target.extend(enc(&c.text)?);
    }
    target.push(ANSWER);
    target.extend(enc(&refine(p, &initial, &c))?);
    Ok(assemble(context, &target, max_len)?)
}

/// θ_init: a fresh model trained on prompt → gold derivation. With
/// `student.review_fraction > 0` part of the problems become review
/// documents instead, half with a critique and half without, so the student
/// has seen every context layout and position before fine-tuning.
pub fn train_student(cfg: &ExperimentConfig, on_step: impl FnMut(&LossPoint)) -> Result<TrainOutput, CliError> {
    let (pretrain, _) = train_problems(cfg)?;
    let init = init_params(&cfg.model_config(), InitMode::Normal)?;
    let max = cfg.model.max_seq_len;
    let reviews = (cfg.student.review_fraction * pretrain.len() as f64).round() as usize;
    let seed = item_seed(cfg.seeds.streams().datagen, 2);
    let examples = pretrain
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if i < reviews {
                review_document(p, cfg.student.review_error_rate, item_seed(seed, i as u64), i % 2 == 0, max)
            } else {
                Ok(render_gold(p, max)?)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let hp = cfg.student.train.hp(item_seed(cfg.seeds.streams().train_shuffle, 0), 1.0);
    Ok(train_with(&init, &examples, &hp, on_step)?)
}

fn gen_config(cfg: &ExperimentConfig) -> GenConfig {
    GenConfig {
        decode_temperature: cfg.datagen.temperature,
        max_new: cfg.datagen.max_new,
        corruption_rate: cfg.datagen.corruption_rate,
        corruption_mode: cfg.datagen.corruption_mode,
    }
}

fn model_student<'a>(cfg: &ExperimentConfig, student: &'a ModelParams, id: &str) -> ModelStudent<'a> {
    ModelStudent {
        params: student,
        checkpoint_id: id.to_string(),
        temperature: cfg.datagen.temperature,
        max_new: cfg.datagen.max_new,
    }
}

/// D′ for the configured corpus, with the mixture applied when set.
pub fn generate_corpus(cfg: &ExperimentConfig, student: &ModelParams, student_id: &str) -> Result<Corpus, CliError> {
    let (_, problems) = train_problems(cfg)?;
    let streams = cfg.seeds.streams();
    let corpus = augment(&problems, &model_student(cfg, student, student_id), &gen_config(cfg), streams.decode)?;
    match cfg.datagen.mixture {
        Some(rho) => Ok(apply_mixture(&corpus, rho, cfg.datagen.mixture_size, item_seed(streams.datagen, 1))?),
        None => Ok(corpus),
    }
}

/// The probe fixture: probe-split problems augmented by the same student,
/// never corrupted.
pub fn probe_fixture(cfg: &ExperimentConfig, student: &ModelParams, student_id: &str) -> Result<Corpus, CliError> {
    let problems = probe_problems(cfg)?;
    let gen = GenConfig { corruption_rate: 0.0, ..gen_config(cfg) };
    Ok(augment(&problems, &model_student(cfg, student, student_id), &gen, item_seed(cfg.seeds.streams().probes, 1))?)
}

/// Fine-tunes θ_init on `corpus` under `objective`. The shuffle seed is
/// shared by all objectives and learning rates.
pub fn finetune(
    cfg: &ExperimentConfig,
    student: &ModelParams,
    corpus: &Corpus,
    objective: Objective,
    lr_multiplier: f64,
    on_step: impl FnMut(&LossPoint),
) -> Result<TrainOutput, CliError> {
    let examples = render_corpus(corpus, objective, cfg.model.max_seq_len)?;
    let hp = cfg.train.hp(cfg.seeds.streams().train_shuffle, lr_multiplier);
    Ok(train_with(student, &examples, &hp, on_step)?)
}

/// Greedy prompt-only exact match on the eval split.
pub fn evaluate(cfg: &ExperimentConfig, params: &ModelParams) -> Result<Evaluation, CliError> {
    let problems = eval_problems(cfg)?;
    Ok(exact_match(&ModelResponder::greedy(params, cfg.eval.max_new), &problems)?)
}

#[derive(Debug, Clone, Default)]
pub struct ProbeOutputs {
    pub entropy: Option<EntropyReport>,
    pub grad_norm: Option<GradNormReport>,
    pub attention: Vec<AttentionFlowReport>,
    pub counterfactual: Option<(Vec<CounterfactualOutcome>, CounterfactualTable)>,
}

pub fn run_probes(cfg: &ExperimentConfig, params: &ModelParams, fixture: &Corpus) -> Result<ProbeOutputs, CliError> {
    let p = &cfg.probes;
    let mut out = ProbeOutputs::default();
    if p.entropy {
        out.entropy = Some(entropy_probe(params, &fixture.records)?);
    }
    if p.grad_norm {
        out.grad_norm = Some(grad_norm_report(params, &fixture.records)?);
    }
    if p.attention {
        out.attention = fixture
            .records
            .iter()
            .take(p.attention_records)
            .map(|r| attention_flow(params, r, p.max_new))
            .collect::<Result<_, _>>()?;
    }
    if p.counterfactual {
        let responder = ModelResponder::greedy(params, p.max_new);
        let outcomes = fixture
            .records
            .iter()
            .take(p.counterfactual_problems)
            .map(|r| counterfactual_probe(&responder, r))
            .collect::<Result<Vec<_>, _>>()?;
        let table = counterfactual_table(&outcomes);
        out.counterfactual = Some((outcomes, table));
    }
    Ok(out)
}
