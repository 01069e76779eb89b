//! The six subcommands. Each returns a short human summary; artifacts land
//! in the run directory and are hashed into its manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use cgd_core::datagen::{apply_mixture, read_corpus, write_corpus, Corpus, Label};
use cgd_core::engine::{load_checkpoint, save_checkpoint, ModelParams};
use cgd_core::probes::{
    mean, paired_test, read_report, write_report, AttentionFlowReport, CounterfactualOutcome, CounterfactualTable,
    EntropyRow, EvalReport, EvalRow, GradNormRow, Phase,
};
use cgd_core::seed::item_seed;
use cgd_core::taskworld::verify;
use cgd_core::training::{LossCurve, Objective};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::pipeline;
use crate::run_dir::RunDir;
use crate::CliError;

pub const EVAL_FILE: &str = "eval.jsonl";
pub const ENTROPY_FILE: &str = "entropy.jsonl";
pub const GRAD_NORM_FILE: &str = "grad_norm.jsonl";
pub const ATTENTION_FILE: &str = "attention.jsonl";
pub const COUNTERFACTUAL_FILE: &str = "counterfactual.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropySummary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradNormSummary {
    pub n: usize,
    pub mean_with: f64,
    pub mean_without: f64,
    pub std_with: f64,
    pub std_without: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionSummary {
    pub records: usize,
}

/// Metadata of one fine-tuning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub objective: Objective,
    pub lr_multiplier: f64,
    pub steps: usize,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatagenSummary {
    pub corpus_size: usize,
    pub correct: usize,
    pub incorrect: usize,
    pub label_ratio: f64,
    /// Fraction of initial answers that pass `verify` when re-checked.
    pub reverified_ratio: f64,
    pub probe_records: usize,
}

pub fn run_name(objective: Objective, lr_multiplier: f64) -> String {
    if lr_multiplier == 1.0 {
        objective.as_str().to_string()
    } else {
        format!("{}-lr{}x", objective.as_str(), lr_multiplier)
    }
}

fn load_student(dir: &RunDir) -> Result<ModelParams, CliError> {
    let path = dir.student_checkpoint();
    dir.require(&path)?;
    Ok(load_checkpoint(&path)?)
}

fn load_corpus(dir: &RunDir, path: &Path) -> Result<Corpus, CliError> {
    dir.require(path)?;
    Ok(read_corpus(path)?)
}

fn summarize(corpus: &Corpus) -> Result<(usize, usize, f64), CliError> {
    let mut verified = 0;
    for r in &corpus.records {
        verified += verify(&r.problem()?, &r.initial_answer).correct as usize;
    }
    let n = corpus.len().max(1) as f64;
    Ok((corpus.count(Label::Correct), corpus.count(Label::Incorrect), verified as f64 / n))
}

/// Trains θ_init, builds D′ and the probe fixture.
pub fn cmd_datagen(cfg: &ExperimentConfig) -> Result<DatagenSummary, CliError> {
    let dir = RunDir::create(cfg)?;
    let student = pipeline::train_student(cfg, |_| {})?;
    save_checkpoint(&student.params, &dir.student_checkpoint())?;
    student.curve.write(&dir.student_curve())?;
    let id = crate::run_dir::sha256_file(&dir.student_checkpoint())?;

    let corpus = pipeline::generate_corpus(cfg, &student.params, &id)?;
    write_corpus(&corpus, &dir.corpus())?;
    let fixture = pipeline::probe_fixture(cfg, &student.params, &id)?;
    write_corpus(&fixture, &dir.probe_fixture())?;
    let meta = |p: PathBuf| cgd_core::datagen::meta_path(&p);
    dir.record(&[
        &dir.student_checkpoint(),
        &dir.student_curve(),
        &dir.corpus(),
        &meta(dir.corpus()),
        &dir.probe_fixture(),
        &meta(dir.probe_fixture()),
    ])?;

    let (correct, incorrect, reverified_ratio) = summarize(&corpus)?;
    Ok(DatagenSummary {
        corpus_size: corpus.len(),
        correct,
        incorrect,
        label_ratio: corpus.correct_ratio(),
        reverified_ratio,
        probe_records: fixture.len(),
    })
}

/// Fine-tunes θ_init under `cfg.objective`; writes `runs/<name>/`.
pub fn cmd_train(cfg: &ExperimentConfig, lr_multiplier: f64) -> Result<(String, RunInfo), CliError> {
    let dir = RunDir::create(cfg)?;
    let student = load_student(&dir)?;
    let corpus = load_corpus(&dir, &dir.corpus())?;
    let name = run_name(cfg.objective, lr_multiplier);
    let run = dir.run(&name);
    fs::create_dir_all(&run)?;
    let out = pipeline::finetune(cfg, &student, &corpus, cfg.objective, lr_multiplier, |_| {})?;
    let ckpt = run.join("model.ckpt.json");
    let curve = run.join("loss_curve.jsonl");
    let info_path = run.join("run.json");
    save_checkpoint(&out.params, &ckpt)?;
    out.curve.write(&curve)?;
    let info = RunInfo {
        objective: cfg.objective,
        lr_multiplier,
        steps: out.curve.len(),
        final_loss: out.curve.points.last().map_or(f64::NAN, |p| p.loss),
    };
    fs::write(&info_path, serde_json::to_string_pretty(&info).expect("run info serializes") + "\n")?;
    dir.record(&[&ckpt, &curve, &info_path])?;
    Ok((name, info))
}

fn load_run_model(dir: &RunDir, name: &str) -> Result<ModelParams, CliError> {
    let path = dir.run(name).join("model.ckpt.json");
    dir.require(&path)?;
    Ok(load_checkpoint(&path)?)
}

pub fn cmd_eval(cfg: &ExperimentConfig, name: &str) -> Result<EvalReport, CliError> {
    let dir = RunDir::create(cfg)?;
    let params = load_run_model(&dir, name)?;
    let ev = pipeline::evaluate(cfg, &params)?;
    let path = dir.run(name).join(EVAL_FILE);
    write_report(&path, "eval", &ev.report, &ev.rows)?;
    dir.record(&[&path])?;
    Ok(ev.report)
}

pub fn cmd_probe(cfg: &ExperimentConfig, name: &str) -> Result<Vec<PathBuf>, CliError> {
    let dir = RunDir::create(cfg)?;
    let params = load_run_model(&dir, name)?;
    let fixture = load_corpus(&dir, &dir.probe_fixture())?;
    let out = pipeline::run_probes(cfg, &params, &fixture)?;
    let run = dir.run(name);
    let mut written = Vec::new();
    if let Some(e) = &out.entropy {
        let p = run.join(ENTROPY_FILE);
        let s = EntropySummary { n: e.n, mean: e.mean, std: e.std, window: e.window };
        write_report(&p, "entropy", &s, &e.rows)?;
        written.push(p);
    }
    if let Some(g) = &out.grad_norm {
        let p = run.join(GRAD_NORM_FILE);
        let s = GradNormSummary {
            n: g.n,
            mean_with: g.mean_with,
            mean_without: g.mean_without,
            std_with: g.std_with,
            std_without: g.std_without,
        };
        write_report(&p, "grad_norm", &s, &g.rows)?;
        written.push(p);
    }
    if cfg.probes.attention {
        let p = run.join(ATTENTION_FILE);
        write_report(&p, "attention_flow", &AttentionSummary { records: out.attention.len() }, &out.attention)?;
        written.push(p);
    }
    if let Some((rows, table)) = &out.counterfactual {
        let p = run.join(COUNTERFACTUAL_FILE);
        write_report(&p, "counterfactual", table, rows)?;
        written.push(p);
    }
    let refs: Vec<&Path> = written.iter().map(PathBuf::as_path).collect();
    dir.record(&refs)?;
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Mixture,
    Lr,
    Objective,
}

impl std::str::FromStr for Axis {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mixture" => Ok(Axis::Mixture),
            "lr" => Ok(Axis::Lr),
            "objective" => Ok(Axis::Objective),
            other => Err(CliError::Config(format!("--axis: unknown axis {other:?} (mixture, lr, objective)"))),
        }
    }
}

/// One sweep point's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub point: String,
    pub objective: Objective,
    pub lr_multiplier: f64,
    pub mixture: Option<f64>,
    pub accuracy: Option<f64>,
    pub drift: Option<f64>,
    pub entropy: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub axis: String,
    pub points: Vec<PointResult>,
    pub table: String,
}

fn ensure_datagen(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let dir = RunDir::create(cfg)?;
    if !(dir.student_checkpoint().exists() && dir.corpus().exists() && dir.probe_fixture().exists()) {
        cmd_datagen(cfg)?;
    }
    Ok(())
}

fn train_eval_point(cfg: &ExperimentConfig, lr_multiplier: f64, entropy: bool) -> Result<PointResult, CliError> {
    let (name, _) = cmd_train(cfg, lr_multiplier)?;
    let report = cmd_eval(cfg, &name)?;
    let entropy = if entropy {
        let dir = RunDir::create(cfg)?;
        let fixture = load_corpus(&dir, &dir.probe_fixture())?;
        let params = load_run_model(&dir, &name)?;
        let e = cgd_core::probes::entropy_probe(&params, &fixture.records)?;
        let p = dir.run(&name).join(ENTROPY_FILE);
        write_report(&p, "entropy", &EntropySummary { n: e.n, mean: e.mean, std: e.std, window: e.window }, &e.rows)?;
        dir.record(&[&p])?;
        Some(e.mean)
    } else {
        None
    };
    Ok(PointResult {
        point: name,
        objective: cfg.objective,
        lr_multiplier,
        mixture: cfg.datagen.mixture,
        accuracy: Some(report.exact_match_accuracy),
        drift: Some(report.format_drift_rate),
        entropy,
        error: None,
    })
}

fn failed(point: String, objective: Objective, lr_multiplier: f64, mixture: Option<f64>, e: CliError) -> PointResult {
    PointResult {
        point,
        objective,
        lr_multiplier,
        mixture,
        accuracy: None,
        drift: None,
        entropy: None,
        error: Some(e.to_string()),
    }
}

fn pct(x: Option<f64>) -> String {
    x.map_or("failed".to_string(), |v| format!("{:.1}", 100.0 * v))
}

/// Runs every point of the sweep; failures are recorded per point.
pub fn cmd_ablate(cfg: &ExperimentConfig, axis: Axis) -> Result<AblationSummary, CliError> {
    ensure_datagen(cfg)?;
    let mut points = Vec::new();
    let table;
    match axis {
        Axis::Lr => {
            for &obj in &cfg.ablate.lr_objectives {
                for &m in &cfg.ablate.lr_multipliers {
                    let c = ExperimentConfig { objective: obj, ..cfg.clone() };
                    points.push(
                        train_eval_point(&c, m, false).unwrap_or_else(|e| failed(run_name(obj, m), obj, m, None, e)),
                    );
                }
            }
            table = lr_table(cfg, &points);
        }
        Axis::Objective => {
            for &obj in &cfg.ablate.objectives {
                let c = ExperimentConfig { objective: obj, ..cfg.clone() };
                points.push(
                    train_eval_point(&c, 1.0, true).unwrap_or_else(|e| failed(run_name(obj, 1.0), obj, 1.0, None, e)),
                );
            }
            table = objective_table(&points);
        }
        Axis::Mixture => {
            let base = RunDir::create(cfg)?;
            let raw = load_corpus(&base, &base.corpus())?;
            for &rho in &cfg.ablate.mixture {
                let name = format!("rho-{rho}");
                let mut c = cfg.clone();
                c.out = cfg.out.join("ablate-mixture").join(&name);
                c.datagen.mixture = Some(rho);
                let r = (|| -> Result<PointResult, CliError> {
                    let mixed = apply_mixture(&raw, rho, cfg.datagen.mixture_size, item_seed(cfg.seeds.streams().datagen, 1))?;
                    let dir = RunDir::create(&c)?;
                    fs::copy(base.student_checkpoint(), dir.student_checkpoint())?;
                    fs::copy(base.probe_fixture(), dir.probe_fixture())?;
                    fs::copy(
                        cgd_core::datagen::meta_path(&base.probe_fixture()),
                        cgd_core::datagen::meta_path(&dir.probe_fixture()),
                    )?;
                    write_corpus(&mixed, &dir.corpus())?;
                    dir.record(&[&dir.student_checkpoint(), &dir.probe_fixture(), &dir.corpus()])?;
                    let mut p = train_eval_point(&c, 1.0, false)?;
                    p.point = name.clone();
                    Ok(p)
                })();
                points.push(r.unwrap_or_else(|e| failed(name.clone(), cfg.objective, 1.0, Some(rho), e)));
            }
            let mut t = String::from("| ρ | accuracy (%) | drift (%) |\n|---|---|---|\n");
            for p in &points {
                let _ = writeln!(t, "| {} | {} | {} |", p.mixture.unwrap_or(f64::NAN), pct(p.accuracy), pct(p.drift));
            }
            table = t;
        }
    }
    let axis_name = match axis {
        Axis::Mixture => "mixture",
        Axis::Lr => "lr",
        Axis::Objective => "objective",
    };
    let summary = AblationSummary { axis: axis_name.to_string(), points, table };
    let dir = RunDir::create(cfg)?;
    let md = cfg.out.join(format!("ablate-{axis_name}.md"));
    let json = cfg.out.join(format!("ablate-{axis_name}.json"));
    fs::write(&md, &summary.table)?;
    fs::write(&json, serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")?;
    dir.record(&[&md, &json])?;
    Ok(summary)
}

/// Rows are objectives, columns learning-rate multipliers, plus the relative
/// accuracy change from the first to the last multiplier.
fn lr_table(cfg: &ExperimentConfig, points: &[PointResult]) -> String {
    let mults = &cfg.ablate.lr_multipliers;
    let mut t = String::from("| objective |");
    for m in mults {
        let _ = write!(t, " lr {m}x |");
    }
    t.push_str(" relative change (%) |\n|---|");
    for _ in mults {
        t.push_str("---|");
    }
    t.push_str("---|\n");
    for &obj in &cfg.ablate.lr_objectives {
        let accs: Vec<Option<f64>> = mults
            .iter()
            .map(|&m| points.iter().find(|p| p.objective == obj && p.lr_multiplier == m).and_then(|p| p.accuracy))
            .collect();
        let _ = write!(t, "| {} |", obj.label());
        for a in &accs {
            let _ = write!(t, " {} |", pct(*a));
        }
        let rel = match (accs.first().copied().flatten(), accs.last().copied().flatten()) {
            (Some(a), Some(b)) if a > 0.0 => format!("{:+.1}", 100.0 * (b - a) / a),
            _ => "n/a".to_string(),
        };
        let _ = writeln!(t, " {rel} |");
    }
    t
}

/// One row per objective and a Δ row (CGD − CFT) per metric.
fn objective_table(points: &[PointResult]) -> String {
    let mut t = String::from("| objective | accuracy (%) | drift (%) | entropy |\n|---|---|---|---|\n");
    for p in points {
        let ent = p.entropy.map_or("failed".into(), |e| format!("{e:.4}"));
        let _ = writeln!(t, "| {} | {} | {} | {} |", p.objective.label(), pct(p.accuracy), pct(p.drift), ent);
    }
    let get = |o: Objective| points.iter().find(|p| p.objective == o);
    if let (Some(cgd), Some(cft)) = (get(Objective::Cgd), get(Objective::Cft)) {
        let d = |a: Option<f64>, b: Option<f64>, scale: f64, prec: usize| match (a, b) {
            (Some(a), Some(b)) => format!("{:+.*}", prec, scale * (a - b)),
            _ => "n/a".to_string(),
        };
        let _ = writeln!(
            t,
            "| Δ = CGD − CFT | {} | {} | {} |",
            d(cgd.accuracy, cft.accuracy, 100.0, 1),
            d(cgd.drift, cft.drift, 100.0, 1),
            d(cgd.entropy, cft.entropy, 1.0, 4)
        );
    }
    t
}

/// One row of the cross-run comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub accuracy: f64,
    pub drift: f64,
    pub entropy_mean: Option<f64>,
    /// Paired test of this run's entropies against the first row's.
    pub entropy_p: Option<f64>,
    pub grad_with: Option<f64>,
    pub grad_without: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ReportRow>,
    /// Row i minus row 0, for every row after the first.
    pub deltas: Vec<ReportRow>,
    pub table: String,
}

struct Collected {
    label: String,
    eval: EvalReport,
    entropy: Option<Vec<EntropyRow>>,
    grad: Option<Vec<GradNormRow>>,
    attention: Option<Vec<AttentionFlowReport>>,
    curve: Option<LossCurve>,
}

fn collect(dirs: &[PathBuf]) -> Result<Vec<Collected>, CliError> {
    let mut out = Vec::new();
    for d in dirs {
        let (dir, _) = RunDir::open(d)?;
        for name in dir.runs()? {
            let run = dir.run(&name);
            let eval_path = run.join(EVAL_FILE);
            if !eval_path.exists() {
                continue;
            }
            let eval = read_report::<EvalReport, EvalRow>(&eval_path, "eval")?.summary;
            let opt = |f: &str| Some(run.join(f)).filter(|p| p.exists());
            let entropy = match opt(ENTROPY_FILE) {
                Some(p) => Some(read_report::<EntropySummary, EntropyRow>(&p, "entropy")?.rows),
                None => None,
            };
            let grad = match opt(GRAD_NORM_FILE) {
                Some(p) => Some(read_report::<GradNormSummary, GradNormRow>(&p, "grad_norm")?.rows),
                None => None,
            };
            let attention = match opt(ATTENTION_FILE) {
                Some(p) => Some(read_report::<AttentionSummary, AttentionFlowReport>(&p, "attention_flow")?.rows),
                None => None,
            };
            let curve = match opt("loss_curve.jsonl") {
                Some(p) => Some(LossCurve::read(&p)?),
                None => None,
            };
            let label = format!("{}/{}", d.file_name().map_or_else(|| d.display().to_string(), |n| n.to_string_lossy().into_owned()), name);
            out.push(Collected { label, eval, entropy, grad, attention, curve });
        }
    }
    Ok(out)
}

fn opt_fmt(x: Option<f64>, prec: usize) -> String {
    x.map_or("-".to_string(), |v| format!("{v:.prec$}"))
}

fn write_row(t: &mut String, r: &ReportRow) {
    let _ = writeln!(
        t,
        "| {} | {:.1} | {:.1} | {} | {} | {} | {} |",
        r.label,
        100.0 * r.accuracy,
        100.0 * r.drift,
        opt_fmt(r.entropy_mean, 4),
        opt_fmt(r.entropy_p, 4),
        opt_fmt(r.grad_with, 4),
        opt_fmt(r.grad_without, 4)
    );
}

/// Consolidated comparison of every evaluated sub-run in `dirs`, written to
/// `out`: `report.md`, `report.json` and plot-ready CSV series.
pub fn cmd_report(dirs: &[PathBuf], out: &Path) -> Result<Comparison, CliError> {
    let collected = collect(dirs)?;
    if collected.is_empty() {
        return Err(CliError::MissingArtifact("no evaluated runs under the given directories".into()));
    }
    let reference = collected[0].entropy.clone();
    let mut rows = Vec::new();
    for c in &collected {
        let entropy_p = match (&reference, &c.entropy) {
            (Some(a), Some(b)) if a.len() == b.len() && a.len() >= 2 => {
                let x: Vec<f64> = b.iter().map(|r| r.entropy).collect();
                let y: Vec<f64> = a.iter().map(|r| r.entropy).collect();
                Some(paired_test(&x, &y)?.p_value)
            }
            _ => None,
        };
        rows.push(ReportRow {
            label: c.label.clone(),
            accuracy: c.eval.exact_match_accuracy,
            drift: c.eval.format_drift_rate,
            entropy_mean: c.entropy.as_ref().map(|e| mean(&e.iter().map(|r| r.entropy).collect::<Vec<_>>())),
            entropy_p,
            grad_with: c.grad.as_ref().map(|g| mean(&g.iter().map(|r| r.with_critique).collect::<Vec<_>>())),
            grad_without: c.grad.as_ref().map(|g| mean(&g.iter().map(|r| r.without_critique).collect::<Vec<_>>())),
        });
    }
    let sub = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(a, b)| a - b);
    let deltas: Vec<ReportRow> = rows[1..]
        .iter()
        .map(|r| ReportRow {
            label: format!("Δ {} − {}", r.label, rows[0].label),
            accuracy: r.accuracy - rows[0].accuracy,
            drift: r.drift - rows[0].drift,
            entropy_mean: sub(r.entropy_mean, rows[0].entropy_mean),
            entropy_p: None,
            grad_with: sub(r.grad_with, rows[0].grad_with),
            grad_without: sub(r.grad_without, rows[0].grad_without),
        })
        .collect();

    let mut table = String::from(
        "| run | accuracy (%) | drift (%) | entropy | entropy p | grad norm (with c) | grad norm (without c) |\n|---|---|---|---|---|---|---|\n",
    );
    for r in rows.iter().chain(&deltas) {
        write_row(&mut table, r);
    }

    fs::create_dir_all(out.join("series"))?;
    fs::write(out.join("report.md"), &table)?;
    let comparison = Comparison { rows, deltas, table };
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&comparison).expect("report serializes") + "\n")?;
    for c in &collected {
        let stem = c.label.replace('/', "__");
        if let Some(curve) = &c.curve {
            let mut s = String::from("step,loss,lr,grad_norm\n");
            for p in &curve.points {
                let _ = writeln!(s, "{},{},{},{}", p.step, p.loss, p.lr, p.grad_norm);
            }
            fs::write(out.join("series").join(format!("{stem}.loss.csv")), s)?;
        }
        if let Some(att) = &c.attention {
            fs::write(out.join("series").join(format!("{stem}.attention.csv")), attention_series(att))?;
        }
    }
    Ok(comparison)
}

/// Mean section shares per (layer, phase) across records.
fn attention_series(reports: &[AttentionFlowReport]) -> String {
    let mut acc: std::collections::BTreeMap<(usize, Phase), (usize, [f64; 3])> = Default::default();
    for r in reports {
        for l in &r.layers {
            for p in &l.phases {
                let e = acc.entry((l.layer, p.phase)).or_insert((0, [0.0; 3]));
                e.0 += 1;
                e.1[0] += p.problem;
                e.1[1] += p.student_answer;
                e.1[2] += p.critique;
            }
        }
    }
    let mut s = String::from("layer,phase,problem,student_answer,critique\n");
    for ((layer, phase), (n, sums)) in acc {
        let name = serde_json::to_value(phase).expect("phase serializes");
        let n = n as f64;
        let _ = writeln!(s, "{layer},{},{},{},{}", name.as_str().unwrap_or("?"), sums[0] / n, sums[1] / n, sums[2] / n);
    }
    s
}

/// Counterfactual outcome table of a probed run, if present.
pub fn read_counterfactual(dir: &Path, name: &str) -> Result<(CounterfactualTable, Vec<CounterfactualOutcome>), CliError> {
    let f = read_report::<CounterfactualTable, CounterfactualOutcome>(&dir.join("runs").join(name).join(COUNTERFACTUAL_FILE), "counterfactual")?;
    Ok((f.summary, f.rows))
}
