use cgd_core::datagen::{augment, AugmentedRecord, Corpus, GenConfig, Label, NoisyOracleStudent};
use cgd_core::engine::{
    forward, generate, init_params, AttentionCapture, Decode, GenerateOptions, InitMode, ModelConfig, ModelParams, Section,
    Tensor,
};
use cgd_core::probes::*;
use cgd_core::taskworld::{problem_set, render_solution, Difficulty, Problem, Split, TaskKind};
use cgd_core::tokenizer::{EOS, VOCAB_SIZE};
use cgd_core::training::{batch_loss, cgd_context, render, train, Objective, TrainHP};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIFF: Difficulty = Difficulty { steps: 3, min_operand: 1, max_operand: 9 };

fn problems(n: usize, stream: u64) -> Vec<Problem> {
    problem_set(Split::Probe, stream, &TaskKind::ALL, DIFF, n).unwrap()
}

fn fixture(n: usize, stream: u64) -> Corpus {
    augment(&problems(n, stream), &NoisyOracleStudent { error_rate: 0.2 }, &GenConfig::default(), stream).unwrap()
}

fn model(d: usize, layers: usize, heads: usize, ff: usize, max_len: usize, seed: u64, mode: InitMode) -> ModelParams {
    let cfg = ModelConfig {
        vocab_size: VOCAB_SIZE,
        d_model: d,
        n_layers: layers,
        n_heads: heads,
        d_ff: ff,
        max_seq_len: max_len,
        seed,
        tied_embeddings: true,
    };
    init_params(&cfg, mode).unwrap()
}

fn naive_entropy(logits: &[f64]) -> f64 {
    let z: f64 = logits.iter().map(|x| x.exp()).sum();
    logits.iter().map(|x| x.exp() / z).filter(|&p| p > 0.0).map(|p| -p * p.ln()).sum()
}

// ---------- entropy ----------

#[test]
fn entropy_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let logits: Vec<f64> = (0..VOCAB_SIZE).map(|_| rng.gen_range(-5.0..5.0)).collect();
        assert!((entropy(&logits) - naive_entropy(&logits)).abs() < 1e-10);
    }
    let mut delta = vec![0.0; VOCAB_SIZE];
    delta[7] = 1e4;
    assert!(entropy(&delta).abs() < 1e-12);
}

#[test]
fn entropy_probe_on_uniform_and_random_models() {
    let f = fixture(12, 2);
    let uniform = model(16, 1, 2, 32, 256, 0, InitMode::Zeros);
    let r = entropy_probe(&uniform, &f.records).unwrap();
    assert_eq!(r.n, 12);
    for row in &r.rows {
        assert!((row.entropy - (VOCAB_SIZE as f64).ln()).abs() < 1e-12);
    }

    let random = model(16, 2, 2, 32, 256, 3, InitMode::Normal);
    let r = entropy_probe(&random, &f.records).unwrap();
    for (rec, row) in f.records.iter().zip(&r.rows) {
        let (ctx, _) = cgd_context(&rec.prompt, &rec.initial_answer, &rec.critique).unwrap();
        let logits = forward(&random, &ctx, false).unwrap().logits;
        let want = naive_entropy(logits.row(ctx.len() - 1));
        assert!((row.entropy - want).abs() < 1e-10);
        assert_eq!(row.problem_seed, rec.problem_seed);
    }
    assert!((r.mean - mean(&r.values())).abs() < 1e-15);

    let tiny_ctx = model(16, 1, 2, 32, 40, 0, InitMode::Normal);
    assert!(matches!(entropy_probe(&tiny_ctx, &f.records), Err(ProbeError::ContextOverflow { .. })));
}

#[test]
fn entropy_window_averages_teacher_forced_positions() {
    let f = fixture(3, 5);
    let m = model(16, 1, 2, 32, 256, 4, InitMode::Normal);
    let one = entropy_probe_window(&m, &f.records, 1).unwrap();
    assert_eq!(one, entropy_probe(&m, &f.records).unwrap());
    let three = entropy_probe_window(&m, &f.records, 3).unwrap();
    let rec = &f.records[0];
    let (mut ctx, _) = cgd_context(&rec.prompt, &rec.initial_answer, &rec.critique).unwrap();
    let start = ctx.len() - 1;
    ctx.extend(cgd_core::tokenizer::encode(&rec.refined_answer).unwrap().into_iter().take(2));
    let logits = forward(&m, &ctx, false).unwrap().logits;
    let want = (start..start + 3).map(|t| naive_entropy(logits.row(t))).sum::<f64>() / 3.0;
    assert!((three.rows[0].entropy - want).abs() < 1e-10);
}

// ---------- gradient norm ----------

fn short_record() -> AugmentedRecord {
    AugmentedRecord {
        prompt: "(1+2) mod 10".into(),
        initial_answer: "Answer: 4".into(),
        critique: "wrong sum\nConclusion: wrong.".into(),
        refined_answer: "Answer: 3".into(),
        label: Label::Incorrect,
        problem_seed: 0,
        task_kind: TaskKind::ChainedArithmetic,
        difficulty: Difficulty { steps: 2, min_operand: 1, max_operand: 9 },
        corruption: None,
    }
}

#[test]
fn grad_norm_equals_directional_derivative() {
    // 101·4 + 64·4 + one 4-wide layer + final norm = 824 parameters.
    let mut p = model(4, 1, 2, 8, 64, 5, InitMode::Normal);
    assert!(p.param_count() <= 1000);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for t in p.tensors_mut() {
        t.data.iter_mut().for_each(|x| *x += rng.gen_range(-0.5..0.5));
    }
    let rec = short_record();
    for (cond, obj) in [(Condition::WithCritique, Objective::Cgd), (Condition::WithoutCritique, Objective::CgdNoCritique)] {
        let norm = grad_norm_probe(&p, &rec, cond).unwrap();
        let ex = render(&rec, "", obj, 64).unwrap();
        let (_, grads) = cgd_core::training::loss_and_grads(&p, &[&ex]).unwrap();
        let loss_at = |s: f64| {
            let mut q = p.clone();
            for (t, g) in q.tensors_mut().into_iter().zip(&grads) {
                t.data.iter_mut().zip(&g.data).for_each(|(x, gi)| *x += s * gi / norm);
            }
            batch_loss(&q, &[&ex]).unwrap()
        };
        let eps = 1e-5;
        let fd = (loss_at(eps) - loss_at(-eps)) / (2.0 * eps);
        assert!((fd - norm).abs() / norm < 1e-4, "{cond:?}: fd {fd} vs norm {norm}");
    }
}

#[test]
fn grad_norm_vanishes_on_a_memorized_record() {
    let rec = short_record();
    let p = model(16, 1, 2, 32, 64, 6, InitMode::Normal);
    let before = grad_norm_probe(&p, &rec, Condition::WithCritique).unwrap();
    let ex = vec![render(&rec, "", Objective::Cgd, 64).unwrap()];
    let hp = TrainHP { batch_size: 1, total_steps: 400, peak_lr: 1e-2, adamw: weight_decay_free(), ..TrainHP::default() };
    let trained = train(&p, &ex, &hp).unwrap().params;
    let after = grad_norm_probe(&trained, &rec, Condition::WithCritique).unwrap();
    assert!(after < 0.02 * before, "before {before} after {after}");
}

fn weight_decay_free() -> cgd_core::training::AdamW {
    cgd_core::training::AdamW { weight_decay: 0.0, ..Default::default() }
}

#[test]
fn grad_norm_report_is_total_and_critique_blind_without_critique() {
    let f = fixture(40, 7);
    let m = model(16, 1, 2, 32, 256, 7, InitMode::Normal);
    let r = grad_norm_report(&m, &f.records).unwrap();
    assert_eq!(r.n, 40);
    assert!(r.rows.iter().all(|x| x.with_critique.is_finite() && x.with_critique >= 0.0 && x.without_critique >= 0.0));
    let mut other = f.records[0].clone();
    other.critique = f.records[1].critique.clone();
    assert_eq!(
        grad_norm_probe(&m, &f.records[0], Condition::WithoutCritique).unwrap().to_bits(),
        grad_norm_probe(&m, &other, Condition::WithoutCritique).unwrap().to_bits()
    );
}

// ---------- attention flow ----------

#[test]
fn uniform_attention_gives_length_shares() {
    let rec = &fixture(1, 8).records[0];
    let m = model(16, 1, 2, 32, 256, 0, InitMode::Zeros);
    let report = attention_flow(&m, rec, 10).unwrap();
    let lens: Vec<f64> = report.sections.iter().map(|s| (s.end - s.start) as f64).collect();
    let total: f64 = lens.iter().sum();
    assert_eq!(report.generated, 10);
    for layer in &report.layers {
        for ph in &layer.phases {
            assert!((ph.problem - 100.0 * lens[0] / total).abs() < 1e-9);
            assert!((ph.student_answer - 100.0 * lens[1] / total).abs() < 1e-9);
            assert!((ph.critique - 100.0 * lens[2] / total).abs() < 1e-9);
        }
    }
}

#[test]
fn flow_matches_slow_reaggregation() {
    let rec = &fixture(2, 9).records[1];
    let m = model(16, 2, 4, 32, 256, 9, InitMode::Normal);
    let report = attention_flow(&m, rec, 17).unwrap();

    let (ctx, sections) = cgd_context(&rec.prompt, &rec.initial_answer, &rec.critique).unwrap();
    let g = generate(&m, &ctx, &GenerateOptions { max_new: 17, decode: Decode::Greedy, stop_token: Some(EOS), capture: true })
        .unwrap();
    let cap = g.capture.unwrap();
    let n = g.tokens.len();
    assert_eq!(report.generated, n);
    for (l, attn) in cap.layers.iter().enumerate() {
        // phase name → (count, sums)
        let mut buckets: std::collections::BTreeMap<&str, (usize, [f64; 3])> = Default::default();
        for i in 0..n {
            let row = ctx.len() - 1 + i;
            let mut mass = [0.0; 3];
            for (k, s) in sections.iter().enumerate() {
                for col in s.start..s.end {
                    mass[k] += attn.data[row * attn.shape[1] + col];
                }
            }
            let z: f64 = mass.iter().sum();
            let pct = mass.map(|x| 100.0 * x / z);
            let frac = (i as f64 + 0.5) / n as f64;
            let name = if frac < 0.25 { "early" } else if frac < 0.75 { "middle" } else { "late" };
            let mut names = vec![name];
            if i == 0 {
                names.push("first_token");
            }
            for nm in names {
                let e = buckets.entry(nm).or_insert((0, [0.0; 3]));
                e.0 += 1;
                for k in 0..3 {
                    e.1[k] += pct[k];
                }
            }
        }
        let layer = &report.layers[l];
        assert_eq!(layer.phases.len(), buckets.len());
        for ph in &layer.phases {
            let key = serde_json::to_value(ph.phase).unwrap();
            let (count, sums) = buckets[key.as_str().unwrap()];
            assert_eq!(ph.tokens, count);
            assert!((ph.problem - sums[0] / count as f64).abs() < 1e-9);
            assert!((ph.student_answer - sums[1] / count as f64).abs() < 1e-9);
            assert!((ph.critique - sums[2] / count as f64).abs() < 1e-9);
            assert!((ph.total() - 100.0).abs() < 1e-9);
        }
    }
}

#[test]
fn hand_built_capture() {
    // One layer, 6 positions, causal uniform rows.
    let t = 6;
    let mut data = vec![0.0; t * t];
    for q in 0..t {
        for k in 0..=q {
            data[q * t + k] = 1.0 / (q + 1) as f64;
        }
    }
    let capture = AttentionCapture {
        layers: vec![Tensor::new(vec![t, t], data).unwrap()],
        sections: vec![
            Section { name: "problem".into(), start: 0, end: 1 },
            Section { name: "student_answer".into(), start: 1, end: 3 },
            Section { name: "critique".into(), start: 3, end: 4 },
        ],
    };
    let flow = aggregate_flow(&capture, 5, 2);
    let phases: Vec<Phase> = flow[0].phases.iter().map(|p| p.phase).collect();
    assert_eq!(phases, vec![Phase::FirstToken, Phase::Middle, Phase::Late]);
    for p in &flow[0].phases {
        assert!((p.problem - 25.0).abs() < 1e-12 && (p.student_answer - 50.0).abs() < 1e-12);
    }
    assert_eq!(section_shares(&capture.layers[0], 4, &capture.sections), [25.0, 50.0, 25.0]);
}

// ---------- exact match and drift ----------

/// Last `Answer: ` line, via plain string handling.
fn last_answer(text: &str) -> Option<&str> {
    text.lines().rev().find_map(|l| l.trim().strip_prefix("Answer: ").map(str::trim))
}

#[test]
fn exact_match_fixture_of_200() {
    let ps = problems(200, 10);
    let outputs: Vec<String> = ps
        .iter()
        .enumerate()
        .map(|(i, p)| match i % 5 {
            0 => render_solution(p),
            1 => format!("step 1: nonsense\nAnswer: {}", p.gold_answer),
            2 => format!("Answer: {}9", p.gold_answer),
            3 => String::new(),
            _ => format!("Answer: {}\nAnswer: x", p.gold_answer),
        })
        .collect();
    let hand = ps.iter().zip(&outputs).filter(|(p, o)| last_answer(o) == Some(p.gold_answer.as_str())).count();
    let ev = score_outputs(&ps, &outputs);
    assert_eq!(ev.report.correct, hand);
    assert_eq!(ev.report.correct, 80);
    assert!((ev.report.exact_match_accuracy - hand as f64 / 200.0).abs() < 1e-15);
    assert_eq!(ev.report.per_task.values().map(|b| b.n).sum::<usize>(), 200);
    assert_eq!(ev.report.per_task.values().map(|b| b.correct).sum::<usize>(), hand);
}

struct Silent;
impl Responder for Silent {
    fn respond(&self, _: &Problem, _: &[usize]) -> Result<String, ProbeError> {
        Ok(String::new())
    }
}

#[test]
fn exact_match_extremes_and_determinism() {
    let ps = problems(30, 11);
    assert_eq!(exact_match(&OracleResponder, &ps).unwrap().report.exact_match_accuracy, 1.0);
    assert_eq!(exact_match(&Silent, &ps).unwrap().report.exact_match_accuracy, 0.0);
    let m = model(16, 1, 2, 32, 128, 1, InitMode::Normal);
    let r = ModelResponder::greedy(&m, 20);
    assert_eq!(exact_match(&r, &ps[..5]).unwrap(), exact_match(&r, &ps[..5]).unwrap());
}

#[test]
fn drift_fixture_of_10() {
    let outputs: Vec<String> = [
        "step 1: 1+1=2\nAnswer: 2",
        "Answer: 3\nConclusion: right.",
        "Conclusion: wrong.",
        "Answer: 4",
        "the conclusion: right",
        "xx Conclusion: right. yy",
        "",
        "Answer: 1\nConclusion: wrong.\nConclusion: right.",
        "Conclusion:right.",
        "step 1: 2*3=6\nAnswer: 6",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    // Hand labels: entries 1, 2, 5 and 7 carry an exact marker.
    assert!((format_drift_rate(&outputs) - 0.4).abs() < 1e-15);
    assert_eq!(format_drift_rate(&outputs[..1]), 0.0);
    assert_eq!(format_drift_rate(&vec!["Answer: 1\nConclusion: right.".to_string(); 4]), 1.0);
    assert_eq!(format_drift_rate(&[]), 0.0);
}

// ---------- counterfactual ----------

#[test]
fn counterfactual_with_degenerate_and_perfect_responders() {
    let f = fixture(100, 12);
    let oracle: Vec<_> = f.records.iter().map(|r| counterfactual_probe(&OracleResponder, r).unwrap()).collect();
    assert!(oracle.iter().all(|o| o.factual_correct && o.counterfactual_correct));
    let echo: Vec<_> = f.records.iter().map(|r| counterfactual_probe(&EchoCritiqueResponder, r).unwrap()).collect();
    assert!(echo.iter().all(|o| !o.factual_correct && !o.counterfactual_correct));
    let t = counterfactual_table(&oracle);
    assert_eq!((t.n, t.both_correct, t.factual_correct(), t.counterfactual_correct()), (100, 100, 100, 100));
    let t = counterfactual_table(&echo);
    assert_eq!(t.cells(), [[0, 0], [0, 100]]);
}

// ---------- bayes ----------

fn random_case(rng: &mut ChaCha8Rng, n: usize) -> BayesCase {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
    let z: f64 = raw.iter().sum();
    let prior: Vec<f64> = raw.iter().map(|x| x / z).collect();
    let likelihood: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..5.0)).collect();
    BayesCase { prior, likelihood, target_posterior: vec![1.0 / n as f64; n] }
}

#[test]
fn posterior_matches_brute_force_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..200 {
        let case = random_case(&mut rng, 6);
        let r = bayes_posterior(&case).unwrap();
        // Enumerate outcomes one at a time, accumulating evidence separately.
        let mut evidence = 0.0;
        for i in 0..6 {
            evidence += case.prior[i] * case.likelihood[i];
        }
        for i in 0..6 {
            assert!((r.posterior[i] - case.prior[i] * case.likelihood[i] / evidence).abs() < 1e-12);
        }
        let scaled = BayesCase { likelihood: case.likelihood.iter().map(|l| l * 37.5).collect(), ..case.clone() };
        assert_eq!(argmax(&bayes_posterior(&scaled).unwrap().posterior), argmax(&r.posterior));
    }
}

#[test]
fn posterior_special_cases() {
    let uniform = BayesCase { prior: vec![0.25; 4], likelihood: vec![1.0, 3.0, 0.0, 4.0], target_posterior: vec![0.125, 0.375, 0.0, 0.5] };
    let r = bayes_posterior(&uniform).unwrap();
    assert_eq!(r.posterior, vec![0.125, 0.375, 0.0, 0.5]);
    assert!(r.kl.abs() < 1e-15);
    let indicator = BayesCase { prior: vec![0.2, 0.3, 0.5], likelihood: vec![0.0, 2.0, 0.0], target_posterior: vec![1.0, 0.0, 0.0] };
    let r = bayes_posterior(&indicator).unwrap();
    assert_eq!(r.posterior, vec![0.0, 1.0, 0.0]);
    assert!(r.kl.is_infinite());
    let zero = BayesCase { likelihood: vec![0.0; 3], ..indicator.clone() };
    assert!(matches!(bayes_posterior(&zero), Err(ProbeError::ZeroNormalizer)));
    let bad_prior = BayesCase { prior: vec![0.5, 0.6, 0.0], ..indicator };
    assert!(matches!(bayes_posterior(&bad_prior), Err(ProbeError::InvalidCase(_))));
}

proptest! {
    #[test]
    fn posterior_is_self_consistent(seed in any::<u64>(), n in 1usize..12, scale in 1e-6f64..1e6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut case = random_case(&mut rng, n);
        case.likelihood[0] += 0.1;
        let r = bayes_posterior(&case).unwrap();
        let again = bayes_posterior(&BayesCase { target_posterior: r.posterior.clone(), ..case.clone() }).unwrap();
        prop_assert!(again.kl.abs() < 1e-12);
        let scaled = BayesCase { likelihood: case.likelihood.iter().map(|l| l * scale).collect(), ..case };
        prop_assert_eq!(argmax(&bayes_posterior(&scaled).unwrap().posterior), argmax(&r.posterior));
    }
}

// ---------- paired test ----------

#[test]
fn paired_t_statistic_by_hand() {
    let a = [4.1, 5.3, 2.2, 7.9, 6.0, 3.3, 4.4, 5.8];
    let b = [3.9, 4.8, 2.9, 6.1, 5.5, 3.0, 4.0, 4.9];
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let sum: f64 = d.iter().sum();
    let sum_sq: f64 = d.iter().map(|x| x * x).sum();
    // t = d̄ / sqrt((Σd² − n·d̄²) / (n(n−1)))
    let dbar = sum / n;
    let t_hand = dbar / ((sum_sq - n * dbar * dbar) / (n * (n - 1.0))).sqrt();
    let r = paired_test(&a, &b).unwrap();
    assert!((r.t.unwrap() - t_hand).abs() < 1e-10);
    assert_eq!(r.df, 7);
    assert!(r.p_value > 0.0 && r.p_value < 1.0);
}

#[test]
fn paired_p_values_match_closed_forms() {
    // df = 1 is Cauchy: p = 1 − (2/π)·atan|t|.
    let r = paired_test(&[3.0, 1.0], &[1.0, 0.5]).unwrap();
    let t = r.t.unwrap();
    let want = 1.0 - 2.0 / std::f64::consts::PI * t.abs().atan();
    assert!((r.p_value - want).abs() < 1e-9, "{} vs {want}", r.p_value);
    // df = 2: p = 1 − |t| / sqrt(2 + t²).
    let r = paired_test(&[1.0, 2.5, 0.2], &[0.0, 1.0, 0.4]).unwrap();
    let t = r.t.unwrap();
    let want = 1.0 - t.abs() / (2.0 + t * t).sqrt();
    assert!((r.p_value - want).abs() < 1e-9, "{} vs {want}", r.p_value);
}

#[test]
fn paired_test_edge_cases() {
    let x = [1.0, 2.0, 3.0];
    let r = paired_test(&x, &x).unwrap();
    assert!(r.degenerate && r.p_value == 1.0 && r.t.is_none());
    let shifted: Vec<f64> = x.iter().map(|v| v + 1.0).collect();
    let r = paired_test(&shifted, &x).unwrap();
    assert!(r.degenerate && r.p_value == 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let base: Vec<f64> = (0..100).map(|_| rng.gen_range(0.0..10.0)).collect();
    let moved: Vec<f64> = base.iter().map(|v| v + 0.5 + rng.gen_range(-1e-3..1e-3)).collect();
    assert!(paired_test(&moved, &base).unwrap().p_value < 1e-6);

    assert!(matches!(paired_test(&[1.0], &[2.0]), Err(ProbeError::TooFew(1))));
    assert!(matches!(paired_test(&[1.0, 2.0], &[2.0]), Err(ProbeError::LengthMismatch { .. })));
}

// ---------- report files ----------

#[test]
fn report_files_roundtrip_and_check_version() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("entropy.jsonl");
    let m = model(16, 1, 2, 32, 256, 2, InitMode::Normal);
    let r = entropy_probe(&m, &fixture(5, 15).records).unwrap();
    write_report(&path, "entropy", &(r.n, r.mean), &r.rows).unwrap();
    let back: ReportFile<(usize, f64), EntropyRow> = read_report(&path, "entropy").unwrap();
    assert_eq!(back.rows, r.rows);
    assert_eq!(back.summary, (5, r.mean));
    assert!(read_report::<(usize, f64), EntropyRow>(&path, "grad_norm").is_err());
    let text = std::fs::read_to_string(&path).unwrap().replacen("\"version\":1", "\"version\":99", 1);
    std::fs::write(&path, text).unwrap();
    assert!(read_report::<(usize, f64), EntropyRow>(&path, "entropy").is_err());
}
