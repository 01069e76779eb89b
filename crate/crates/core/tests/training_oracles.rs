use cgd_core::datagen::{augment, AugmentedRecord, Corpus, GenConfig, NoisyOracleStudent};
use cgd_core::engine::{init_params, InitMode, ModelConfig, ModelParams, Tensor};
use cgd_core::taskworld::{problem_set, Difficulty, Split, TaskKind};
use cgd_core::tokenizer::{encode, VOCAB_SIZE};
use cgd_core::training::{
    adamw_step, batch_loss, lr_at, masked_nll, render, render_corpus, train, AdamState, AdamW, Objective, TrainHP,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn corpus(n: usize, seed: u64) -> Corpus {
    let diff = Difficulty { steps: 3, min_operand: 1, max_operand: 9 };
    let problems = problem_set(Split::Train, seed, &TaskKind::ALL, diff, n).unwrap();
    augment(&problems, &NoisyOracleStudent { error_rate: 0.2 }, &GenConfig::default(), seed).unwrap()
}

fn tiny(seed: u64) -> ModelParams {
    let cfg = ModelConfig {
        vocab_size: VOCAB_SIZE,
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        d_ff: 32,
        max_seq_len: 256,
        seed,
        tied_embeddings: true,
    };
    init_params(&cfg, InitMode::Normal).unwrap()
}

#[test]
fn masked_nll_matches_per_token_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let (t, v) = (rng.gen_range(1..12), rng.gen_range(2..30));
        let data: Vec<f64> = (0..t * v).map(|_| rng.gen_range(-6.0..6.0)).collect();
        let targets: Vec<usize> = (0..t).map(|_| rng.gen_range(0..v)).collect();
        let mut mask: Vec<bool> = (0..t).map(|_| rng.gen_bool(0.6)).collect();
        mask[rng.gen_range(0..t)] = true;
        let logits = Tensor::new(vec![t, v], data.clone()).unwrap();
        let got = masked_nll(&logits, &targets, &mask).unwrap();

        let mut sum = 0.0;
        let mut count = 0.0;
        for pos in 0..t {
            if mask[pos] {
                let row = &data[pos * v..(pos + 1) * v];
                let log_z = row.iter().map(|x| x.exp()).sum::<f64>().ln();
                sum += log_z - row[targets[pos]];
                count += 1.0;
            }
        }
        assert!((got - sum / count).abs() < 1e-10, "{got} vs {}", sum / count);
    }
}

#[test]
fn masked_nll_limits() {
    let uniform = Tensor::zeros(&[4, VOCAB_SIZE]);
    let loss = masked_nll(&uniform, &[1, 2, 3, 4], &[true, false, true, true]).unwrap();
    assert!((loss - (VOCAB_SIZE as f64).ln()).abs() < 1e-14);

    let mut peaked = Tensor::zeros(&[2, 5]);
    peaked.data[3] = 80.0;
    peaked.data[5 + 1] = 80.0;
    let loss = masked_nll(&peaked, &[3, 1], &[true, true]).unwrap();
    assert!(loss < 1e-30);

    assert!(masked_nll(&uniform, &[1, 2, 3, 4], &[false; 4]).is_err());
}

/// AdamW as written in the reference pseudo-code, one scalar at a time.
fn textbook_adamw(theta0: f64, grad: impl Fn(f64) -> f64, lr: f64, wd: f64, steps: usize) -> f64 {
    let (b1, b2, eps) = (0.9_f64, 0.999_f64, 1e-8);
    let (mut theta, mut m, mut v) = (theta0, 0.0, 0.0);
    for t in 1..=steps {
        let g = grad(theta);
        theta -= lr * wd * theta;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(t as i32));
        let v_hat = v / (1.0 - b2.powi(t as i32));
        theta -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    theta
}

#[test]
fn adamw_matches_textbook_on_quadratic() {
    // f(θ) = Σ a_i/2 (θ_i − b_i)²
    let a = [1.0, 4.0, 0.25];
    let b = [2.0, -1.0, 0.5];
    let theta0 = [0.0, 3.0, -2.0];
    for wd in [0.0, 0.01, 0.1] {
        let mut p = Tensor::new(vec![3], theta0.to_vec()).unwrap();
        let mut w = Tensor::new(vec![1, 1], vec![theta0[0]]).unwrap();
        let mut st = AdamState::new(&[&p]);
        let mut st_w = AdamState::new(&[&w]);
        let cfg = AdamW { weight_decay: wd, ..AdamW::default() };
        for _ in 0..10 {
            let g: Vec<f64> = (0..3).map(|i| a[i] * (p.data[i] - b[i])).collect();
            adamw_step(&mut [&mut p], &[Tensor::new(vec![3], g).unwrap()], &[true], &mut st, 0.05, &cfg).unwrap();
            let gw = a[0] * (w.data[0] - b[0]);
            adamw_step(&mut [&mut w], &[Tensor::new(vec![1, 1], vec![gw]).unwrap()], &[false], &mut st_w, 0.05, &cfg)
                .unwrap();
        }
        for i in 0..3 {
            let want = textbook_adamw(theta0[i], |x| a[i] * (x - b[i]), 0.05, wd, 10);
            assert!((p.data[i] - want).abs() < 1e-10, "wd {wd} coord {i}: {} vs {want}", p.data[i]);
        }
        let undecayed = textbook_adamw(theta0[0], |x| a[0] * (x - b[0]), 0.05, 0.0, 10);
        assert!((w.data[0] - undecayed).abs() < 1e-10);
    }
}

#[test]
fn mask_counts_match_independent_tokenization() {
    let c = corpus(500, 3);
    for obj in Objective::ALL {
        let examples = render_corpus(&c, obj, 512).unwrap();
        assert_eq!(examples.len(), 500);
        for (r, ex) in c.records.iter().zip(&examples) {
            let target_text = match obj {
                Objective::Sft => cgd_core::taskworld::render_solution(&r.problem().unwrap()),
                Objective::Cft => r.critique.clone(),
                _ => r.refined_answer.clone(),
            };
            let n = encode(&target_text).unwrap().len();
            assert_eq!(ex.masked_count(), n + 1, "{obj}");
            assert!(ex.loss_mask[..ex.context_len - 1].iter().all(|m| !m));
        }
    }
}

#[test]
fn overfits_a_single_record() {
    let c = corpus(1, 8);
    let cfg = ModelConfig {
        vocab_size: VOCAB_SIZE,
        d_model: 32,
        n_layers: 2,
        n_heads: 2,
        d_ff: 128,
        max_seq_len: 256,
        seed: 1,
        tied_embeddings: true,
    };
    let params = init_params(&cfg, InitMode::Normal).unwrap();
    let ex = render_corpus(&c, Objective::Cgd, 256).unwrap();
    let hp = TrainHP { batch_size: 1, total_steps: 500, peak_lr: 3e-3, ..TrainHP::default() };
    let out = train(&params, &ex, &hp).unwrap();
    let final_loss = batch_loss(&out.params, &[&ex[0]]).unwrap();
    assert!(final_loss < 0.05, "final loss {final_loss}");
}

#[test]
fn fresh_model_starts_near_uniform_loss() {
    let c = corpus(64, 4);
    let ln_v = (VOCAB_SIZE as f64).ln();
    for seed in 0..3 {
        let p = tiny(seed);
        for obj in Objective::ALL {
            let ex = render_corpus(&c, obj, 256).unwrap();
            let refs: Vec<_> = ex.iter().collect();
            let loss = batch_loss(&p, &refs).unwrap();
            assert!((loss - ln_v).abs() < 0.1 * ln_v, "{obj} seed {seed}: {loss}");
        }
    }
}

#[test]
fn training_is_bit_reproducible() {
    let c = corpus(20, 5);
    let ex = render_corpus(&c, Objective::Cft, 256).unwrap();
    let hp = TrainHP { batch_size: 4, total_steps: 12, seed: 77, ..TrainHP::default() };
    let a = train(&tiny(2), &ex, &hp).unwrap();
    let b = train(&tiny(2), &ex, &hp).unwrap();
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.params, b.params);
    let other = train(&tiny(2), &ex, &TrainHP { seed: 78, ..hp }).unwrap();
    assert_ne!(a.curve, other.curve);
}

#[test]
fn loss_curve_file_roundtrip() {
    let c = corpus(8, 6);
    let ex = render_corpus(&c, Objective::Sft, 256).unwrap();
    let out = train(&tiny(1), &ex, &TrainHP { batch_size: 2, total_steps: 5, ..TrainHP::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curve.jsonl");
    out.curve.write(&path).unwrap();
    assert_eq!(cgd_core::training::LossCurve::read(&path).unwrap(), out.curve);
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 5);
}

fn record_strategy() -> impl Strategy<Value = AugmentedRecord> {
    (0u64..10_000).prop_map(|s| corpus(1, s).records.remove(0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn context_targets_never_touch_the_loss(r in record_strategy(), shift in 1usize..VOCAB_SIZE) {
        let p = tiny(9);
        for obj in Objective::ALL {
            let ex = render(&r, "step 1: 1+1=2\nAnswer: 2", obj, 256).unwrap();
            let base = batch_loss(&p, &[&ex]).unwrap();
            let mut perturbed = ex.clone();
            for (t, m) in ex.loss_mask.iter().enumerate() {
                if !m {
                    perturbed.target_ids[t] = (perturbed.target_ids[t] + shift) % VOCAB_SIZE;
                }
            }
            prop_assert_eq!(batch_loss(&p, &[&perturbed]).unwrap().to_bits(), base.to_bits());
        }
    }

    #[test]
    fn critique_conditioning(r in record_strategy(), other in record_strategy()) {
        prop_assume!(r.critique != other.critique);
        let p = tiny(10);
        let mut swapped = r.clone();
        swapped.critique = other.critique.clone();
        let loss = |rec: &AugmentedRecord, obj| batch_loss(&p, &[&render(rec, "", obj, 256).unwrap()]).unwrap();
        prop_assert_eq!(loss(&r, Objective::CgdNoCritique).to_bits(), loss(&swapped, Objective::CgdNoCritique).to_bits());
        prop_assert_ne!(loss(&r, Objective::Cgd), loss(&swapped, Objective::Cgd));
    }

    #[test]
    fn schedule_shape(total in 1usize..5000, warmup in 0.0f64..0.99, peak in 1e-6f64..1.0) {
        let hp = TrainHP { total_steps: total, warmup_ratio: warmup, peak_lr: peak, ..TrainHP::default() };
        let w = hp.warmup_steps();
        if w > 0 {
            prop_assert_eq!(lr_at(0, &hp), 0.0);
        }
        if w < total {
            prop_assert!((lr_at(w, &hp) - peak).abs() <= 1e-12 * peak);
        }
        prop_assert_eq!(lr_at(total, &hp), 0.0);
        for s in 0..=total.min(200) {
            let lr = lr_at(s, &hp);
            prop_assert!((0.0..=peak * (1.0 + 1e-12)).contains(&lr));
        }
    }
}
