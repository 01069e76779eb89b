use std::path::Path;
use std::time::Instant;

use cgd_cli::config::ExperimentConfig;
use cgd_cli::pipeline::*;
use cgd_core::datagen::{read_corpus, write_corpus, Label};
use cgd_core::engine::{load_checkpoint, save_checkpoint};
use cgd_core::training::Objective;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mut cfg = match args.get(1) {
        Some(p) => ExperimentConfig::load(Path::new(p)).unwrap(),
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.get(2) {
        cfg.seeds.master = s.parse().unwrap();
    }
    let cache = std::env::var("CACHE").unwrap_or_else(|_| "/tmp/scan-cache".into());
    let cache = Path::new(&cache);
    std::fs::create_dir_all(cache).unwrap();
    let (ckpt, corpus_path) = (cache.join("student.json"), cache.join("corpus.jsonl"));
    let student = if ckpt.exists() {
        load_checkpoint(&ckpt).unwrap()
    } else {
        let t = Instant::now();
        let s = train_student(&cfg, |p| if p.step % 200 == 0 { eprintln!("  student step {} loss {:.3}", p.step, p.loss) }).unwrap();
        eprintln!("student {:.1}s", t.elapsed().as_secs_f64());
        save_checkpoint(&s.params, &ckpt).unwrap();
        s.params
    };
    let ev = evaluate(&cfg, &student).unwrap();
    println!("student acc {:.3}", ev.report.exact_match_accuracy);
    let corpus = if corpus_path.exists() {
        read_corpus(&corpus_path).unwrap()
    } else {
        let t = Instant::now();
        let c = generate_corpus(&cfg, &student, "s").unwrap();
        eprintln!("corpus {:.1}s", t.elapsed().as_secs_f64());
        write_corpus(&c, &corpus_path).unwrap();
        c
    };
    println!("corpus {} correct {}", corpus.len(), corpus.count(Label::Correct));
    let objs: Vec<Objective> = std::env::var("OBJS")
        .unwrap_or_else(|_| "cgd,cgd_no_critique,cft".into())
        .split(',')
        .map(|o| o.parse().unwrap())
        .collect();
    let mults: Vec<f64> =
        std::env::var("MULTS").unwrap_or_else(|_| "1".into()).split(',').map(|m| m.parse().unwrap()).collect();
    for &mult in &mults {
        for &obj in &objs {
            let t = Instant::now();
            let out = finetune(&cfg, &student, &corpus, obj, mult, |_| {}).unwrap();
            let tt = t.elapsed().as_secs_f64();
            let ev = evaluate(&cfg, &out.params).unwrap();
            let l = out.curve.losses();
            println!(
                "{obj:>16} x{mult}: acc {:.3} drift {:.3} loss {:.3}->{:.3} train {:.0}s total {:.0}s",
                ev.report.exact_match_accuracy,
                ev.report.format_drift_rate,
                l[0],
                l[l.len() - 1],
                tt,
                t.elapsed().as_secs_f64()
            );
            for r in ev.rows.iter().take(2) {
                println!("    {:?} gold {}", r.output, r.gold);
            }
        }
    }
}
