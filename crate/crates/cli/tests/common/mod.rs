#![allow(dead_code)]

use std::path::{Path, PathBuf};

use cgd_cli::config::ExperimentConfig;

/// A config small enough to run the whole pipeline in a few seconds.
pub fn tiny(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig { out: out.to_path_buf(), ..ExperimentConfig::default() };
    c.model.d_model = 16;
    c.model.n_layers = 1;
    c.model.d_ff = 32;
    c.student.problems = 40;
    c.student.train.total_steps = 10;
    c.student.train.batch_size = 4;
    c.datagen.corpus_size = 24;
    c.datagen.max_new = 40;
    c.datagen.mixture_size = 8;
    c.train.total_steps = 4;
    c.train.batch_size = 4;
    c.eval.problems = 12;
    c.eval.max_new = 40;
    c.probes.records = 8;
    c.probes.attention_records = 2;
    c.probes.counterfactual_problems = 4;
    c.probes.max_new = 24;
    c
}

/// Every file below `root`, relative and sorted, with its bytes.
pub fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}
