//! Run directory layout:
//!
//! ```text
//! <out>/config.toml              resolved config snapshot
//! <out>/manifest.json            sha256 of every artifact below
//! <out>/student.ckpt.json        θ_init
//! <out>/student_curve.jsonl
//! <out>/corpus.jsonl(.meta)      D′
//! <out>/probe_fixture.jsonl(.meta)
//! <out>/runs/<name>/model.ckpt.json, loss_curve.jsonl, run.json, *.jsonl reports
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    /// Creates the directory and writes the config snapshot. An existing
    /// snapshot must match `cfg` in everything but the objective and the
    /// sweep lists, which vary per sub-run (see each `run.json`).
    pub fn create(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let dir = Self { root: cfg.out.clone() };
        fs::create_dir_all(dir.root.join("runs"))?;
        let path = dir.config_path();
        if path.exists() {
            let existing = ExperimentConfig::load(&path)?;
            if (ExperimentConfig { objective: cfg.objective, ablate: cfg.ablate.clone(), ..existing }) != *cfg {
                return Err(CliError::Config(format!(
                    "{} holds a run with a different config; pick another --out",
                    dir.root.display()
                )));
            }
        } else {
            fs::write(&path, cfg.to_toml())?;
            dir.record(&[&path])?;
        }
        Ok(dir)
    }

    /// Opens an existing run directory and loads its snapshot.
    pub fn open(root: &Path) -> Result<(Self, ExperimentConfig), CliError> {
        let dir = Self { root: root.to_path_buf() };
        let path = dir.config_path();
        if !path.exists() {
            return Err(CliError::MissingArtifact(path.display().to_string()));
        }
        let cfg = ExperimentConfig::load(&path)?;
        Ok((dir, cfg))
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn student_checkpoint(&self) -> PathBuf {
        self.root.join("student.ckpt.json")
    }

    pub fn student_curve(&self) -> PathBuf {
        self.root.join("student_curve.jsonl")
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus.jsonl")
    }

    pub fn probe_fixture(&self) -> PathBuf {
        self.root.join("probe_fixture.jsonl")
    }

    pub fn run(&self, name: &str) -> PathBuf {
        self.root.join("runs").join(name)
    }

    /// Names of sub-runs, sorted.
    pub fn runs(&self) -> Result<Vec<String>, CliError> {
        let mut names = Vec::new();
        let runs = self.root.join("runs");
        if runs.exists() {
            for e in fs::read_dir(runs)? {
                let e = e?;
                if e.file_type()?.is_dir() {
                    names.push(e.file_name().to_string_lossy().into_owned());
                }
            }
        }
        names.sort();
        Ok(names)
    }

    pub fn require(&self, path: &Path) -> Result<(), CliError> {
        if path.exists() {
            Ok(())
        } else {
            Err(CliError::MissingArtifact(path.display().to_string()))
        }
    }

    pub fn manifest(&self) -> Result<Manifest, CliError> {
        let path = self.manifest_path();
        if !path.exists() {
            return Ok(Manifest::default());
        }
        serde_json::from_str(&fs::read_to_string(&path)?).map_err(|e| CliError::Other(format!("manifest: {e}")))
    }

    /// Adds or refreshes the hashes of `paths` in the manifest.
    pub fn record(&self, paths: &[&Path]) -> Result<(), CliError> {
        let mut m = self.manifest()?;
        for p in paths {
            let rel = p.strip_prefix(&self.root).unwrap_or(p).to_string_lossy().replace('\\', "/");
            m.files.insert(rel, sha256_file(p)?);
        }
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        fs::write(self.manifest_path(), text + "\n")?;
        Ok(())
    }

    /// Listed artifacts whose current hash differs from the manifest (or
    /// that are gone).
    pub fn verify_manifest(&self) -> Result<Vec<String>, CliError> {
        let m = self.manifest()?;
        let mut bad = Vec::new();
        for (rel, hash) in &m.files {
            let p = self.root.join(rel);
            if !p.exists() || &sha256_file(&p)? != hash {
                bad.push(rel.clone());
            }
        }
        Ok(bad)
    }
}
