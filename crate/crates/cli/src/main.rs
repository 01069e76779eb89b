use std::path::PathBuf;
use std::process::ExitCode;

use cgd_cli::commands::{self, Axis};
use cgd_cli::config::ExperimentConfig;
use cgd_cli::CliError;
use cgd_core::training::Objective;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cgd", about = "Critique-guided distillation experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides `seeds.master`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the student and build the augmented corpus and probe fixture.
    Datagen(Common),
    /// Fine-tune under one objective.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        objective: Option<Objective>,
        #[arg(long, default_value_t = 1.0)]
        lr_multiplier: f64,
    },
    /// Prompt-only exact-match evaluation of a fine-tuned run.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        objective: Option<Objective>,
        #[arg(long, default_value_t = 1.0)]
        lr_multiplier: f64,
    },
    /// Mechanistic probes on a fine-tuned run.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        objective: Option<Objective>,
        #[arg(long, default_value_t = 1.0)]
        lr_multiplier: f64,
    },
    /// Sweep one axis: mixture, lr or objective.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        axis: Axis,
    },
    /// Compare evaluated runs across run directories.
    Report {
        dirs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

fn resolve(c: &Common, objective: Option<Objective>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    if let Some(s) = c.seed {
        cfg.seeds.master = s;
    }
    if let Some(o) = objective {
        cfg.objective = o;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("summary serializes")
}

fn run(cli: Cli) -> Result<String, CliError> {
    Ok(match cli.cmd {
        Cmd::Datagen(c) => json(&commands::cmd_datagen(&resolve(&c, None)?)?),
        Cmd::Train { common, objective, lr_multiplier } => {
            let (name, info) = commands::cmd_train(&resolve(&common, objective)?, lr_multiplier)?;
            format!("{name}\n{}", json(&info))
        }
        Cmd::Eval { common, objective, lr_multiplier } => {
            let cfg = resolve(&common, objective)?;
            json(&commands::cmd_eval(&cfg, &commands::run_name(cfg.objective, lr_multiplier))?)
        }
        Cmd::Probe { common, objective, lr_multiplier } => {
            let cfg = resolve(&common, objective)?;
            let paths = commands::cmd_probe(&cfg, &commands::run_name(cfg.objective, lr_multiplier))?;
            paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join("\n")
        }
        Cmd::Ablate { common, axis } => commands::cmd_ablate(&resolve(&common, None)?, axis)?.table,
        Cmd::Report { dirs, out } => commands::cmd_report(&dirs, &out)?.table,
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(s) => {
            println!("{s}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
