//! `dgcn`: train, decode, evaluate, analyze and sweep keyphrase models.
//!
//! Exit status is 0 on success, 1 for usage or configuration errors, 2 for data
//! errors and 3 for numeric failures. Log verbosity comes from `DGCN_LOG`.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dgcn_core::{Error, ErrorClass, Result};

use crate::config::RunConfig;

pub const LOG_ENV: &str = "DGCN_LOG";

#[derive(Parser)]
#[command(name = "dgcn", version, about = "Keyphrase generation with a dynamic syntactic graph encoder")]
struct Cli {
    /// Worker threads for per-document parallelism; defaults to the logical core count.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.lr=0.01`; repeatable, applied in order.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write its artifact directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate keyphrases for an annotated file.
    Decode {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Artifact directory written by `train`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the edge weights used for every phrase.
        #[arg(long)]
        snapshots: bool,
    },
    /// Score predictions against the present keyphrases of an annotated file.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean edge weight per class and phrase index from decode snapshots.
    Analyze {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        snapshots: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode and score over a grid of diversity weights.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated λ₁ values.
        #[arg(long, default_value = "0.1,0.5,1.0,2.0,5.0,10.0")]
        lambda1: String,
        /// Comma-separated λ₂ values.
        #[arg(long, default_value = "0.01,0.05,0.1,0.5,1.0,2.0")]
        lambda2: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    }
    match cli.command {
        Command::Train { cfg, out } => {
            let cfg = cfg.load()?;
            let s = commands::run_train(&cfg, &out)?;
            log::info!("trained {} steps; best validation perplexity {:.4} at step {}", s.steps, s.best_valid_ppl, s.best_step);
        }
        Command::Decode {
            cfg,
            model,
            input,
            out,
            snapshots,
        } => {
            let cfg = cfg.load()?;
            let n = commands::run_decode(&cfg, &model, &input, &out, snapshots)?;
            log::info!("decoded {n} documents");
        }
        Command::Eval {
            cfg,
            predictions,
            gold,
            out,
        } => {
            let cfg = cfg.load()?;
            let r = commands::run_eval(&cfg, &predictions, &gold, &out)?;
            println!(
                "F1@M {:.4}  F1@5 {:.4} (filled)  F1@5 {:.4}  F1@10 {:.4}  NDCG@10 {:.4}  Avg# {:.2}  Corr# {:.2}  ({} documents, {} without present keyphrases)",
                r.f1_at_m, r.f1_at_5_filled, r.f1_at_5, r.f1_at_10, r.ndcg_at_10, r.avg_predicted, r.avg_correct, r.documents, r.skipped_empty_truth
            );
        }
        Command::Analyze {
            cfg,
            snapshots,
            gold,
            out,
        } => {
            let cfg = cfg.load()?;
            let n = commands::run_analyze(&cfg, &snapshots, &gold, &out)?;
            log::info!("wrote {n} trend rows");
        }
        Command::Sweep {
            cfg,
            model,
            input,
            lambda1,
            lambda2,
            out,
        } => {
            let cfg = cfg.load()?;
            let l1 = commands::parse_grid(&lambda1)?;
            let l2 = commands::parse_grid(&lambda2)?;
            let rows = commands::run_sweep(&cfg, &model, &input, &l1, &l2, &out)?;
            log::info!("wrote {} sweep rows", rows.len());
        }
    }
    Ok(())
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
