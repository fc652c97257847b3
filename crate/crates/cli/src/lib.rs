//! Command-line front end over `sgmt-core`: synthesize a dataset, train,
//! caption, evaluate, and sweep patch limits into a metrics grid.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::{CaptionArgs, EvalArgs, Split, SweepArgs, TrainArgs};
use config::RunConfig;
use error::Result;

#[derive(Debug, Parser)]
#[command(name = "sgmt", about = "Patch-bag slide captioning pipeline", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic slide dataset into a directory.
    SynthData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
        /// Override the config's top-level seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model on a dataset directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Hyperparameter profile: `desk` (default) or `paper`.
        #[arg(long, default_value = "desk")]
        profile: String,
        /// Override the training patch cap M.
        #[arg(long)]
        m_limit: Option<usize>,
        /// Continue from a checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long, default_value_t = 0.2)]
        holdout_fraction: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate captions (JSON lines) for a dataset split.
    Caption {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Ensemble size k (default from config, else 5).
        #[arg(long)]
        vote: Option<usize>,
        /// Inference patch cap (default ⌊α·M⌋ = 64).
        #[arg(long)]
        infer_limit: Option<usize>,
        #[arg(long, default_value = "holdout")]
        split: Split,
        #[arg(long, default_value_t = 0.2)]
        holdout_fraction: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a candidates file against a dataset's captions.
    Eval {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "holdout")]
        split: Split,
        #[arg(long, default_value_t = 0.2)]
        holdout_fraction: f64,
    },
    /// Train one model per train limit and evaluate at each infer limit.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated training caps, e.g. `1,4,16`.
        #[arg(long, value_delimiter = ',', required = true)]
        train_limits: Vec<usize>,
        /// Comma-separated inference caps, e.g. `1,2,4,8,16,32`.
        #[arg(long, value_delimiter = ',', required = true)]
        infer_limits: Vec<usize>,
        #[arg(long, default_value = "desk")]
        profile: String,
        #[arg(long, default_value_t = 0.2)]
        holdout_fraction: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_config(path: Option<&PathBuf>, seed_override: Option<u64>) -> Result<RunConfig> {
    let mut config = RunConfig::load(path.map(|p| p.as_path()))?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    Ok(config)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData { config, out, force, seed } => {
            let config = load_config(config.as_ref(), seed)?;
            commands::cmd_synth_data(&config, &out, force)?;
        }
        Command::Train {
            config,
            dataset,
            out,
            profile,
            m_limit,
            resume,
            holdout_fraction,
            seed,
        } => {
            let config = load_config(config.as_ref(), seed)?;
            commands::cmd_train(
                &config,
                &TrainArgs {
                    dataset: &dataset,
                    out: &out,
                    profile,
                    m_limit,
                    resume: resume.as_deref(),
                    holdout_fraction,
                },
            )?;
        }
        Command::Caption {
            config,
            checkpoint,
            dataset,
            out,
            vote,
            infer_limit,
            split,
            holdout_fraction,
            seed,
        } => {
            let config = load_config(config.as_ref(), seed)?;
            commands::cmd_caption(
                &config,
                &CaptionArgs {
                    checkpoint: &checkpoint,
                    dataset: &dataset,
                    out: &out,
                    vote_k: vote,
                    infer_limit,
                    split,
                    holdout_fraction,
                },
            )?;
        }
        Command::Eval { candidates, dataset, out, split, holdout_fraction } => {
            commands::cmd_eval(&EvalArgs {
                candidates: &candidates,
                dataset: &dataset,
                out: out.as_deref(),
                split,
                holdout_fraction,
            })?;
        }
        Command::Sweep {
            config,
            dataset,
            out,
            train_limits,
            infer_limits,
            profile,
            holdout_fraction,
            seed,
        } => {
            let config = load_config(config.as_ref(), seed)?;
            commands::cmd_sweep(
                &config,
                &SweepArgs {
                    dataset: &dataset,
                    out: &out,
                    train_limits,
                    infer_limits,
                    profile,
                    holdout_fraction,
                },
            )?;
        }
    }
    Ok(())
}
