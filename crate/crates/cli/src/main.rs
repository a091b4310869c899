mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ffhr_core::data::Split;

use crate::commands::EvalArgs;
use crate::config::RunConfig;

/// Hyperbolic knowledge graph completion.
#[derive(Parser)]
#[command(name = "ffhr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints and metrics to output_dir.
    Train(ConfigArgs),
    /// Evaluate a checkpoint with filtered ranking metrics.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory; defaults to the data_dir key.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Hits@10 and hierarchy score per relation.
        #[arg(long)]
        per_relation: bool,
        /// Breakdown by relation category, optionally with a custom threshold.
        #[arg(long, value_name = "THRESHOLD", num_args = 0..=1, default_missing_value = "1.5")]
        categories: Option<f64>,
        /// JSON report path; defaults to eval_<split>.json next to the checkpoint.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck(ConfigArgs),
    /// Write a synthetic tree dataset as train/valid/test TSV files.
    Synth {
        #[arg(long, default_value_t = 7)]
        depth: usize,
        #[arg(long, default_value_t = 2)]
        branching: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Train(c) => {
            let cfg = RunConfig::resolve(c.config.as_deref(), &c.set)?;
            commands::train(&cfg)?;
        }
        Command::Eval {
            config,
            checkpoint,
            data_dir,
            split,
            per_relation,
            categories,
            output,
        } => {
            let cfg = RunConfig::resolve(config.config.as_deref(), &config.set)?;
            let data_dir = data_dir
                .or_else(|| cfg.data_dir.clone())
                .ok_or_else(|| anyhow::anyhow!("no dataset: pass --data-dir or set data_dir"))?;
            let args = EvalArgs {
                checkpoint,
                data_dir,
                split: Split::from_name(&split)?,
                per_relation,
                categories,
                output,
            };
            commands::evaluate(&cfg, &args)?;
        }
        Command::Gradcheck(c) => {
            let cfg = RunConfig::resolve_from(commands::toy_gradcheck_config(), c.config.as_deref(), &c.set)?;
            if !commands::gradcheck(&cfg)? {
                eprintln!("gradient check failed");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Synth {
            depth,
            branching,
            seed,
            out,
        } => commands::synth(depth, branching, seed, &out)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
