mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pipmn::data::Split;
use pipmn::model::gradsuite::SuiteSize;

use crate::commands::Failure;
use crate::config::Overrides;

/// Paired inverse pyramid MLP audio classifier.
#[derive(Parser, Debug)]
#[command(name = "pipmn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract and cache per-segment features for every clip of a manifest.
    Features {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Feature family to extract (stack, mfcc50, mel100); defaults to
        /// the one the configured variant reads.
        #[arg(long)]
        kind: Option<pipmn::dsp::FeatureKind>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train a model on a materialized cache.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for the checkpoint, run log and report.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "val")]
        split: Split,
        /// Cache directory (default: the one recorded in the checkpoint,
        /// then $PIPMN_CACHE_DIR).
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Print the per-stage parameter breakdown.
    Params {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train and evaluate every ablation variant with a shared seed.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Compare analytic gradients with central finite differences (f64).
    Gradcheck {
        #[arg(long, default_value = "tiny")]
        size: SuiteSize,
        #[arg(long)]
        json: bool,
    },
    /// Per-segment class probabilities for one audio file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        wav: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Features {
            config,
            kind,
            overrides,
        } => commands::features::run(config.as_deref(), kind, &overrides),
        Command::Train {
            config,
            out,
            overrides,
        } => commands::train::run(config.as_deref(), &out, &overrides),
        Command::Eval {
            checkpoint,
            split,
            cache_dir,
            batch_size,
        } => commands::eval::run(&checkpoint, split, cache_dir, batch_size),
        Command::Params {
            config,
            json,
            overrides,
        } => commands::params::run(config.as_deref(), json, &overrides),
        Command::Ablate {
            config,
            out_dir,
            overrides,
        } => commands::ablate::run(config.as_deref(), &out_dir, &overrides),
        Command::Gradcheck { size, json } => commands::gradcheck::run(size, json),
        Command::Predict { checkpoint, wav } => commands::predict::run(&checkpoint, &wav),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
