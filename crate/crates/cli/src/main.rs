mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use mfam_core::Aggregator;

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "mfam", version, about = "Motion-signal classification with MFAM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        /// Generator settings as JSON; defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, env = "MFAM_SEED", default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one model on a fixed subject split.
    Train(RunArgs),
    /// Subject-level k-fold cross-validation.
    Cv {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        folds: Option<usize>,
        /// Folds trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Print metrics of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Band override, e.g. "0.5-3,3-7,7-12".
        #[arg(long)]
        bands: Option<String>,
        #[arg(long)]
        activity: Option<String>,
    },
    /// Split a recording into frequency bands.
    Decompose {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "0.5-3,3-7,7-12")]
        bands: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export per-instance attention weights for one recording.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        recording: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Falls back to the config file, then to MFAM_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// attention_mil or gap.
    #[arg(long)]
    aggregator: Option<Aggregator>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    bands: Option<String>,
    #[arg(long)]
    activity: Option<String>,
}

impl RunArgs {
    fn resolve(self, folds: Option<usize>) -> Result<RunConfig> {
        RunConfig::resolve(
            self.config.as_deref(),
            Overrides {
                data: self.data,
                out: self.out,
                seed: self.seed,
                env_seed: env_seed()?,
                aggregator: self.aggregator,
                epochs: self.epochs,
                patience: self.patience,
                lr: self.lr,
                hidden_dim: self.hidden_dim,
                bands: self.bands,
                activity: self.activity,
                folds,
            },
        )
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("MFAM_SEED") {
        Ok(v) => Ok(Some(
            v.parse()
                .map_err(|_| anyhow::anyhow!("MFAM_SEED must be an unsigned integer, got {v:?}"))?,
        )),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { spec, seed, out } => commands::synth(spec.as_deref(), seed, &out),
        Command::Train(args) => commands::train(&args.resolve(None)?),
        Command::Cv { run, folds, jobs } => commands::cv(&run.resolve(folds)?, jobs),
        Command::Eval {
            checkpoint,
            data,
            bands,
            activity,
        } => commands::eval(&checkpoint, &data, bands.as_deref(), activity.as_deref()),
        Command::Decompose { input, bands, out } => commands::decompose(&input, &bands, &out),
        Command::Explain {
            checkpoint,
            recording,
            out,
        } => commands::explain(&checkpoint, &recording, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
