//! Operator entry point: train / forecast / scales / graph-export /
//! delta-experiment, all emitting machine-readable artifacts.

mod commands;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "msgnet",
    about = "Multi-scale graph time-series forecaster",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Train one model per horizon; writes checkpoints, epoch logs, and a
    /// metrics file into --out
    Train {
        /// Flat key=value config file (CLI flags take precedence)
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Forecast past the end of a CSV with a trained checkpoint
    Forecast {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input CSV; the last `lookback` rows feed the model
        #[arg(long)]
        data: PathBuf,
        /// Output CSV path
        #[arg(long, default_value = "forecast.csv")]
        out: PathBuf,
        /// Must match the checkpoint's trained horizon when given
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Dump detected scales per sliding window plus an aggregate histogram
    Scales {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 96)]
        lookback: usize,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long, default_value = "scales.json")]
        out: PathBuf,
    },
    /// Export every (block, scale rank) adjacency matrix from a checkpoint
    GraphExport {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Optional dataset; attaches representative detected periods
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "graph.json")]
        out: PathBuf,
    },
    /// Mixhop vs graph-free MLP on the two-hop delta-operator family
    DeltaExperiment {
        #[arg(long, default_value_t = 50)]
        seeds: usize,
        #[arg(long, default_value = "delta.json")]
        out: PathBuf,
    },
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Train { config, overrides } => {
            let cfg = RunConfig::resolve(config.as_deref(), &overrides)?;
            commands::cmd_train(&cfg)
        }
        Command::Forecast {
            checkpoint,
            data,
            out,
            horizon,
        } => commands::cmd_forecast(&checkpoint, &data, &out, horizon),
        Command::Scales {
            data,
            lookback,
            k,
            stride,
            out,
        } => commands::cmd_scales(&data, lookback, k, stride, &out),
        Command::GraphExport {
            checkpoint,
            data,
            out,
        } => commands::cmd_graph_export(&checkpoint, data.as_deref(), &out),
        Command::DeltaExperiment { seeds, out } => commands::cmd_delta_experiment(seeds, &out),
    }
}
