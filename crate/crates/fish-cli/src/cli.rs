//! Argument surface of the `fish` binary.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "fish",
    about = "Streaming seismic network: phase picks, magnitude, and location from one model",
    version
)]
pub struct Cli {
    /// JSON config file overriding model/training/synthesis defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Master seed for anything random.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Checkpoint path (required by replay/stream/bench/eval).
    #[arg(long, global = true)]
    pub ckpt: Option<PathBuf>,

    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Generate a synthetic dataset directory (FSH1 records + manifest).
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n_train: usize,
        #[arg(long, default_value_t = 500)]
        n_eval: usize,
    },
    /// Train on a dataset directory and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Metrics CSV path.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Replay one FSH1 file through a checkpoint: JSONL stream + summary.
    Replay {
        #[arg(long)]
        input: PathBuf,
        /// JSONL destination (default: stdout).
        #[arg(long)]
        jsonl: Option<PathBuf>,
        /// Summary JSON destination (default: stderr).
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Report magnitude/location this many seconds after the first P.
        #[arg(long, default_value_t = 20.0)]
        report_after_s: f64,
        /// Disable the quiet-stretch auto reset.
        #[arg(long)]
        no_auto_reset: bool,
    },
    /// Stream raw samples: stdin lines "z n e" -> stdout JSONL.
    Stream {
        #[arg(long)]
        no_auto_reset: bool,
    },
    /// Measure per-step latency and state size over a synthetic stream.
    Bench {
        #[arg(long, default_value_t = 1_000_000)]
        steps: usize,
    },
    /// Evaluate a checkpoint on a dataset's eval split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Report JSON destination (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional CSV of the error curves.
        #[arg(long)]
        curves: Option<PathBuf>,
    },
}
