//! Command-line driver: generate synthetic cohorts, train, calibrate and
//! evaluate.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thcm_core::{Error, ErrorKind};

pub use commands::run;

#[derive(Debug, Parser)]
#[command(
    name = "thcm",
    version,
    about = "Causal-graph ICD-9 prediction with conformal prediction sets"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic cohort, its ICD map and the ground-truth sidecar.
    Generate(GenerateArgs),
    /// Train a model and write a checkpoint plus per-epoch history.
    Train(TrainArgs),
    /// Calibrate on the validation split and sweep the miscoverage level.
    Calibrate(EvalArgs),
    /// Score the test split: metrics, prediction sets, graphs, sweeps.
    Evaluate(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// TOML file with `output_dir` and a `[generator]` table.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `generator.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `generator.n_patients`.
    #[arg(long)]
    pub patients: Option<usize>,
}

/// Flags shared by every run command. Each overrides the config file.
#[derive(Debug, Args)]
pub struct RunOverrides {
    /// TOML run config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Cohort JSONL; overrides `paths.cohort`.
    #[arg(long)]
    pub cohort: Option<PathBuf>,
    /// ICD-9 code,description CSV; overrides `paths.icd_map`.
    #[arg(long)]
    pub icd_map: Option<PathBuf>,
    /// Keyword list, one term per line; overrides `paths.keywords`.
    #[arg(long)]
    pub keywords: Option<PathBuf>,
    /// Output directory; overrides `paths.output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunOverrides,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunOverrides,
    /// Checkpoint to load; `<out>/checkpoint.bin` by default.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Miscoverage level for prediction sets; overrides `train.epsilon`.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Comma-separated levels for the calibration sweep.
    #[arg(long, value_delimiter = ',')]
    pub epsilons: Option<Vec<f64>>,
    /// Comma-separated proposition caps; writes `prop_cap_sweep.csv`.
    #[arg(long, value_delimiter = ',')]
    pub prop_cap: Option<Vec<usize>>,
    /// Write per-patient edge lists under `<out>/graphs`.
    #[arg(long)]
    pub export_graph: bool,
    /// Minimum edge weight kept by `--export-graph`.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

/// Process exit status for an error: 2 config, 3 data, 4 runtime.
pub fn exit_code(err: &Error) -> i32 {
    match err.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Runtime => 4,
    }
}
