//! Command-line driver: `synth`, `train`, `eval`, `decompose`, `gradcheck`.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error, 3 data or
//! compatibility error, 4 numerical abort, 5 gradient check failure.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use wavetex::checkpoint::CheckpointError;
use wavetex::data::DataError;
use wavetex::model::ModelError;
use wavetex::train::TrainError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("gradient check failed: {0}")]
    Gradcheck(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Gradcheck(_) => 5,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(m) => CliError::Config(m),
            ModelError::Tensor(t) => CliError::Numeric(t.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => CliError::Config(m),
            TrainError::Model(m) => m.into(),
            TrainError::Data(d) => d.into(),
            TrainError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            TrainError::Checkpoint(_) | TrainError::Io { .. } => CliError::Other(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "wavetex", version, about = "Texture classification with a learnable lifting-wavelet branch")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic grating dataset.
    Synth(SynthArgs),
    /// Train a model on a manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Dump per-level wavelet subbands of one image as PGM files.
    Decompose(DecomposeArgs),
    /// Compare analytic gradients with finite differences at f64.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 32)]
    pub side: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `key=value` run configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Manifest CSV, or a directory containing `manifest.csv`.
    #[arg(long)]
    pub data: PathBuf,
    /// awtm, dawn or backbone_only.
    #[arg(long)]
    pub variant: Option<String>,
    /// pos1..pos5.
    #[arg(long)]
    pub tap: Option<String>,
    /// Integer or `auto`.
    #[arg(long)]
    pub levels: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = wavetex::metrics::DEFAULT_POSITIVE)]
    pub positive_class: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Histogram-equalize inputs, as training does by default.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub equalize: bool,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long, conflicts_with = "identity", required_unless_present = "identity")]
    pub checkpoint: Option<PathBuf>,
    /// Use a freshly initialized branch (an exact Haar cascade) on the raw image.
    #[arg(long)]
    pub identity: bool,
    /// Branch type for `--identity`: awtm or dawn.
    #[arg(long, default_value = "awtm")]
    pub variant: String,
    #[arg(long)]
    pub image: PathBuf,
    /// Integer or `auto`.
    #[arg(long, default_value = "auto")]
    pub levels: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub equalize: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "awtm")]
    pub variant: String,
    #[arg(long, default_value = "pos3")]
    pub tap: String,
    /// Integer or `auto`.
    #[arg(long, default_value = "auto")]
    pub levels: String,
    #[arg(long, default_value_t = 3)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, hide = true)]
    pub corrupt_backward: bool,
}

/// Worker cap from `WLFT_THREADS`; defaults to 1.
pub fn thread_count() -> Result<usize, CliError> {
    match std::env::var("WLFT_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Config(format!("WLFT_THREADS must be a positive integer, got `{v}`"))),
        },
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    thread_count()?;
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Decompose(a) => commands::decompose(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
