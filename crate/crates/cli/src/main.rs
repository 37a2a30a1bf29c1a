mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Sequential latent-primitive motion prior: synthesis, training, evaluation and completion.
#[derive(Debug, Parser)]
#[command(name = "motion-prior", version, about)]
pub struct Cli {
    /// Seed for every random component; overrides seeds in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Single-threaded numerics with fixed reduction order.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Run configuration (JSON). Flags take precedence over its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic motion files from a spec file.
    Synth(SynthArgs),
    /// Train a prior (and optionally the initialization encoder).
    Train(TrainArgs),
    /// Reconstruction error against sequence duration.
    EvalGen(EvalGenArgs),
    /// Train and compare model variants.
    Ablate(AblateArgs),
    /// Complete a motion from a point-cloud sequence.
    Complete(CompleteArgs),
    /// Subsample a point-cloud sequence, or observe a motion file's surface.
    Downsample(DownsampleArgs),
    /// Dump per-frame joint and surface positions of a motion file.
    Export(ExportArgs),
    /// Run the completion grid over point counts and frame rates.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON list of motion specs, or a `{kinds, shapes, duration, fps}` grid.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Write `train/` and `val/` subdirectories holding out unseen kinds and shapes.
    #[arg(long)]
    pub split: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of training motion files.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Epochs of initialization-encoder training; 0 skips it.
    #[arg(long)]
    pub init_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalGenArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory of test motion files.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma list (`0.5,1,2`) or range `start:end:step` in seconds.
    #[arg(long)]
    pub durations: Option<String>,
    /// Curve CSV; a JSON summary is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Initialization encoder; defaults to the companion `<checkpoint>.init.bin`.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Point-cloud manifest.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Subsample the input to this many points per frame first.
    #[arg(long)]
    pub points: Option<usize>,
    /// Subsample the input to this frame rate first.
    #[arg(long)]
    pub fps: Option<f64>,
    #[arg(long)]
    pub out_fps: Option<f64>,
    /// Output motion file; the report goes to `<stem>.report.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth motion to score the result against.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DownsampleArgs {
    /// Point-cloud manifest.
    #[arg(long = "in", conflicts_with = "motion", required_unless_present = "motion")]
    pub input: Option<PathBuf>,
    /// Motion file whose dense surface is observed instead.
    #[arg(long)]
    pub motion: Option<PathBuf>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub fps: Option<f64>,
    /// Output manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Store frames as little-endian binary instead of text.
    #[arg(long)]
    pub binary: bool,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write surface samples.
    #[arg(long)]
    pub surface: bool,
    #[arg(long, default_value_t = 16)]
    pub samples_per_bone: usize,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Directory of test motion files.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Grid CSV; a JSON summary is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("{}: {message}", e.category());
            ExitCode::from(1)
        }
    }
}
