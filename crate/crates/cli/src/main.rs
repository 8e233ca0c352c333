//! `svlf`: generate procedural datasets, train sparse voxel light fields,
//! render, evaluate and benchmark them.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

/// Exit status for bad arguments or inputs, matching clap's own usage errors.
const EXIT_USAGE: u8 = 2;
const EXIT_RUNTIME: u8 = 1;

#[derive(Parser, Debug)]
#[command(name = "svlf", version, about = "Sparse voxel light fields")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "SVLF_THREADS")]
    threads: Option<usize>,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a procedural scene dataset.
    Gen(GenArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Render frames from a checkpoint.
    Render(RenderArgs),
    /// Render a split and compare it with the ground truth.
    Eval(EvalArgs),
    /// Time rendering and count decoder queries.
    Bench(EvalArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Dataset directory to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON config; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    views: Option<usize>,
    /// Image width and height in pixels.
    #[arg(long)]
    res: Option<u32>,
    /// Number of primitives; drawn from 3..=6 by the seed when unset.
    #[arg(long)]
    primitives: Option<usize>,
    /// Camera placement: `hemisphere` or `free`.
    #[arg(long)]
    cameras: Option<String>,
    /// Hemisphere camera distance from the scene center.
    #[arg(long)]
    radius: Option<f64>,
    /// Horizontal field of view in degrees.
    #[arg(long)]
    fov: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for checkpoints and the log.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Epochs per stage, `surface,frozen,finetune`.
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long = "lr-ft")]
    lr_ft: Option<f64>,
    /// Training image width.
    #[arg(long)]
    res: Option<u32>,
    /// Octree resolution per axis.
    #[arg(long = "grid-res")]
    grid_res: Option<u32>,
    /// Occupancy dilation radius in voxels.
    #[arg(long)]
    dilation: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "rays-per-step")]
    rays_per_step: Option<usize>,
    #[arg(long = "lambda-eta")]
    lambda_eta: Option<f64>,
    #[arg(long = "lambda-tau")]
    lambda_tau: Option<f64>,
    #[arg(long = "lambda-empty")]
    lambda_empty: Option<f64>,
    #[arg(long = "lambda-alpha")]
    lambda_alpha: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
pub struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset supplying the cameras.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Split to render: train, val, test or all.
    #[arg(long, default_value = "test")]
    split: String,
    /// Render only these frames (repeatable).
    #[arg(long = "frame")]
    frames: Vec<String>,
    /// Output width; defaults to the dataset's, height follows the aspect.
    #[arg(long)]
    width: Option<u32>,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<svlf::SvlfError> for Failure {
    fn from(e: svlf::SvlfError) -> Self {
        Failure::Runtime(e.into())
    }
}

pub fn usage<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Usage(msg.into()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    }
    let res = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train(a),
        Command::Render(a) => commands::render(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => commands::bench(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
