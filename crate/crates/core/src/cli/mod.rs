//! Command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or I/O error, 3 numerical
//! failure (divergence, CG failure, or the iteration cap reached before the
//! discrepancy principle held).

mod commands;
mod config;
pub mod store;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{Config, Geometry, SolverSettings};

use crate::error::Error;

#[derive(Parser, Debug)]
#[command(name = "inett", version, about = "Iterated network Tikhonov reconstruction for sparse-view CT")]
pub struct Cli {
    /// Upper bound on worker threads. Every command currently runs on one.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: u32,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate random ellipse phantoms.
    GenPhantoms(GenPhantomsArgs),
    /// Simulate sinograms and build (z, r) training pairs.
    BuildDataset(BuildDatasetArgs),
    /// Train a U-net on a dataset directory.
    Train(TrainArgs),
    /// Reconstruct an image from a sinogram.
    Reconstruct(ReconstructArgs),
    /// PSNR and SSIM of reconstructions against a ground truth.
    Evaluate(EvaluateArgs),
    /// Convert an image to 8-bit PGM.
    Export(ExportArgs),
}

#[derive(Args, Debug)]
pub struct GenPhantomsArgs {
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub min_ellipses: usize,
    #[arg(long, default_value_t = 8)]
    pub max_ellipses: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct BuildDatasetArgs {
    /// Directory written by `gen-phantoms`.
    #[arg(long)]
    pub phantoms: PathBuf,
    /// Detector and view counts as `DETxVIEWS`.
    #[arg(long)]
    pub geometry: Option<String>,
    /// Number of artifact samples (taken from the first phantoms).
    #[arg(long)]
    pub n1: usize,
    /// Number of clean samples.
    #[arg(long)]
    pub n2: usize,
    #[arg(long, default_value_t = 0.10)]
    pub noise_max: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_checkpoint: PathBuf,
    /// Train under the convexity constraints.
    #[arg(long, conflicts_with = "unconstrained")]
    pub convex: bool,
    /// Train without constraints.
    #[arg(long)]
    pub unconstrained: bool,
    /// Also write `<checkpoint>.epochNNNN` every this many epochs.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Training history CSV; defaults to `<checkpoint>.history.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Inett,
    Nett,
    Sit,
    Art,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    /// Sinogram NIMG of shape `[detectors, views]`.
    #[arg(long)]
    pub sinogram: PathBuf,
    /// Noise level `|y_delta - y|_Y`, required for inett and sit.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Fixed regularization weight for nett.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Image side length; defaults to the configured one.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the reconstruction as PGM.
    #[arg(long)]
    pub pgm: Option<PathBuf>,
    /// Iteration history CSV; defaults to `<out>.history.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Reconstruction as `LABEL=PATH` or `PATH` (label is the file stem).
    #[arg(long, required = true, num_args = 1..)]
    pub recon: Vec<String>,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub out_table: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Stretch `[min, max]` to `[0, 255]` instead of clamping `[0, 1]`.
    #[arg(long)]
    pub normalize: bool,
}

/// A command failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Divergence { .. } | Error::CgNotConverged { .. } => 3,
            _ => 2,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::GenPhantoms(a) => commands::gen_phantoms(a),
        Command::BuildDataset(a) => commands::build_dataset(a),
        Command::Train(a) => commands::train(a),
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Export(a) => commands::export(a),
    }
}
