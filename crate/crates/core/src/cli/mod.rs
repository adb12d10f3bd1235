//! The `pscatter` command line.
//!
//! Every command accepts `--config FILE`, a flat `key = value` file whose keys
//! are the command's long flag names; flags given on the command line win.
//! Each run writes a [`RunManifest`] before producing any output.

mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;

pub use config::ConfigFile;
pub use manifest::{ErrorRecord, RunManifest, RunStatus};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::InvalidParameter(_)
        | Error::StrengthOutOfRange { .. }
        | Error::DegenerateEnvelope(_) => EXIT_CONFIG,
        Error::Data(_)
        | Error::Io { .. }
        | Error::ShapeMismatch(_)
        | Error::Json(_)
        | Error::InsufficientSamples { .. }
        | Error::SizeMismatch { .. }
        | Error::DegenerateBatch(_) => EXIT_DATA,
        Error::Divergence(_) => EXIT_DIVERGENCE,
        Error::TapeMissing => EXIT_INTERNAL,
    }
}

const CONFIG_HELP: &str = "Settings may also come from --config FILE: one `key = value` per line, \
keys are the long flag names without the leading dashes (`-` and `_` are interchangeable), \
`#` starts a comment line, and flags override the file.";

#[derive(Debug, Parser)]
#[command(name = "pscatter", version, about = "Learnable Morlet scattering transforms", after_help = CONFIG_HELP)]
pub struct Cli {
    /// Worker threads; 1 makes every command bitwise reproducible.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Where to write the run manifest (default: next to the outputs).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a filterbank and write it as JSON.
    Init(InitArgs),
    /// Render every filter as images plus a parameter CSV.
    ShowFilters(ShowFiltersArgs),
    /// Scatter images into a binary tensor with a JSON sidecar.
    Transform(TransformArgs),
    /// Train scattering + linear classifier.
    Train(TrainArgs),
    /// Scattering distance under growing deformations.
    Stability(StabilityArgs),
    /// Matching distance between filterbanks, or along a training run.
    Distance(DistanceArgs),
    /// Throughput of fixed versus learnable scattering.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
#[command(after_help = CONFIG_HELP)]
pub struct InitArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of scales [default: 2].
    #[arg(long)]
    pub j: Option<usize>,
    /// Orientations per scale [default: 8].
    #[arg(long)]
    pub l: Option<usize>,
    /// Image side length [default: 32].
    #[arg(long)]
    pub n: Option<usize>,
    /// tight-frame or random [default: tight-frame].
    #[arg(long)]
    pub init: Option<String>,
    /// canonical, equivariant or pixelwise [default: canonical].
    #[arg(long)]
    pub parameterization: Option<String>,
    /// Seed for random initialization [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output filterbank JSON [default: bank.json].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(after_help = CONFIG_HELP)]
pub struct ShowFiltersArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Filterbank or model JSON.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Output directory [default: filters].
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// pgm or png [default: pgm].
    #[arg(long)]
    pub format: Option<String>,
}

#[derive(Debug, Args)]
#[command(after_help = CONFIG_HELP)]
pub struct TransformArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Filterbank or model JSON.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Input PGM/PNG images (repeatable; comma-separated in a config file).
    #[arg(long, num_args = 1..)]
    pub input: Vec<String>,
    /// Output tensor; the sidecar goes to `<out>.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// luminance or per-channel [default: luminance].
    #[arg(long)]
    pub color: Option<String>,
}

#[derive(Debug, Args)]
#[command(after_help = CONFIG_HELP)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// synthetic, cifar10 or image-dir [default: synthetic].
    #[arg(long)]
    pub dataset: Option<String>,
    /// CIFAR-10 binary directory, or class-subdirectory root for image-dir.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Test root for image-dir.
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    /// luminance or per-channel [default: per-channel for cifar10, else luminance].
    #[arg(long)]
    pub color: Option<String>,
    /// Synthetic classes [default: 4].
    #[arg(long)]
    pub classes: Option<usize>,
    /// Synthetic training samples per class [default: 50].
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Test samples per class; caps the CIFAR-10 test set [default: 250].
    #[arg(long)]
    pub test_per_class: Option<usize>,
    /// Synthetic noise standard deviation [default: 2.0].
    #[arg(long)]
    pub noise: Option<f64>,
    /// Number of scales [default: 2].
    #[arg(long)]
    pub j: Option<usize>,
    /// Orientations per scale [default: 8].
    #[arg(long)]
    pub l: Option<usize>,
    /// Image side length for synthetic data [default: 32].
    #[arg(long)]
    pub n: Option<usize>,
    /// tight-frame or random [default: tight-frame].
    #[arg(long)]
    pub init: Option<String>,
    /// canonical, equivariant or pixelwise [default: canonical].
    #[arg(long)]
    pub parameterization: Option<String>,
    /// Start from this filterbank JSON instead of a fresh one.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Keep the filters fixed.
    #[arg(long)]
    pub fixed: bool,
    /// [default: 200]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Peak learning rate of the filter parameters [default: 0.1].
    #[arg(long)]
    pub max_lr_scattering: Option<f64>,
    /// Peak learning rate of batch norm and the linear head [default: 0.001].
    #[arg(long)]
    pub max_lr_head: Option<f64>,
    /// Linear head weight decay [default: 0.0005].
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// [default: 0.9]
    #[arg(long)]
    pub momentum: Option<f64>,
    /// 0 means full batch up to 1024 samples, else 128 [default: 0].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Train on a class-balanced subset of this size.
    #[arg(long)]
    pub subsample: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Test accuracy every this many epochs, 0 for the last only [default: 0].
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// [default: run]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(after_help = CONFIG_HELP)]
pub struct StabilityArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Filterbank or model JSON.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Grayscale image; a smooth synthetic image when omitted.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Deformation kinds (repeatable) [default: all].
    #[arg(long, num_args = 1..)]
    pub kind: Vec<String>,
    /// Strengths per kind, from identity to maximum [default: 11].
    #[arg(long)]
    pub steps: Option<usize>,
    /// Periodic boundaries instead of zero fill.
    #[arg(long)]
    pub circular: bool,
    /// [default: stability.csv]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(after_help = CONFIG_HELP)]
pub struct DistanceArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// First filterbank or model JSON.
    #[arg(long)]
    pub a: Option<PathBuf>,
    /// Second filterbank or model JSON.
    #[arg(long)]
    pub b: Option<PathBuf>,
    /// Training run log; reports the distance of every epoch to --reference.
    #[arg(long)]
    pub runlog: Option<PathBuf>,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// JSON matching (with --a/--b) or CSV trajectory (with --runlog).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(after_help = CONFIG_HELP)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// [default: 2]
    #[arg(long)]
    pub j: Option<usize>,
    /// [default: 8]
    #[arg(long)]
    pub l: Option<usize>,
    /// [default: 32]
    #[arg(long)]
    pub n: Option<usize>,
    /// Images per batch [default: 16].
    #[arg(long)]
    pub batch: Option<usize>,
    /// Timed repetitions [default: 5].
    #[arg(long)]
    pub iters: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.threads {
        Some(0) => Err(Error::Config("--threads must be at least 1".into())),
        Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(|| commands::dispatch(&cli)),
            Err(e) => Err(Error::Config(format!("cannot start {k} threads: {e}"))),
        },
        None => commands::dispatch(&cli),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
