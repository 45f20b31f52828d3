//! `rytov`: simulate link powers, reconstruct contrast images, build training
//! corpora and score predictions.

mod commands;
mod preview;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rytov_core::dataset::{Placement, Split};
use rytov_core::ErrorCategory;

#[derive(Parser, Debug)]
#[command(name = "rytov", version, about)]
struct Cli {
    /// Setup JSON (frequency, DoI size, grids, nodes, ring side)
    #[arg(long, global = true, env = "RYTOV_CONFIG")]
    config: Option<PathBuf>,
    /// Seed for scene sampling and measurement noise
    #[arg(long, global = true, env = "RYTOV_SEED", default_value_t = 0)]
    seed: u64,
    /// Regularization weight
    #[arg(long, global = true, env = "RYTOV_ALPHA")]
    alpha: Option<f64>,
    /// Forward-solver grid cells per side
    #[arg(long, global = true, env = "RYTOV_GRID_FORWARD")]
    grid_forward: Option<usize>,
    /// Inverse grid cells per side
    #[arg(long, global = true, env = "RYTOV_GRID_INVERSE")]
    grid_inverse: Option<usize>,
    /// Gaussian noise (dB) added to differenced powers
    #[arg(long, global = true, env = "RYTOV_NOISE_DB", default_value_t = 0.0)]
    noise_db: f64,
    /// Output directory
    #[arg(long, global = true, env = "RYTOV_OUT")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize absolute and background-differenced link powers for a scene
    Simulate {
        /// Scene JSON: {"shapes": [{"kind", "center": {"x","y"}, "size", "eps_r"}], "seed"}
        #[arg(long)]
        scene: PathBuf,
        /// Scene present at the reference time; free space if omitted
        #[arg(long)]
        before: Option<PathBuf>,
    },
    /// Reconstruct Re/Im contrast images from a measurement manifest
    Reconstruct {
        /// Measurement manifest written by `simulate`
        #[arg(long)]
        measurement: PathBuf,
        /// Directory holding a cached inverse; built and stored there if absent
        #[arg(long)]
        pi_cache: Option<PathBuf>,
        /// Accept absolute powers by subtracting the computed free-space powers
        #[arg(long)]
        free_space_baseline: bool,
        /// Permittivity predictor run as `<program> --corpus <dir> --out <dir>`
        #[arg(long)]
        predictor: Option<PathBuf>,
    },
    /// Generate a training corpus (resumes an interrupted run in the same directory)
    Dataset {
        #[arg(long, default_value_t = 5000)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        shapes: usize,
        #[arg(long, value_enum, default_value_t = PlacementArg::TopHalf)]
        placement: PlacementArg,
    },
    /// Score predicted permittivity images against corpus labels
    Eval {
        /// Directory with sample_NNNNN/pred_eps.f32
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Write the Re(chi) + 1 (clipped at 1) baseline as predictions for a corpus
    Baseline {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
    },
    /// Residual and penalty norms over log-spaced regularization weights
    AlphaSweep {
        #[arg(long)]
        measurement: PathBuf,
        #[arg(long, default_value_t = 1e-2)]
        lo: f64,
        #[arg(long, default_value_t = 1e3)]
        hi: f64,
        #[arg(long, default_value_t = 11)]
        count: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PlacementArg {
    TopHalf,
    FullDoi,
}

impl From<PlacementArg> for Placement {
    fn from(p: PlacementArg) -> Self {
        match p {
            PlacementArg::TopHalf => Placement::TopHalf,
            PlacementArg::FullDoi => Placement::FullDoi,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

/// Failures outside the core library, tagged with the exit code they map to.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Mismatch(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Mismatch(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<rytov_core::Error>() {
        return match e.category() {
            ErrorCategory::Config | ErrorCategory::Io => 2,
            ErrorCategory::Numerical => 3,
            ErrorCategory::DataMismatch => 4,
        };
    }
    match err.downcast_ref::<CliError>() {
        Some(CliError::Mismatch(_)) => 4,
        Some(CliError::Usage(_)) => 2,
        None if err.downcast_ref::<std::io::Error>().is_some() => 2,
        None => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
