//! `chx`: synthetic data, D2Neighbors fitting and scoring, frequency-domain
//! explanations, the deployment-shift experiment and BiLRP renders.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Core(chx_core::Error),
    Config(String),
    Check(String),
}

impl CliError {
    fn code(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::Config(_) => "E_CONFIG",
            CliError::Check(_) => "E_CHECK",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Config(m) => write!(f, "invalid config: {m}"),
            CliError::Check(m) => write!(f, "internal check failed: {m}"),
        }
    }
}

impl From<chx_core::Error> for CliError {
    fn from(e: chx_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "chx", version, about = "Clever-Hans analysis of distance-based anomaly detectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DetectorArgs {
    /// Norm order of the distance (1, 2 or 4).
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    mitigation: Option<chx_core::Mitigation>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic MVTec-layout dataset plus high-resolution originals under `hires/`.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Fit a D2Neighbors model on `<data>/<category>/train/good`.
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        detector: DetectorArgs,
        #[arg(long)]
        data: PathBuf,
    },
    /// Score a dataset's test split or individual images into a CSV.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, conflicts_with = "image", required_unless_present = "image")]
        data: Option<PathBuf>,
        #[arg(long, num_args = 1..)]
        image: Vec<PathBuf>,
    },
    /// Pixel and frequency relevance of one image's score.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Number of frequency bins.
        #[arg(long)]
        bins: Option<usize>,
        /// Inclusive frequency-index band for an extra band-filtered map.
        #[arg(long, value_parser = commands::parse_band)]
        band: Option<(usize, usize)>,
    },
    /// Nearest-to-antialiased deployment-shift experiment.
    Shift {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        detector: DetectorArgs,
        /// MVTec-layout root; the configured `categories` are used instead of synthetic seeds.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Run D2Neighbors for p = 1, 2, 4 and report the defect-to-noise diagnostic.
        #[arg(long)]
        compare_norms: bool,
    },
    /// BiLRP explanation of a toy network's similarity between two images.
    Bilrp {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        x2: PathBuf,
    },
    /// F1, FPR and FNR of a scores CSV.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scores: PathBuf,
        /// Fixed threshold; the F1-optimal one is chosen when absent.
        #[arg(long)]
        threshold: Option<f64>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common } => commands::synth(&common),
        Command::Fit { common, detector, data } => commands::fit(&common, &detector, &data),
        Command::Score { common, model, data, image } => commands::score(&common, &model, data.as_deref(), &image),
        Command::Explain { common, model, image, bins, band } => commands::explain(&common, &model, &image, bins, band),
        Command::Shift { common, detector, data, compare_norms } => {
            commands::shift(&common, &detector, data.as_deref(), compare_norms)
        }
        Command::Bilrp { common, network, x, x2 } => commands::bilrp(&common, &network, &x, &x2),
        Command::Eval { common, scores, threshold } => commands::eval(&common, &scores, threshold),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
