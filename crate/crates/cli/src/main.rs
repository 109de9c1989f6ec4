//! `lvquant` command-line entry point.

mod commands;
mod config;
mod overlay;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lvquant::nets::Family;

use crate::config::Role;

#[derive(Parser, Debug)]
#[command(name = "lvquant", version, about = "Left-ventricle segmentation and quantification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Synthetic cohorts.
    Phantom {
        #[command(subcommand)]
        action: PhantomAction,
    },
    /// Train a segmentation or ROI network on a cohort directory.
    Train(TrainArgs),
    /// Detect the ROI in one volume, crop it and label it.
    Segment(SegmentArgs),
    /// Physiological measures for every subject of a cohort.
    Quantify(QuantifyArgs),
    /// Plot-ready CSV and PGM overlays from a quantify run.
    Report(ReportArgs),
    /// Finite-difference check of a miniature network.
    Gradcheck(GradcheckArgs),
    /// Trainable parameter count of a network.
    Paramcount(ParamcountArgs),
}

#[derive(Subcommand, Debug)]
pub enum PhantomAction {
    /// Generate a cohort directory.
    Gen(PhantomGenArgs),
}

#[derive(Args, Debug)]
pub struct CommonArgs {
    /// TOML run configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct NetArgs {
    #[arg(long, value_parser = parse_family)]
    pub arch: Option<Family>,
    /// Enable residual output learning.
    #[arg(long)]
    pub residual_output: bool,
    /// Disable residual output learning.
    #[arg(long, conflicts_with = "residual_output")]
    pub no_residual_output: bool,
    #[arg(long)]
    pub residual_input: bool,
    #[arg(long, conflicts_with = "residual_input")]
    pub no_residual_input: bool,
    #[arg(long)]
    pub shrink: Option<usize>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub base_features: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PhantomGenArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub hard_apex: bool,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub role: Option<Role>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub fold: Option<usize>,
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    #[arg(long)]
    pub roi_net: PathBuf,
    #[arg(long)]
    pub seg_net: PathBuf,
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct QuantifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, required_unless_present = "reference_labels")]
    pub roi_net: Option<PathBuf>,
    #[arg(long, required_unless_present = "reference_labels")]
    pub seg_net: Option<PathBuf>,
    /// Measure the stored reference labels instead of running networks.
    #[arg(long, conflicts_with_all = ["roi_net", "seg_net"])]
    pub reference_labels: bool,
    /// Only quantify the validation subjects of this fold.
    #[arg(long)]
    pub fold: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// `report.json` written by `quantify`.
    #[arg(long)]
    pub report: PathBuf,
    /// Directory of segmented volumes (defaults to `segmented/` beside the report).
    #[arg(long)]
    pub segmented: Option<PathBuf>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Check every n-th parameter tensor.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub rtol: f64,
}

#[derive(Args, Debug)]
pub struct ParamcountArgs {
    #[command(flatten)]
    pub net: NetArgs,
    /// Input side length.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse().map_err(|e: lvquant::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
