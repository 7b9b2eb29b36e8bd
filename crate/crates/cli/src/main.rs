//! Command-line front end: dataset generation, training, evaluation, and
//! attention inspection.

mod commands;
mod manifest;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use geoattn::data::ShapeFamily;
use geoattn::network::{Arch, Task};

/// Failure classes mapped onto process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, missing inputs, or mismatched configuration (exit 2).
    Usage(anyhow::Error),
    /// Everything else (exit 1).
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn usage(msg: impl std::fmt::Display) -> Self {
        CliError::Usage(anyhow::anyhow!("{msg}"))
    }
}

impl From<geoattn::Error> for CliError {
    fn from(e: geoattn::Error) -> Self {
        use geoattn::Error as E;
        let usage = match &e {
            E::InvalidArgument(_) | E::Mismatch(_) | E::Precondition(_) => true,
            E::InFile { source, .. } => matches!(**source, E::Mismatch(_) | E::Precondition(_)),
            _ => false,
        };
        if usage {
            CliError::Usage(e.into())
        } else {
            CliError::Runtime(e.into())
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "geoattn", version, about = "Geometric Attention for point-cloud normals and sharp features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Generate labeled synthetic patches and a 4:1:1 split manifest.
    Generate(GenerateArgs),
    /// Train a network on a generated data directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split and write a JSON report.
    Eval(EvalArgs),
    /// Export one attention row of a patch as a PLY point set.
    Inspect(InspectArgs),
    /// Re-run a command from its run manifest.
    Rerun(RerunArgs),
}

fn parse_family(s: &str) -> Result<ShapeFamily, String> {
    ShapeFamily::parse(s).ok_or_else(|| format!("unknown shape '{s}' (expected plane, wedge, cylinder, sphere-cap)"))
}

fn parse_task(s: &str) -> Result<Task, String> {
    match s {
        "normals" => Ok(Task::Normals),
        "sharp" => Ok(Task::Sharp),
        _ => Err(format!("unknown task '{s}' (expected normals or sharp)")),
    }
}

fn parse_arch(s: &str) -> Result<Arch, String> {
    match s {
        "dgcnn" => Ok(Arch::Dgcnn),
        "ga" => Ok(Arch::Ga),
        _ => Err(format!("unknown architecture '{s}' (expected dgcnn or ga)")),
    }
}

#[derive(Args, Debug, Clone)]
pub struct GenerateArgs {
    /// Comma-separated shape families cycled over the patches.
    #[arg(long, value_delimiter = ',', value_parser = parse_family, default_value = "wedge")]
    pub shapes: Vec<ShapeFamily>,
    #[arg(long, default_value_t = 60)]
    pub count: usize,
    #[arg(long, default_value_t = 512)]
    pub points: usize,
    #[arg(long, default_value_t = 0.05)]
    pub spacing: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: std::path::PathBuf,
    /// Keep every patch in its shape frame instead of rotating it randomly.
    #[arg(long)]
    pub canonical: bool,
    /// Run on one thread.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_task, default_value = "normals")]
    pub task: Task,
    #[arg(long, value_parser = parse_arch, default_value = "ga")]
    pub arch: Arch,
    #[arg(long)]
    pub data: std::path::PathBuf,
    #[arg(long)]
    pub out: std::path::PathBuf,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.01)]
    pub mse_weight: f64,
    /// Seed of the epoch order and augmentation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed of the weight initialization.
    #[arg(long, default_value_t = 0)]
    pub model_seed: u64,
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    #[arg(long, value_delimiter = ',', default_value = "64,64,64")]
    pub widths: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    pub semantic_width: usize,
    #[arg(long, default_value_t = 256)]
    pub global_width: usize,
    #[arg(long, value_delimiter = ',', default_value = "256,128")]
    pub head_widths: Vec<usize>,
    #[arg(long, default_value_t = 0.01)]
    pub leaky_slope: f64,
    /// Scale edge responses by attention weights before aggregation.
    #[arg(long)]
    pub ga_weighted: bool,
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: std::path::PathBuf,
    #[arg(long)]
    pub data: std::path::PathBuf,
    #[arg(long, default_value = "test", value_parser = ["train", "val", "test"])]
    pub split: String,
    /// Report path; defaults to `report_<split>.json` next to the checkpoint.
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Score normals without the per-point sign flip.
    #[arg(long)]
    pub oriented_rmse: bool,
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Args, Debug, Clone)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: std::path::PathBuf,
    #[arg(long)]
    pub patch: std::path::PathBuf,
    /// Index of the query point.
    #[arg(long)]
    pub query: usize,
    /// EdgeConv layer whose attention row is exported.
    #[arg(long, default_value_t = 0)]
    pub layer: usize,
    #[arg(long)]
    pub out: std::path::PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: std::path::PathBuf,
    /// Replace the recorded output path.
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
