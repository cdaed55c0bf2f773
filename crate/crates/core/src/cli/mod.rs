//! The `ocsdf` command line.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
//! failure, 4 certificate soundness violation.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_SOUNDNESS: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "ocsdf", version, about = "One-class signed distance learning with 1-Lipschitz networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a TOML run configuration.
    Train(TrainArgs),
    /// Score every row of a CSV file.
    Score(ScoreArgs),
    /// Certified AUROC curve on labelled data.
    Certify(CertifyArgs),
    /// Clean, certified and PGD-attacked AUROC on labelled data.
    Attack(AttackArgs),
    /// Score grid and grayscale image of a 2D model.
    Contour(ContourArgs),
    /// Iso-surface mesh of a 3D model.
    Mesh(MeshArgs),
    /// Write a toy dataset as CSV.
    Toygen(ToygenArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Extra `key=value` overrides with dotted keys, e.g. `train.epochs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Name of the label column (nonzero marks an anomaly).
    #[arg(long, default_value = "label")]
    pub label_column: String,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub io: DataArgs,
    #[arg(long, default_value = "scores.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub io: DataArgs,
    /// Comma-separated, non-decreasing radii.
    #[arg(long, default_value = "0,0.05,0.1,0.2")]
    pub eps_list: String,
    #[arg(long, default_value = "certified.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub io: DataArgs,
    #[arg(long, default_value = "0.05,0.1,0.2")]
    pub eps_list: String,
    #[arg(long, default_value_t = crate::attacks::AttackConfig::DEFAULT_STEPS)]
    pub steps: usize,
    #[arg(long, default_value_t = crate::attacks::AttackConfig::DEFAULT_RESTARTS)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "attack.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ContourArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// `xmin,xmax,ymin,ymax` in network input coordinates; defaults to the
    /// training domain.
    #[arg(long, allow_hyphen_values = true)]
    pub bounds: Option<String>,
    #[arg(long, default_value_t = 300)]
    pub resolution: usize,
    /// Output prefix; writes `<out>.csv` and `<out>.pgm`.
    #[arg(long, default_value = "contour")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MeshArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// `xmin,xmax,ymin,ymax,zmin,zmax`; defaults to the training domain.
    #[arg(long, allow_hyphen_values = true)]
    pub bounds: Option<String>,
    #[arg(long, default_value_t = 200)]
    pub resolution: usize,
    /// Percentile of the training scores used as the iso-level.
    #[arg(long, default_value_t = crate::geometry::DEFAULT_LEVEL_PERCENTILE)]
    pub percentile: f64,
    #[arg(long, default_value = "mesh.obj")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ToygenArgs {
    #[arg(long)]
    pub name: String,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Numerical(_) => EXIT_NUMERICAL,
        Error::DimensionMismatch { .. }
        | Error::Empty(_)
        | Error::Data(_)
        | Error::Parse { .. }
        | Error::Io(_)
        | Error::Json(_) => EXIT_DATA,
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("OCSDF_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // A second initialization in the same process is harmless to ignore.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    configure_threads();
    let result = match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Score(a) => commands::score(&a),
        Command::Certify(a) => commands::certify(&a),
        Command::Attack(a) => commands::attack(&a),
        Command::Contour(a) => commands::contour(&a),
        Command::Mesh(a) => commands::mesh(&a),
        Command::Toygen(a) => commands::toygen(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
