//! Command line front end for the spherical voxel pipeline.
//!
//! Exit codes: `0` success, `2` unreadable input (bad arguments, malformed
//! files), `3` invalid request (out-of-range settings, empty data), `4`
//! checkpoint/request mismatch, `5` training divergence.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use sphervox::io::IoError;
use sphervox::matching::MatchError;
use sphervox::netkit::NetError;

use commands::GridFlags;

/// Failure cases, each mapped to a stable process exit code.
#[derive(Debug)]
pub enum CliError {
    /// An input could not be read or decoded (exit 2).
    Parse(String),
    /// The request itself is invalid (exit 3).
    Invalid(String),
    /// A checkpoint disagrees with the request (exit 4).
    Mismatch(String),
    /// Optimization produced a non-finite loss (exit 5).
    Diverged(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Invalid(_) => 3,
            CliError::Mismatch(_) => 4,
            CliError::Diverged(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Parse(m) | CliError::Invalid(m) | CliError::Mismatch(m)
            | CliError::Diverged(m) => m,
        }
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        match &e {
            NetError::HeadMismatch { .. } | NetError::BadParamCount { .. } => {
                CliError::Mismatch(e.to_string())
            }
            NetError::Diverged { .. } => CliError::Diverged(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<MatchError> for CliError {
    fn from(e: MatchError) -> Self {
        match e {
            MatchError::DimMismatch { .. } => CliError::Mismatch(e.to_string()),
            MatchError::RaggedBuffer { .. } | MatchError::NonFinite { .. } => {
                CliError::Parse(e.to_string())
            }
            MatchError::Net(inner) => inner.into(),
            MatchError::EmptyDb | MatchError::MissingLabels { .. } | MatchError::BadK { .. } => {
                CliError::Invalid(e.to_string())
            }
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Net(inner) => inner.into(),
            IoError::Match(inner) => inner.into(),
            _ => CliError::Parse(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    /// Shape classification.
    Cls,
    /// Per-point part segmentation.
    Seg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Rotate {
    /// Evaluate objects in their stored pose.
    None,
    /// Apply a uniformly random rotation to each object.
    Haar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    /// Angular resolution: bandwidth 4 versus 8.
    Bandwidth,
    /// Radial resolution: 1 shell versus 8.
    HRes,
    /// Density-aware window off versus on.
    Daas,
}

#[derive(Parser)]
#[command(
    name = "sphervox",
    version,
    about = "Rotation-robust point cloud features on a spherical voxel grid"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Voxelize a point cloud; with a checkpoint, emit per-point features.
    Featurize {
        /// Input point cloud (xyz text).
        #[arg(long)]
        input: PathBuf,
        /// Angular bandwidth of the grid.
        #[arg(long)]
        bandwidth: Option<usize>,
        /// Number of radial shells.
        #[arg(long)]
        h_res: Option<usize>,
        /// Radial tent-window half-width.
        #[arg(long)]
        delta: Option<f64>,
        /// Disable the density-aware latitude compensation.
        #[arg(long)]
        no_daas: bool,
        /// Segmentation checkpoint for per-point features.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Output tensor container path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure feature deviation under re-voxelized rotations.
    VerifyInvariance {
        /// Input point cloud (xyz text).
        #[arg(long)]
        input: PathBuf,
        /// Angular bandwidth of the grid.
        #[arg(long)]
        bandwidth: Option<usize>,
        /// Number of radial shells.
        #[arg(long)]
        h_res: Option<usize>,
        /// Radial tent-window half-width.
        #[arg(long)]
        delta: Option<f64>,
        /// Disable the density-aware latitude compensation.
        #[arg(long)]
        no_daas: bool,
        /// Number of random rotations to test.
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Restrict to whole-grid-step rotations about the polar axis.
        #[arg(long)]
        grid_exact: bool,
        /// Random seed for the rotation draws.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model on the synthetic shape suite and save a checkpoint.
    Train {
        /// Which head to train.
        #[arg(long, value_enum)]
        task: Task,
        /// TOML configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Override the [model] seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a freshly generated test set.
    Eval {
        /// Which head the checkpoint must hold.
        #[arg(long, value_enum)]
        task: Task,
        /// TOML configuration file (dataset shape).
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint to evaluate.
        #[arg(long)]
        ckpt: PathBuf,
        /// Pose handling for the test objects.
        #[arg(long, value_enum, default_value_t = Rotate::None)]
        rotate: Rotate,
        /// Seed for the test set and any rotations.
        #[arg(long, default_value_t = 100)]
        seed: u64,
    },
    /// Match query points into a descriptor database of labeled objects.
    Match {
        /// Comma-delimited labeled clouds that form the database.
        #[arg(long, value_delimiter = ',', required = true)]
        db_objects: Vec<PathBuf>,
        /// Labeled query cloud.
        #[arg(long)]
        query: PathBuf,
        /// Segmentation checkpoint providing the descriptors.
        #[arg(long)]
        ckpt: PathBuf,
        /// Neighbors per query point.
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Pose handling for the query.
        #[arg(long, value_enum, default_value_t = Rotate::None)]
        rotate: Rotate,
        /// Seed for the query rotation.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also print one row per retrieved neighbor.
        #[arg(long)]
        table: bool,
        /// Optionally save the descriptor database.
        #[arg(long)]
        db_out: Option<PathBuf>,
    },
    /// Train and evaluate both settings of one design axis.
    Ablate {
        /// Which axis to sweep.
        #[arg(long, value_enum)]
        axis: Axis,
        /// Which head to train.
        #[arg(long, value_enum, default_value_t = Task::Seg)]
        task: Task,
        /// Seed for models, data, and evaluation rotations.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Featurize {
            input,
            bandwidth,
            h_res,
            delta,
            no_daas,
            model,
            out,
        } => {
            let flags = GridFlags {
                bandwidth,
                h_res,
                delta,
                no_daas,
            };
            commands::cmd_featurize(&input, &flags, model.as_deref(), &out)
        }
        Command::VerifyInvariance {
            input,
            bandwidth,
            h_res,
            delta,
            no_daas,
            trials,
            grid_exact,
            seed,
        } => {
            let flags = GridFlags {
                bandwidth,
                h_res,
                delta,
                no_daas,
            };
            commands::cmd_verify_invariance(&input, &flags, trials, grid_exact, seed)
        }
        Command::Train {
            task,
            config,
            seed,
            out,
        } => commands::cmd_train(task, &config, seed, &out),
        Command::Eval {
            task,
            config,
            ckpt,
            rotate,
            seed,
        } => commands::cmd_eval(task, &config, &ckpt, rotate, seed),
        Command::Match {
            db_objects,
            query,
            ckpt,
            k,
            rotate,
            seed,
            table,
            db_out,
        } => commands::cmd_match(
            &db_objects,
            &query,
            &ckpt,
            k,
            rotate,
            seed,
            table,
            db_out.as_deref(),
        ),
        Command::Ablate { axis, task, seed } => commands::cmd_ablate(axis, task, seed),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {}", e.message());
        std::process::exit(e.exit_code());
    }
}
