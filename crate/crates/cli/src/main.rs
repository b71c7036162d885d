mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use longforest::data::DataError;
use longforest::forest::ForestError;
use longforest::importance::ImportanceError;
use longforest::simgen::SimError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration, inputs or archive (exit status 2).
    #[error("{0}")]
    Validation(String),
    /// Failure while running a valid request (exit status 3).
    #[error("{0}")]
    Runtime(String),
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ForestError> for CliError {
    fn from(e: ForestError) -> Self {
        match e {
            ForestError::SchemaMismatch(_)
            | ForestError::Archive(_)
            | ForestError::DataMismatch { .. } => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<ImportanceError> for CliError {
    fn from(e: ImportanceError) -> Self {
        match e {
            ImportanceError::Forest(f) => f.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "longforest",
    version,
    about = "Random forests with longitudinal predictors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
pub struct ForestFlags {
    #[arg(long)]
    pub ntree: Option<usize>,
    #[arg(long)]
    pub mtry: Option<usize>,
    #[arg(long)]
    pub nodesize: Option<usize>,
    #[arg(long)]
    pub minsplit: Option<usize>,
    /// `quantile` or `sample`.
    #[arg(long)]
    pub nsplit_option: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cause of interest (survival).
    #[arg(long)]
    pub cause: Option<u32>,
}

#[derive(Args)]
pub struct VimpFlags {
    #[arg(long, default_value_t = 1234)]
    pub seed: u64,
    /// Permutations per predictor and tree.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Permute whole trajectories instead of single measurements.
    #[arg(long)]
    pub trajectory: bool,
    /// Also report importance as a percentage of the OOB error.
    #[arg(long)]
    pub percentage: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Grow a forest and write the model archive and summary.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        forest: ForestFlags,
        #[arg(long)]
        threads: Option<usize>,
        /// Write one split table per tree.
        #[arg(long)]
        vsplit: bool,
        /// Skip the out-of-bag error.
        #[arg(long)]
        no_oob: bool,
    },
    /// Predict new subjects.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Config whose [data] section points at the new subjects.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Landmark time: only measurements up to t0 are used.
        #[arg(long)]
        t0: Option<f64>,
        /// Keep only subjects whose survival time exceeds t0.
        #[arg(long, requires = "t0")]
        at_risk: bool,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Out-of-bag error of a trained forest on its training data.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Permutation importance of every predictor.
    Vimp {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        opts: VimpFlags,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Permutation importance of the groups declared in the config.
    Gvimp {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        opts: VimpFlags,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Minimal depth of predictors and features.
    Depth {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write a simulated dataset and a matching config.
    Simulate {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 200)]
        n_subjects: usize,
        #[arg(long, default_value_t = 6)]
        n_visits: usize,
        #[arg(long, default_value_t = 1234)]
        seed: u64,
    },
}

fn set_threads(threads: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Validation("threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train {
            config,
            out_dir,
            forest,
            threads,
            vsplit,
            no_oob,
        } => commands::train(&config, &out_dir, &forest, threads, vsplit, !no_oob),
        Command::Predict {
            model,
            config,
            out_dir,
            t0,
            at_risk,
            threads,
        } => {
            set_threads(threads)?;
            commands::predict(&model, &config, &out_dir, t0, at_risk)
        }
        Command::Evaluate {
            model,
            config,
            out_dir,
            threads,
        } => {
            set_threads(threads)?;
            commands::evaluate(&model, &config, &out_dir)
        }
        Command::Vimp {
            model,
            config,
            out_dir,
            opts,
            threads,
        } => {
            set_threads(threads)?;
            commands::vimp(&model, &config, &out_dir, &opts, false)
        }
        Command::Gvimp {
            model,
            config,
            out_dir,
            opts,
            threads,
        } => {
            set_threads(threads)?;
            commands::vimp(&model, &config, &out_dir, &opts, true)
        }
        Command::Depth { model, out_dir } => commands::depth(&model, &out_dir),
        Command::Simulate {
            out_dir,
            n_subjects,
            n_visits,
            seed,
        } => commands::simulate(&out_dir, n_subjects, n_visits, seed),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Validation(_) => 2,
                CliError::Runtime(_) => 3,
            })
        }
    }
}
