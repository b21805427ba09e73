//! The `reluhead` experiment runner.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use reluhead::data::DatasetId;

use config::RunArgs;

/// Exit status for a successful run.
pub const EXIT_OK: i32 = 0;
/// Exit status for internal failures outside the documented classes.
pub const EXIT_FAILURE: i32 = 1;
/// Invalid flags or configuration.
pub const EXIT_USAGE: i32 = 2;
/// Missing, corrupt or unreachable data.
pub const EXIT_DATA: i32 = 3;
/// Non-finite training loss or a failed gradient check.
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "reluhead", version, about = "Softmax vs ReLU classification heads: training, cross-validation and gradient checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Download a dataset into the cache.
    Fetch {
        #[arg(value_parser = config::parse_dataset)]
        dataset: DatasetId,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Train on the training split and evaluate on the test split.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Also run k-fold cross-validation on the training split.
        #[arg(long)]
        cv: bool,
    },
    /// k-fold cross-validation on the training split.
    Crossval {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Side-by-side table of two training runs.
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Finite-difference gradient check of both heads on toy networks.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        skip_band: f64,
        #[arg(long, default_value = "runs/gradcheck")]
        output_dir: PathBuf,
        #[arg(long, hide = true)]
        inject_sign_flip: bool,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(reluhead::Error),
    GradcheckFailed(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::GradcheckFailed(m) => write!(f, "gradient check failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<reluhead::Error> for CliError {
    fn from(e: reluhead::Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Lib(reluhead::Error::Config(_)) => EXIT_USAGE,
            CliError::GradcheckFailed(_) | CliError::Lib(reluhead::Error::Numeric(_)) => EXIT_NUMERIC,
            CliError::Lib(e) if e.is_data_error() => EXIT_DATA,
            CliError::Lib(_) => EXIT_FAILURE,
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fetch { dataset, data_dir } => commands::fetch(dataset, data_dir),
        Command::Train { run, cv } => commands::train(&run, cv).map(|_| ()),
        Command::Crossval { run } => commands::crossval(&run).map(|_| ()),
        Command::Compare { run_a, run_b, output_dir } => commands::compare(&run_a, &run_b, output_dir).map(|_| ()),
        Command::Gradcheck { seed, step, skip_band, output_dir, inject_sign_flip } => {
            commands::gradcheck(seed, step, skip_band, &output_dir, inject_sign_flip).map(|_| ())
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
