//! Command-line front end: strict TOML run configs, subcommand dispatch and
//! column-text / JSON output with a metadata sidecar per run.

pub mod config;
pub mod output;
pub mod run;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::Parser;

pub use config::{config_hash, load_config, parse_config, serialize_config, Format, RunConfig};
pub use run::{run, RunReport, Subcommand};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<nvtorque::Error> for CliError {
    fn from(e: nvtorque::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "nvtorque", version, about = "Spin-torque simulations of an NV ensemble on a cantilever")]
pub struct Args {
    #[arg(value_enum)]
    pub subcommand: Subcommand,
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; defaults to `output.directory` of the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Parses `args`, runs the subcommand and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&args) {
        Ok(report) => {
            print!("{}", report.summary);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(args: &Args) -> Result<RunReport, CliError> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(format) = args.format {
        cfg.output.format = format;
    }
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.directory));
    let base = args.config.parent().unwrap_or(Path::new("."));
    run(args.subcommand, &cfg, &out, base)
}
