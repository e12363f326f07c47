//! `invflow`: train, sample, verify and benchmark invertible-convolution flows.
//!
//! Exit codes: 0 success, 1 verification or runtime failure, 2 usage or
//! configuration error, 3 I/O error (including malformed input files).

mod alloc;
mod bench;
mod config;
mod sample;
mod train;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use invflow_core::{Error, Exec};

#[global_allocator]
static GLOBAL: alloc::CountingAlloc = alloc::CountingAlloc;

#[derive(Debug, Parser)]
#[command(name = "invflow", version, about = "Invertible masked convolutions and the flows built on them")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; `bench` accepts a comma-separated list.
    #[arg(long, global = true, value_delimiter = ',', default_value = "1")]
    pub threads: Vec<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Maximum-likelihood training; writes checkpoint.ivfl and report.json.
    Train,
    /// Draws samples from a checkpoint into a PGM/PPM grid.
    Sample(SampleArgs),
    /// Checks every fast path against its dense or recursive oracle.
    Verify(VerifyArgs),
    /// Times sampling and density evaluation; writes bench.csv.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Largest image side; the maximum of the list is used.
    #[arg(long, value_delimiter = ',', default_value = "16")]
    pub sizes: Vec<usize>,
    /// Random instances per property.
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    /// Corrupts the masked kernel entries (negative test).
    #[arg(long, hide = true)]
    pub inject_mask_violation: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
    pub sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "3")]
    pub kernels: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub batches: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Rows whose estimated working set exceeds this are skipped.
    #[arg(long, default_value_t = 4096)]
    pub mem_limit_mb: usize,
    /// Largest operator dimension timed with dense Gaussian elimination.
    #[arg(long, default_value_t = 1024)]
    pub naive_limit: usize,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(Vec<String>),
    Io(String),
    Verification(Vec<String>),
    Core(Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Config(p) => {
                write!(f, "invalid configuration:")?;
                for line in p {
                    write!(f, "\n  {line}")?;
                }
                Ok(())
            }
            CliError::Io(m) => write!(f, "{m}"),
            CliError::Verification(names) => write!(f, "failed properties: {}", names.join(", ")),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(p) => CliError::Config(p),
            Error::InvalidParameter(m) => CliError::Usage(m),
            e @ (Error::Io { .. }
            | Error::BadMagic { .. }
            | Error::Truncated { .. }
            | Error::DimensionMismatch(_)
            | Error::Version { .. }
            | Error::Checkpoint(_)) => CliError::Io(e.to_string()),
            e => CliError::Core(e),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Verification(_) | CliError::Core(_) => 1,
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

pub fn io_err(path: &std::path::Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

impl Cli {
    pub fn single_exec(&self) -> Result<Exec, CliError> {
        match self.threads.as_slice() {
            [t] => Ok(Exec::with_threads(*t)?),
            _ => Err(CliError::Usage("--threads takes a single value for this command".into())),
        }
    }

    pub fn create_out(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.out).map_err(|e| io_err(&self.out, e))
    }
}

pub fn command_line() -> Vec<String> {
    std::env::args().collect()
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Train => train::run(cli),
        Command::Sample(a) => sample::run(cli, a),
        Command::Verify(a) => verify::run(cli, a),
        Command::Bench(a) => bench::run(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
