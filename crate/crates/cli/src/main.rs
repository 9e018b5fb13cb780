//! `branch-target`: simulate, estimate, solve and verify branching target
//! scenarios from JSON files.
//!
//! Exit codes: 0 ok, 1 check failure, 2 input error, 3 numerical
//! configuration error.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

/// Overrides `--threads` when set.
pub const THREADS_ENV: &str = "BRANCH_TARGET_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Check(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Check(_) => 1,
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(format!("i/o: {e}"))
    }
}

#[derive(Debug, Parser)]
#[command(name = "branch-target", version, about = "Branching diffusion target problems: Monte Carlo and HJB")]
pub struct Cli {
    /// Worker threads (default: all cores). BRANCH_TARGET_THREADS overrides.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate population paths; writes population, events and growth CSVs.
    Simulate(SimulateArgs),
    /// Estimate the value at (0, x0) by bisection over the initial level.
    ValueMc(ValueMcArgs),
    /// Solve the variational inequality; writes the value surface.
    Solve(SolveArgs),
    /// Dynamic-programming residual of the PDE value along simulated paths.
    DppCheck(DppArgs),
    /// Run the acceptance checks.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario JSON file.
    pub scenario: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 1000)]
    pub paths: usize,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Constant risky fraction.
    #[arg(long, default_value_t = 0.0)]
    pub control: f64,
    /// Initial level Y₀ (default: 0).
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    pub y0: f64,
    #[arg(long, default_value_t = branching_target::simulate::DEFAULT_POPULATION_CAP)]
    pub population_cap: usize,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long, default_value_t = 201)]
    pub nx: usize,
    /// Time steps (default: smallest allowed by the time-step bound).
    #[arg(long)]
    pub nt: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    #[arg(long, allow_hyphen_values = true)]
    pub x_lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub x_hi: Option<f64>,
    /// Kernel slack (default: grid scale).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Children kept per node (default: largest offspring count).
    #[arg(long)]
    pub children: Option<u32>,
}

#[derive(Debug, Args)]
pub struct ValueMcArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 2000)]
    pub paths: usize,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Bisection tolerance.
    #[arg(long, default_value_t = 0.05)]
    pub tol: f64,
    /// Admissible failure rate.
    #[arg(long, default_value_t = 0.01)]
    pub eta: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub hi: Option<f64>,
    /// Add the PDE feedback control to the family.
    #[arg(long)]
    pub with_pde: bool,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Write every n-th time level.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
}

#[derive(Debug, Args)]
pub struct DppArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 2000)]
    pub paths: usize,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Intermediate time: a number, or `first-branch`.
    #[arg(long, default_value = "0.5")]
    pub theta: String,
    #[arg(long, default_value_t = 0.05)]
    pub slack: f64,
    /// Largest violation rate accepted.
    #[arg(long, default_value_t = 0.05)]
    pub max_violation: f64,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LevelArg {
    Fast,
    Full,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = LevelArg::Fast)]
    pub level: LevelArg,
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| CliError::Input(format!("{THREADS_ENV}={v} is not a positive integer"))),
        Err(_) => Ok(flag.filter(|&n| n > 0)),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count(cli.threads)? {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::ValueMc(a) => commands::value_mc(a),
        Command::Solve(a) => commands::solve(a),
        Command::DppCheck(a) => commands::dpp_check(a),
        Command::Verify(a) => commands::verify(a),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
