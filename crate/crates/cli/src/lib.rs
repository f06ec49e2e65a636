//! Command-line front end: exact correlators, trajectories, estimators,
//! parameter fits, the POVM check and the figure reproduction.
//!
//! Every command writes CSV with `# key: value` header lines (model hash,
//! effective configuration, timestamp). Exit codes: 0 success, 2 config
//! error, 3 numeric failure, 4 convergence failure.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use sigcorr::{Error, ErrorCategory};

mod commands;
pub mod config;
mod fig1;
mod plot;

#[derive(Debug, Parser)]
#[command(name = "sigcorr", version, about = "Signal correlators of continuously monitored quantum systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Time step, overriding the config.
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Efficiency applied to every monitored channel.
    #[arg(long, global = true)]
    pub eta: Option<f64>,
    /// Output file (output directory for reproduce-fig1).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact pointwise, smoothed or full correlators.
    Exact { config: PathBuf },
    /// One trajectory of the measurement record.
    Simulate { config: PathBuf },
    /// Ergodic, ensemble or importance-sampled correlator estimates.
    Estimate { config: PathBuf },
    /// Fit rates and efficiencies to measured two-point curves.
    Fit { config: PathBuf },
    /// Binary weak-measurement limit of a pointwise correlator.
    PovmCheck { config: PathBuf },
    /// Exact and single-trajectory `K_{x,-}` and `K_{x,x}` of the driven,
    /// decaying qubit.
    ReproduceFig1 {
        /// Trajectory length.
        #[arg(long, default_value_t = 1e4)]
        duration: f64,
    },
}

/// Overrides shared by all subcommands.
#[derive(Debug, Clone, Default)]
pub struct Globals {
    pub dt: Option<f64>,
    pub seed: Option<u64>,
    pub eta: Option<f64>,
    pub out: Option<PathBuf>,
}

pub fn exit_code(category: ErrorCategory) -> i32 {
    match category {
        ErrorCategory::Config => 2,
        ErrorCategory::Numeric => 3,
        ErrorCategory::Convergence => 4,
    }
}

pub fn category_name(category: ErrorCategory) -> &'static str {
    match category {
        ErrorCategory::Config => "config",
        ErrorCategory::Numeric => "numeric",
        ErrorCategory::Convergence => "convergence",
    }
}

/// Runs one command and returns the process exit code. Failures are reported
/// on stderr as a one-line JSON object with `error` and `message`.
pub fn run(cli: Cli) -> i32 {
    let g = Globals {
        dt: cli.dt,
        seed: cli.seed,
        eta: cli.eta,
        out: cli.out,
    };
    let result = match &cli.command {
        Command::Exact { config } => commands::exact(config, &g),
        Command::Simulate { config } => commands::simulate(config, &g),
        Command::Estimate { config } => commands::estimate(config, &g),
        Command::Fit { config } => commands::fit(config, &g),
        Command::PovmCheck { config } => commands::povm_check(config, &g),
        Command::ReproduceFig1 { duration } => fig1::run(*duration, &g),
    };
    match result {
        Ok(()) => 0,
        Err(e) => report(&e),
    }
}

fn report(e: &Error) -> i32 {
    let category = e.category();
    eprintln!(
        "{}",
        serde_json::json!({ "error": category_name(category), "message": e.to_string() })
    );
    exit_code(category)
}
