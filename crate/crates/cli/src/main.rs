//! `catwalk`: simulate the catastrophe walk and run the limit-theorem checks.
//!
//! Exit status is 0 when every requested check passes, 1 when one fails and
//! 2 on a usage, parameter or I/O error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "catwalk",
    version,
    about = "Random walk with binomial catastrophes and its scaling limits"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Master seed.
    #[arg(long, env = "CATWALK_SEED", global = true)]
    pub seed: Option<u64>,

    /// Replicates (per grid point for the verify commands).
    #[arg(long, global = true)]
    pub reps: Option<usize>,

    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[arg(long, value_enum, global = true)]
    pub format: Option<Format>,

    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn name(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    X,
    Y,
    U,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Write one path as `step,value` rows.
    Simulate(SimulateArgs),
    /// The path of the paper's first figure: p = 0.99, c = 0.1, X0 = 2000, 1e5 steps.
    Figure1,
    /// Run the check for proposition 1 to 5.
    Verify(VerifyArgs),
    /// Laplace transform of the invariant law and perpetuity moments.
    Invariant(InvariantArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub p: f64,
    #[arg(long)]
    pub c: f64,
    #[arg(long)]
    pub x0: i64,
    #[arg(long)]
    pub steps: u64,
    #[arg(long, value_enum, default_value = "x")]
    pub kind: KindArg,
}

#[derive(Debug, Args)]
#[allow(non_snake_case)]
pub struct VerifyArgs {
    /// Proposition number.
    #[arg(value_parser = clap::value_parser!(u8).range(1..=5))]
    pub prop: u8,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long = "L", value_delimiter = ',')]
    pub L: Option<Vec<f64>>,
    #[arg(long = "T")]
    pub T: Option<u64>,
    /// Slack in the union bound.
    #[arg(long = "M")]
    pub M: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub y: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub k: Option<i64>,
    #[arg(long, value_delimiter = ',')]
    pub t: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub theta: Option<Vec<f64>>,
    /// Factors in the truncated Laplace product.
    #[arg(long = "N")]
    pub N: Option<usize>,
    /// Perpetuity samples for the moment checks.
    #[arg(long)]
    pub moment_reps: Option<usize>,
    /// Trials in each calibration and power control; 0 skips them.
    #[arg(long)]
    pub controls: Option<usize>,
}

#[derive(Debug, Args)]
#[allow(non_snake_case)]
pub struct InvariantArgs {
    #[arg(long, default_value_t = 0.5)]
    pub c: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 1.0, 10.0])]
    pub theta: Vec<f64>,
    #[arg(long = "N", default_value_t = catwalk::limits::LAPLACE_TERMS)]
    pub N: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
