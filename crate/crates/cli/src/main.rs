//! `pmcausal`: simulation experiments, single-cohort estimation, PDX
//! emulation and the HTTP service.

mod estimate;
mod exit;
mod output;
mod pdx;
mod serve;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pmcausal_core::estimators::{Estimand, Method};
use pmcausal_core::model::OutcomeKind;

use crate::exit::Failure;

#[derive(Parser)]
#[command(name = "pmcausal", version, about = "Causal effects of precision medicine algorithms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment from a scenario file or preset.
    Simulate(simulate::SimulateArgs),
    /// Estimate CE1/CE2/CE3 on one cohort CSV.
    Estimate(estimate::EstimateArgs),
    /// Mask-and-estimate emulation on PDX screen data.
    Pdx(pdx::PdxArgs),
    /// Serve the HTTP API.
    Serve(serve::ServeArgs),
}

/// Flags shared by every command that runs estimators.
#[derive(Args, Clone, Debug)]
struct Selection {
    /// Comma-separated methods: true, naive, std, ipw, tmle.
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Option<Vec<Method>>,
    /// Comma-separated estimands: CE1, CE2, CE3.
    #[arg(long, value_delimiter = ',', value_parser = parse_estimand)]
    estimands: Option<Vec<Estimand>>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Outcome {
    Continuous,
    Binary,
}

impl From<Outcome> for OutcomeKind {
    fn from(o: Outcome) -> Self {
        match o {
            Outcome::Continuous => OutcomeKind::Continuous,
            Outcome::Binary => OutcomeKind::Binary,
        }
    }
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).map_err(|e| e.to_string())
}

fn parse_estimand(s: &str) -> Result<Estimand, String> {
    Estimand::parse(s).map_err(|e| e.to_string())
}

/// Output directory flag, created on demand.
#[derive(Args, Clone, Debug)]
struct OutDir {
    /// Directory for result files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn init_logging(default: &str) {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => {
            init_logging("warn");
            simulate::run(a)
        }
        Command::Estimate(a) => {
            init_logging("warn");
            estimate::run(a)
        }
        Command::Pdx(a) => {
            init_logging("warn");
            pdx::run(a)
        }
        Command::Serve(a) => {
            init_logging("info");
            serve::run(a)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
