//! Pipeline driver: ingest daily data, fit the temperature response,
//! attribute deaths, refit mortality trends on adjusted exposures, project
//! climate scenarios, and summarise.
//!
//! Exit codes: 0 success, 2 input or configuration problem, 3 numerical
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod artifact;
mod config;
mod stages;

use config::Resolved;

/// A stage failure with the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Missing or malformed inputs, bad configuration, stale artifacts.
    Input(anyhow::Error),
    /// A fit or simulation that could not be completed.
    Numerical(anyhow::Error),
}

impl Failure {
    pub fn input(err: impl Into<anyhow::Error>) -> Self {
        Failure::Input(err.into())
    }

    pub fn numerical(err: impl Into<anyhow::Error>) -> Self {
        Failure::Numerical(err.into())
    }

    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Input(e) | Failure::Numerical(e) => e,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "climort",
    version,
    about = "Temperature-attributable mortality projection pipeline"
)]
struct Cli {
    /// Pipeline configuration (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root random seed, overriding the configured one.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory, overriding the configured one.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the bundled synthetic dataset with known ground truth.
    Synthgen,
    /// Validate the input files and write a dataset manifest.
    Ingest,
    /// Fit the distributed-lag temperature response per stratum.
    FitDlnm,
    /// Tabulate attributable death fractions with bootstrap bands.
    Attribution,
    /// Fit mortality trends, with and without exposure adjustment.
    FitMortality,
    /// Project death rates and life expectancy under the climate scenarios.
    Forecast,
    /// Detect heatwave episodes in the scenario series.
    Heatwaves,
    /// Summarise the run into a readable report.
    Report,
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::input(anyhow::anyhow!("cannot configure thread pool: {e}")))?;
    }
    let resolved = Resolved::load(cli.config.as_deref(), cli.seed, cli.out.as_deref())?;
    log::info!(
        "config hash {}, seed {}",
        &resolved.hash[..12],
        resolved.config.seed
    );
    match cli.command {
        Command::Synthgen => stages::synthgen::run(&resolved),
        Command::Ingest => stages::ingest::run(&resolved),
        Command::FitDlnm => stages::fit_dlnm::run(&resolved),
        Command::Attribution => stages::attribution::run(&resolved),
        Command::FitMortality => stages::fit_mortality::run(&resolved),
        Command::Forecast => stages::forecast::run(&resolved),
        Command::Heatwaves => stages::heatwaves::run(&resolved),
        Command::Report => stages::report::run(&resolved),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error());
            ExitCode::from(failure.code())
        }
    }
}
