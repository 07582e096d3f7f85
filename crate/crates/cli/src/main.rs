//! `ssdr`: sparse sufficient dimension reduction from the command line.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sdr_core::SdrError;

#[derive(Parser, Debug)]
#[command(
    name = "ssdr",
    version,
    about = "Sparse SDR by optimal scoring, screening and cross-validation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Predictor matrix (samples x features; .csv or whitespace-separated)
    #[arg(long)]
    pub x: Option<PathBuf>,
    /// Phenotype file: sample id and label per line
    #[arg(long)]
    pub y: Option<PathBuf>,
    /// Run configuration (key = value lines)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (results do not depend on it)
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the sparse direction basis on all features
    Fit(Common),
    /// Run a staged split-and-conquer screening plan
    Screen(Common),
    /// Cross-validate the SDR pipeline or the chi-square baseline
    Cv(Common),
    /// Chi-square association test per feature
    Assoc(Common),
    /// Write a synthetic genotype cohort
    Simulate(Common),
    /// Apply a saved classifier to new samples
    Predict {
        #[command(flatten)]
        common: Common,
        /// model.json written by fit or screen
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Repeat a run from its manifest and check the outputs match
    Rerun {
        /// manifest.json of the original run
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
}

/// Marks failures reading or writing files (exit code 4).
#[derive(Debug)]
pub struct IoFailure(pub String);

impl std::fmt::Display for IoFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "I/O error: {}", self.0)
    }
}

impl std::error::Error for IoFailure {}

/// Marks numeric failures raised outside the library (exit code 3).
#[derive(Debug)]
pub struct NumericFailure(pub String);

impl std::fmt::Display for NumericFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericFailure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<IoFailure>() {
            return 4;
        }
        if cause.is::<NumericFailure>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<SdrError>() {
            return if e.is_io() {
                4
            } else if e.is_numerical() {
                3
            } else {
                2
            };
        }
    }
    2
}

fn set_threads(threads: Option<usize>) -> anyhow::Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            anyhow::bail!("--threads must be >= 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Fit(c) => commands::dispatch("fit", &c, None),
        Command::Screen(c) => commands::dispatch("screen", &c, None),
        Command::Cv(c) => commands::dispatch("cv", &c, None),
        Command::Assoc(c) => commands::dispatch("assoc", &c, None),
        Command::Simulate(c) => commands::dispatch("simulate", &c, None),
        Command::Predict { common, model } => commands::dispatch("predict", &common, model),
        Command::Rerun {
            manifest,
            out,
            threads,
        } => {
            set_threads(threads)?;
            manifest::rerun(&manifest, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match &cli.command {
        Command::Fit(c)
        | Command::Screen(c)
        | Command::Cv(c)
        | Command::Assoc(c)
        | Command::Simulate(c) => c.threads,
        Command::Predict { common, .. } => common.threads,
        Command::Rerun { .. } => None,
    };
    if let Err(e) = set_threads(threads).and_then(|_| run(cli)) {
        eprintln!("ssdr: {}", format!("{e:#}").replace('\n', " "));
        return ExitCode::from(exit_code(&e));
    }
    ExitCode::SUCCESS
}
