//! `l2relax` command-line tool.

mod fit;
mod io;
mod pda;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "l2relax",
    version,
    about = "L2-relaxation regression, treatment-effect inference and simulation tables"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args, serde::Serialize)]
pub struct GlobalOpts {
    /// Seed for randomized validation folds and simulations.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Write data here instead of stdout.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model on the training rows and report in- and out-of-sample MPSE.
    Fit(fit::FitArgs),
    /// Apply a stored fit to a CSV.
    Predict(fit::PredictArgs),
    /// Treatment-effect inference.
    #[command(subcommand)]
    Pda(pda::PdaCommand),
    /// Pre-treatment placebo test.
    Placebo(pda::PlaceboArgs),
    /// Reproduce the simulation tables.
    #[command(subcommand)]
    Simulate(simulate::SimulateCommand),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let threads = cli.global.threads.unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()?;
    match cli.command {
        Command::Fit(a) => fit::run_fit(&cli.global, a),
        Command::Predict(a) => fit::run_predict(&cli.global, a),
        Command::Pda(c) => pda::run(&cli.global, c),
        Command::Placebo(a) => pda::run_placebo(&cli.global, a),
        Command::Simulate(c) => simulate::run(&cli.global, c),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
