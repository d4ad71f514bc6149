use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use blockprior::AnalysisOptions;
use blockprior_cli::{cmd_report, cmd_validate, OutputFormat};

/// Conservative prior inflation for block-structured nuisance-parameter
/// covariances with unknown cross-block correlations.
#[derive(Parser)]
#[command(name = "blockprior", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check that a scenario file parses and satisfies all invariants.
    Validate {
        /// Scenario JSON file.
        path: PathBuf,
        /// Relative tolerance for positive-definiteness checks.
        #[arg(long, default_value_t = 1e-10)]
        tolerance: f64,
    },
    /// Compute the bounds report for a scenario.
    Report {
        /// Scenario JSON file.
        path: PathBuf,
        /// Monte Carlo sample count (0 disables simulation).
        #[arg(long, default_value_t = 0)]
        mc: u64,
        /// Seed for completion sampling and simulation.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Completions to sample for the limit sweep (0 disables it).
        #[arg(long, default_value_t = 0)]
        completions: usize,
        /// Emit the report as JSON.
        #[arg(long, conflicts_with = "text")]
        json: bool,
        /// Emit the report as aligned text (default).
        #[arg(long)]
        text: bool,
        /// Relative tolerance for positive-definiteness checks.
        #[arg(long, default_value_t = 1e-10)]
        tolerance: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut out = io::stdout();
    let mut err = io::stderr();
    let code = match cli.command {
        Command::Validate { path, tolerance } => cmd_validate(&path, tolerance, &mut out, &mut err),
        Command::Report {
            path,
            mc,
            seed,
            completions,
            json,
            text: _,
            tolerance,
        } => {
            let options = AnalysisOptions {
                completions,
                mc_samples: mc,
                seed,
            };
            let format = if json {
                OutputFormat::Json
            } else {
                OutputFormat::Text
            };
            cmd_report(&path, &options, format, tolerance, &mut out, &mut err)
        }
    };
    ExitCode::from(code as u8)
}
