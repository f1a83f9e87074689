//! `lens`: explanations of binary classifier predictions through
//! probabilities of sufficiency and necessity.

mod config;
mod error;
mod run;

use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Command, Settings};
use error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "lens", version, about = "Minimal sufficient factors and related explanations")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Minimal sufficient factors of a prediction and their cumulative necessity.
    Explain(Settings),
    /// Cumulative necessity and factor count over a list of thresholds, as CSV.
    SweepTau(Settings),
    /// Shapley values with the marginal reference distribution.
    Shapley(Settings),
    /// Cheapest intervention that flips the prediction with the required sufficiency.
    Recourse(Settings),
    /// Probabilities of sufficiency and necessity of a cause in a structural model.
    Pearl(Settings),
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Output {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

fn print(text: &str) -> CliResult<()> {
    std::io::stdout()
        .write_all(text.as_bytes())
        .map_err(|e| CliError::Output {
            path: "stdout".into(),
            reason: e.to_string(),
        })
}

fn execute(cli: Cli) -> CliResult<()> {
    let (command, settings) = match cli.command {
        Sub::Explain(s) => (Command::Explain, s),
        Sub::SweepTau(s) => (Command::SweepTau, s),
        Sub::Shapley(s) => (Command::Shapley, s),
        Sub::Recourse(s) => (Command::Recourse, s),
        Sub::Pearl(s) => (Command::Pearl, s),
    };
    let settings = settings.with_file()?;
    let effective = config::resolve(command, &settings)?;
    let out = run::run(command, effective)?;

    if let Some(csv) = &out.csv {
        if let Some(path) = &settings.report {
            write_file(path, &out.json)?;
        }
        return match &settings.output {
            Some(path) => {
                write_file(path, csv)?;
                print(&out.summary)
            }
            None => print(csv),
        };
    }
    match &settings.output {
        Some(path) => {
            write_file(path, &out.json)?;
            print(&out.summary)
        }
        None => print(&out.json),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default();
            let err = CliError::InvalidConfig(first.trim_start_matches("error: ").to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code());
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
