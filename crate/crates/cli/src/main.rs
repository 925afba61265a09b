//! `gbk`: train, evaluate and analyze graph neural networks on GraphText
//! datasets.
//!
//! Every command writes a fresh `<out>/<timestamp>-<command>/` directory
//! with a `manifest.json` and prints a one-line JSON summary on stdout.
//! Failures print one JSON line `{"error": kind, "message": ...}` on stderr.

mod commands;
mod config;
mod error;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::analyze::AnalyzeArgs;
use commands::eval::EvalArgs;
use commands::grid::GridArgs;
use commands::report::ReportArgs;
use commands::sweep::SweepArgs;
use commands::synth::SynthArgs;
use commands::train::TrainArgs;
use commands::Globals;
use error::{tagged, Failure};

#[derive(Debug, Parser)]
#[command(name = "gbk", version, about = "Gated bi-kernel graph neural networks")]
struct Cli {
    /// Parent directory of run directories.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Worker threads for `grid` and `sweep-theorem1`. Results do not depend
    /// on it; 1 runs everything on the main thread.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model and save checkpoint, metrics and reports.
    Train(TrainArgs),
    /// Hyperparameter search, optionally over repeats and training fractions.
    Grid(GridArgs),
    /// Score a saved checkpoint on its run's split.
    Eval(EvalArgs),
    /// Dataset statistics, plus bucket, gate and complexity reports for a run.
    Analyze(AnalyzeArgs),
    /// Generate a synthetic two-class graph.
    Synth(SynthArgs),
    /// Complexity of single- and bi-kernel layers across mixing rates.
    #[command(name = "sweep-theorem1")]
    SweepTheorem1(SweepArgs),
    /// Aggregate finished runs.
    Report(ReportArgs),
}

fn run(cli: Cli) -> anyhow::Result<serde_json::Value> {
    if cli.jobs == 0 {
        return Err(tagged("usage", "--jobs must be >= 1"));
    }
    let g = Globals {
        out: cli.out,
        jobs: cli.jobs,
    };
    match &cli.command {
        Command::Train(a) => commands::train::run(&g, a),
        Command::Grid(a) => commands::grid::run(&g, a),
        Command::Eval(a) => commands::eval::run(&g, a),
        Command::Analyze(a) => commands::analyze::run(&g, a),
        Command::Synth(a) => commands::synth::run(&g, a),
        Command::SweepTheorem1(a) => commands::sweep::run(&g, a),
        Command::Report(a) => commands::report::run(&g, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let message = e.to_string();
            let first = message
                .lines()
                .map(|l| l.trim_start_matches("error: ").trim())
                .find(|l| !l.is_empty())
                .unwrap_or("invalid arguments");
            eprintln!("{}", Failure::from_anyhow(&tagged("usage", first)).line());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(summary) => {
            commands::print_summary(summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            let failure = Failure::from_anyhow(&e);
            eprintln!("{}", failure.line());
            let code = if matches!(failure.error, "usage" | "config") { 2 } else { 1 };
            ExitCode::from(code)
        }
    }
}
