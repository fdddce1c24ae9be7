//! Command-line driver: training, evolution, evaluation, inspection, export
//! and deterministic replay of recorded runs.

mod commands;
mod context;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use context::SolveOpts;

#[derive(Debug, Parser)]
#[command(
    name = "optinsight",
    version,
    about = "Solver-verified experience library for optimization modeling"
)]
struct Cli {
    #[command(flatten)]
    solve: SolveOpts,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Learn a library from a training dataset and write a run directory.
    Train(commands::TrainArgs),
    /// Run one diagnose-and-refine round on an archived library.
    Evolve(commands::EvolveArgs),
    /// Solve each task once and report success rates.
    Eval(commands::EvalArgs),
    /// Print one insight or the taxonomy distribution.
    Inspect(commands::InspectArgs),
    /// Write a library as a readable audit document.
    Export(commands::ExportArgs),
    /// Re-run a recorded training run from its cassette and compare checksums.
    Replay(commands::ReplayArgs),
    /// Split a dataset into stratified train and test files.
    Split(commands::SplitArgs),
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let result = match cli.command {
        Command::Train(a) => commands::train(&cli.solve, a),
        Command::Evolve(a) => commands::evolve(&cli.solve, a),
        Command::Eval(a) => commands::eval(&cli.solve, a),
        Command::Inspect(a) => commands::inspect(a),
        Command::Export(a) => commands::export(a),
        Command::Replay(a) => commands::replay(&cli.solve, a),
        Command::Split(a) => commands::split(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
