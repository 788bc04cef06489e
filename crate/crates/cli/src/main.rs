//! `din-rank` command-line front end.
//!
//! Exit codes: 0 success, 2 usage or configuration error (including a
//! missing input path), 3 data error, 4 numeric divergence during training.

mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::benchmark::BenchmarkArgs;
use commands::evaluate::EvaluateArgs;
use commands::params::ParamsArgs;
use commands::predict::PredictArgs;
use commands::train::TrainArgs;

#[derive(Debug, Parser)]
#[command(name = "din-rank", version, about = "Train, evaluate and benchmark listwise ranking scorers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a scorer and write checkpoints, run log and final report.
    Train(TrainArgs),
    /// Report NDCG@1/5/10, MRR and ARP of a checkpoint with bootstrap intervals.
    Evaluate(EvaluateArgs),
    /// Score and rank every document of a dataset.
    Predict(PredictArgs),
    /// Time inference per query across list sizes.
    Benchmark(BenchmarkArgs),
    /// Count trainable parameters of scorers or checkpoints.
    Params(ParamsArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => commands::train::run(a),
        Command::Evaluate(a) => commands::evaluate::run(a),
        Command::Predict(a) => commands::predict::run(a),
        Command::Benchmark(a) => commands::benchmark::run(a),
        Command::Params(a) => commands::params::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
