//! `trapnode`: detection, training, evaluation, CNN scheduling and energy
//! reports from one binary. Every report carries a manifest header; exit
//! status is 0 on success, 2 for input errors and 3 for constraint
//! violations.

mod cmd;
mod error;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "trapnode",
    version,
    about = "Pest-trap detection and node modelling toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Scan images with a Haar cascade over a tiled image pyramid.
    Detect(cmd::detect::DetectArgs),
    /// Train a cascade with AdaBoost and hard-negative mining.
    Train(cmd::train::TrainArgs),
    /// Score predictions against ground truth at an IoU threshold.
    Eval(cmd::eval::EvalArgs),
    /// Schedule a CNN layer graph on a platform and estimate its latency.
    Cnn(cmd::cnn::CnnArgs),
    /// Daily energy, battery lifetime and wake/sleep simulation.
    Power(cmd::power::PowerArgs),
    /// Generate synthetic trap imagery.
    Synth(cmd::synth::SynthArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Detect(a) => cmd::detect::run(a),
        Command::Train(a) => cmd::train::run(a),
        Command::Eval(a) => cmd::eval::run(a),
        Command::Cnn(a) => cmd::cnn::run(a),
        Command::Power(a) => cmd::power::run(a),
        Command::Synth(a) => cmd::synth::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("trapnode: {e}");
            e.exit_code()
        }
    }
}
