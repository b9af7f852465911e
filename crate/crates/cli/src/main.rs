//! Command-line driver: wordlists in; trained models, cluster tables,
//! evaluation reports, sweeps, and synthetic families out.

mod commands;
mod sweep;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use util::AppError;

#[derive(Parser)]
#[command(
    name = "cognet",
    version,
    about = "Cognate detection in multilingual word lists",
    after_help = "Set COGNET_LOG=debug (or info, warn) for progress logging."
)]
struct Cli {
    /// TOML settings file; command-line flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a segment-similarity model on probable cognate pairs.
    Train(commands::TrainArgs),
    /// Cluster a wordlist into cognate sets per concept.
    Cluster(commands::ClusterArgs),
    /// Score a cluster table against gold cognate classes.
    Evaluate(commands::EvaluateArgs),
    /// Grid-search minibatch size and stepsize decay for online training.
    Sweep(sweep::SweepArgs),
    /// Generate a synthetic language family with gold classes.
    Synth(commands::SynthArgs),
    /// Summarize a wordlist (meanings, doculects, class sizes).
    Stats(commands::StatsArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("COGNET_LOG")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let config = match util::load_config(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let result = match cli.command {
        Command::Train(args) => commands::train(&args, &config),
        Command::Cluster(args) => commands::cluster(&args, &config),
        Command::Evaluate(args) => commands::evaluate(&args, &config),
        Command::Sweep(args) => sweep::run(&args, &config),
        Command::Synth(args) => commands::synth(&args, &config),
        Command::Stats(args) => commands::stats(&args, &config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}

fn fail(e: AppError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.code() as u8)
}
