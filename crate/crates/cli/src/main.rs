//! `wemi` — configuration-driven WEMI prescreening pipeline.
//!
//! Subcommands cover the full chain: simulate synthetic sweeps, preprocess,
//! train MI signatures, detect, generate alarms, and score ROC curves. All
//! randomness flows from the config seed, so identical invocations produce
//! byte-identical output trees.

mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wemi_core::detect::StatisticKind;

use crate::config::PipelineConfig;
use crate::pipeline::Pipeline;

#[derive(Parser)]
#[command(name = "wemi", version, about = "WEMI subsurface prescreening pipeline")]
struct Cli {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (default: ./out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Restrict detect/alarms/score to one detector kind.
    #[arg(long, global = true)]
    detector: Option<String>,

    /// Print the fully resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic sweeps, blanks, and ground truth.
    Simulate,
    /// Export preprocessed per-position vectors (and window features).
    Preprocess,
    /// Run the configured detectors over the simulated sweeps.
    Detect,
    /// Train MI-SMF/MI-ACE signatures with lane-based cross-validation.
    Train,
    /// Condense confidence maps into alarms via mean shift.
    Alarms,
    /// Match alarms to ground truth and emit ROC curves.
    Score,
    /// The whole chain in order.
    RunAll,
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    let config_path = match &cli.config {
        Some(p) => p.clone(),
        None => {
            eprintln!("error: --config <path> is required");
            return ExitCode::from(EXIT_VALIDATION);
        }
    };

    let detector_filter = match cli.detector.as_deref() {
        None => None,
        Some(raw) => match raw.parse::<StatisticKind>() {
            Ok(kind) => Some(kind),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_VALIDATION);
            }
        },
    };

    let config = match PipelineConfig::load(&config_path, cli.seed) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: invalid config: {e}");
            return ExitCode::from(EXIT_VALIDATION);
        }
    };

    if cli.print_config {
        println!("{}", config.to_json_pretty());
        return ExitCode::SUCCESS;
    }

    let out = cli.out.unwrap_or_else(|| PathBuf::from("out"));
    let pipeline = Pipeline::new(config, out, detector_filter);

    let result = match cli.command {
        Command::Simulate => pipeline.cmd_simulate(),
        Command::Preprocess => pipeline.cmd_preprocess(),
        Command::Detect => pipeline.cmd_detect(),
        Command::Train => pipeline.cmd_train(),
        Command::Alarms => pipeline.cmd_alarms(),
        Command::Score => pipeline.cmd_score(),
        Command::RunAll => pipeline.cmd_run_all(),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ wemi_core::Error::Invalid { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
