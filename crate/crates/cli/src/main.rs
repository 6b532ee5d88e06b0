//! `ptt`: reproducible experiments over the ptt-core pipeline.
//!
//! Exit codes: 0 on success, 2 for usage errors (bad flags, unreadable
//! inputs, invalid configs), 3 for numeric failures (non-finite loss, failed
//! gradient checks), 1 for anything else.

mod eval;
mod gen_data;
mod gradcheck;
mod manifest;
mod profile;
mod train;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;

#[derive(Debug, Parser)]
#[command(
    name = "ptt",
    version,
    about = "Point-trajectory transformer experiments"
)]
struct Cli {
    /// Upper bound on worker threads. Every command currently runs on one.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic sequence as JSON lines.
    GenData(gen_data::Args),
    /// Train a refiner and write a checkpoint with loss curves.
    Train(Box<train::Args>),
    /// Evaluate a checkpoint against the unrefined proposals.
    Eval(eval::Args),
    /// Replay a sequence through a memory bank and report storage.
    ProfileMem(profile::Args),
    /// Compare analytic gradients with finite differences.
    Gradcheck(gradcheck::Args),
}

/// Errors that map to a dedicated exit code.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numeric(String),
}

impl Failure {
    pub fn usage(e: impl std::fmt::Display) -> anyhow::Error {
        Failure::Usage(e.to_string()).into()
    }
}

/// Shared context of one invocation.
pub struct Run {
    pub threads: Option<usize>,
    pub started: std::time::Instant,
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return match f {
                Failure::Usage(_) => 2,
                Failure::Numeric(_) => 3,
            };
        }
        if let Some(ptt_core::train::TrainError::NonFinite { .. }) = cause.downcast_ref() {
            return 3;
        }
    }
    1
}

/// Parses a JSON config file, or the default when no path is given.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> anyhow::Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))
}

pub fn load_dataset(path: &Path) -> anyhow::Result<ptt_core::synth::Dataset> {
    ptt_core::synth::read_dataset(path)
        .map_err(|e| Failure::usage(format!("dataset {}: {e}", path.display())))
}

pub fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::usage(format!("output directory {}: {e}", dir.display())))
}

pub fn write_text(path: &Path, text: &str) -> anyhow::Result<PathBuf> {
    std::fs::write(path, text).map_err(|e| anyhow::anyhow!("writing {}: {e}", path.display()))?;
    Ok(path.to_path_buf())
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let run = Run {
        threads: cli.threads,
        started: std::time::Instant::now(),
    };
    if cli.threads == Some(0) {
        return Err(Failure::usage("--threads must be at least 1"));
    }
    match cli.command {
        Command::GenData(a) => gen_data::run(&run, a),
        Command::Train(a) => train::run(&run, *a),
        Command::Eval(a) => eval::run(&run, a),
        Command::ProfileMem(a) => profile::run(&run, a),
        Command::Gradcheck(a) => gradcheck::run(&run, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
