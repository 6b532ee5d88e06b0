//! One JSON manifest per run.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::Run;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub git_describe: String,
    pub threads: Option<usize>,
    pub outputs: Vec<PathBuf>,
    /// Seconds from start-up to the manifest write.
    pub wall_time_s: f64,
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_string())
}

/// Writes `path` and returns it. The manifest lists itself last.
pub fn write(
    run: &Run,
    path: &Path,
    command: &str,
    config: serde_json::Value,
    seed: Option<u64>,
    mut outputs: Vec<PathBuf>,
) -> anyhow::Result<PathBuf> {
    outputs.push(path.to_path_buf());
    let m = RunManifest {
        command: command.to_string(),
        config,
        seed,
        git_describe: git_describe(),
        threads: run.threads,
        outputs,
        wall_time_s: run.started.elapsed().as_secs_f64(),
    };
    let text = serde_json::to_string_pretty(&m)? + "\n";
    crate::write_text(path, &text)
}
