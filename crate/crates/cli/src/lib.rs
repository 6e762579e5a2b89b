//! Driver behind the `fal` binary: config resolution, training runs, studies
//! and their on-disk outputs.

pub mod config;
pub mod output;
pub mod studies;

use std::fs;
use std::path::Path;

use fal_core::federation::{run_fal, run_fedavg, RoundRecord};
use fal_core::FalError;

use crate::config::{load_data, Algorithm, ResolvedConfig};

/// Exit code for configuration and usage errors.
pub const EXIT_CONFIG: i32 = 1;
/// Exit code for failures while running.
pub const EXIT_RUNTIME: i32 = 2;
/// Exit code when a verification study ran but a check failed.
pub const EXIT_CHECK_FAILED: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<FalError> for CliError {
    fn from(e: FalError) -> Self {
        match e {
            FalError::InvalidArgument(_) | FalError::Parse { .. } => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Caps the global worker pool at `FAL_THREADS` when set.
pub fn init_thread_pool() -> Result<(), CliError> {
    let Ok(v) = std::env::var("FAL_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("FAL_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Trains as described by `cfg` and writes `resolved_config.json`,
/// `metrics.csv` and `curves.svg` under `cfg.out`.
pub fn execute_run(cfg: &ResolvedConfig) -> Result<Vec<RoundRecord>, CliError> {
    let (train, test) = load_data(&cfg.data, cfg.fal.seed)?;
    fs::create_dir_all(&cfg.out)?;
    write_json(&cfg.out.join("resolved_config.json"), cfg)?;
    let outcome = match cfg.algorithm {
        Algorithm::Fal => run_fal(&cfg.fal, &train, &test),
        Algorithm::Fedavg => run_fedavg(&cfg.fal, &train, &test),
    }?;
    let audits = cfg.fal.grad_audit_every > 0;
    fs::write(cfg.out.join("metrics.csv"), output::metrics_csv(&outcome.records, audits))?;
    fs::write(cfg.out.join("curves.svg"), output::curves_svg(&outcome.records))?;
    Ok(outcome.records)
}
