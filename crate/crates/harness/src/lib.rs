//! Experiment runner behind the `privlasso` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;

use std::path::{Path, PathBuf};
use std::time::Instant;

use config::ExperimentConfig;
use error::{HarnessError, Result};
use output::RunOutput;

/// Runs `cfg` on a pool of `threads` workers (all cores when `None`).
pub fn run_with_threads(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<RunOutput> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| HarnessError::config(format!("cannot build thread pool: {e}")))?;
    pool.install(|| experiments::run(cfg))
}

/// Runs `cfg` and writes its tables and sidecar into `dir`.
pub fn execute(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let start = Instant::now();
    let threads = cfg.threads.unwrap_or_else(rayon::current_num_threads);
    let out = run_with_threads(cfg, Some(threads))?;
    output::write_run(dir, cfg, &out, start.elapsed().as_secs_f64(), threads)
}
