//! Experiment kinds. Each returns in-memory tables; writing is left to the caller.

use privlasso_core::amp::estimate_errors;
use privlasso_core::rng::{derive_seed, Stream};
use privlasso_core::stats::MeanAccumulator;
use privlasso_core::{
    generate_dataset, run_amp, sample_privacy_noise, Mechanism, ModelParams, NoiseVector, SolverOptions,
};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::Result;
use crate::output::{Cell, RunOutput};

pub mod amp_mc;
pub mod dist;
pub mod privacy;
pub mod se_sweep;
pub mod stability;

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    match cfg.kind {
        ExperimentKind::SeSweep => se_sweep::run(cfg),
        ExperimentKind::AmpMc => amp_mc::run(cfg),
        ExperimentKind::DistCompare => dist::run(cfg),
        ExperimentKind::PrivacySweep => privacy::run_privacy_sweep(cfg),
        ExperimentKind::Tradeoff => privacy::run_tradeoff(cfg),
        ExperimentKind::StabilityMap => stability::run(cfg),
    }
}

/// Seed of trial `trial` at grid point `grid`.
pub fn trial_seed(run_seed: u64, grid: usize, trial: usize) -> u64 {
    derive_seed(run_seed, Stream::Trial, &[grid as u64, trial as u64])
}

/// Order-preserving parallel map over `0..n`.
pub(crate) fn par_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}

/// Outcome of one dataset plus privacy-noise realization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOutcome {
    pub converged: bool,
    pub iterations: usize,
    /// Support fraction of the solver output (before any output noise).
    pub rho_hat: f64,
    pub e_gen: f64,
    pub e_train: f64,
}

/// Draws a dataset and noise from `seed` and solves with AMP under the
/// point's mechanism.
pub fn amp_trial(params: &ModelParams, seed: u64, solver: &SolverOptions) -> Result<TrialOutcome> {
    let d = generate_dataset(params, seed)?;
    let eta = sample_privacy_noise(params, seed)?;
    let (fp, released) = match params.mechanism {
        Mechanism::Objective => {
            let fp = run_amp(&d, &eta, params.lambda, solver)?;
            let b = fp.beta_hat().clone();
            (fp, b)
        }
        Mechanism::Output => {
            let fp = run_amp(&d, &NoiseVector::zeros(params.p), params.lambda, solver)?;
            let b = fp.beta_hat() + &eta.eta;
            (fp, b)
        }
    };
    let (e_gen, e_train) = estimate_errors(&d, &released)?;
    Ok(TrialOutcome {
        converged: fp.converged() && !fp.diverged(),
        iterations: fp.state.iter,
        rho_hat: fp.rho_hat,
        e_gen,
        e_train,
    })
}

/// Mean and, when more than one trial was requested, stderr cells.
pub(crate) fn summary_cells(acc: &MeanAccumulator, with_stderr: bool) -> Vec<Cell> {
    let mean = if acc.count() > 0 {
        Cell::Float(acc.mean())
    } else {
        Cell::Empty
    };
    if with_stderr {
        vec![mean, Cell::opt(acc.stderr())]
    } else {
        vec![mean]
    }
}

pub(crate) fn metric_columns(names: &[&str], with_stderr: bool) -> Vec<String> {
    names
        .iter()
        .flat_map(|n| {
            let mut v = vec![n.to_string()];
            if with_stderr {
                v.push(format!("{n}_stderr"));
            }
            v
        })
        .collect()
}
