//! Coordinate descent for the tilted LASSO, used as a reference solver.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::amp::{check_dims, SolverOptions};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm_sq};
use crate::model::{Dataset, NoiseVector};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CdOrder {
    Cyclic,
    /// A fresh permutation every sweep, drawn from `seed`.
    RandomPermutation {
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdOptions {
    pub tol: f64,
    pub max_sweeps: usize,
    pub order: CdOrder,
    pub blowup_factor: f64,
}

impl Default for CdOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_sweeps: 100_000,
            order: CdOrder::Cyclic,
            blowup_factor: 1e3,
        }
    }
}

impl CdOptions {
    /// Mirrors the AMP stopping rule: same iterate-gap tolerance and budget.
    pub fn mirroring(amp: &SolverOptions) -> Self {
        Self {
            tol: amp.tol,
            max_sweeps: amp.max_iter,
            order: CdOrder::Cyclic,
            blowup_factor: amp.blowup_factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdSolution {
    pub beta_hat: Array1<f64>,
    /// Incrementally tracked objective.
    pub objective_value: f64,
    pub kkt_violation: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub diverged: bool,
    /// A zero column met a tilt larger than the penalty.
    pub unbounded: bool,
    /// No coordinate update increased the objective beyond round-off.
    pub monotone: bool,
}

/// `½‖y − Xβ‖² + λ‖β‖₁ + ηᵀβ` computed from scratch.
pub fn objective(d: &Dataset, eta: &NoiseVector, lambda: f64, beta: &Array1<f64>) -> f64 {
    let r = d.y() - &d.x().dot(beta);
    0.5 * r.dot(&r) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>() + eta.eta.dot(beta)
}

/// Largest distance of `g_i = [Xᵀ(y − Xβ)]_i − η_i` from `λ ∂|β_i|`.
pub fn kkt_residual(beta: &Array1<f64>, d: &Dataset, eta: &NoiseVector, lambda: f64) -> Result<f64> {
    check_dims(d, eta)?;
    if beta.len() != d.p() {
        return Err(Error::DimensionMismatch("estimate length differs from p".into()));
    }
    let r = d.y() - &d.x().dot(beta);
    let g = d.x().t().dot(&r) - &eta.eta;
    Ok(g.iter()
        .zip(beta.iter())
        .map(|(&gi, &bi)| {
            if bi > 0.0 {
                (gi - lambda).abs()
            } else if bi < 0.0 {
                (gi + lambda).abs()
            } else {
                (gi.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max))
}

fn soft(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

pub fn solve_lasso_tilted(d: &Dataset, eta: &NoiseVector, lambda: f64, opts: &CdOptions) -> Result<CdSolution> {
    solve_lasso_tilted_from(d, eta, lambda, opts, &Array1::zeros(d.p()))
}

pub fn solve_lasso_tilted_from(
    d: &Dataset,
    eta: &NoiseVector,
    lambda: f64,
    opts: &CdOptions,
    init: &Array1<f64>,
) -> Result<CdSolution> {
    check_dims(d, eta)?;
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::param("lambda", format!("must be > 0, got {lambda}")));
    }
    if !(opts.tol > 0.0) || opts.max_sweeps == 0 {
        return Err(Error::param("tol", "tolerance and sweep cap must be positive"));
    }
    if init.len() != d.p() {
        return Err(Error::DimensionMismatch(
            "initial estimate length differs from p".into(),
        ));
    }
    let (n, p) = (d.n(), d.p());
    // column-major copy: column i is cols[i*n..(i+1)*n]
    let cols: Array2<f64> = d.x().t().as_standard_layout().to_owned();
    let cols = cols.as_slice().expect("standard layout");
    let norms: Vec<f64> = (0..p).map(|i| norm_sq(&cols[i * n..(i + 1) * n])).collect();
    let eta_s = eta.eta.as_slice().expect("contiguous");
    let params = d.params();
    let blowup = opts.blowup_factor * (p as f64 * (params.rho * params.sigma_beta * params.sigma_beta + 1.0)).sqrt();

    let mut beta = init.to_vec();
    let mut unbounded = false;
    for i in 0..p {
        if norms[i] == 0.0 {
            beta[i] = 0.0;
            unbounded |= eta_s[i].abs() > lambda;
        }
    }
    let mut r = (d.y() - &d.x().dot(&Array1::from(beta.clone()))).to_vec();
    let mut obj = 0.5 * norm_sq(&r)
        + beta
            .iter()
            .zip(eta_s)
            .map(|(b, e)| lambda * b.abs() + e * b)
            .sum::<f64>();

    let mut order: Vec<usize> = (0..p).collect();
    let mut perm_rng = match opts.order {
        CdOrder::RandomPermutation { seed } => Some(stream_rng(seed, Stream::Permutation, &[])),
        CdOrder::Cyclic => None,
    };
    let mut monotone = true;
    let mut converged = false;
    let mut diverged = false;
    let mut sweeps = 0;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        if let Some(rng) = perm_rng.as_mut() {
            order.shuffle(rng);
        }
        let mut gap = 0.0f64;
        for &i in &order {
            let a = norms[i];
            if a == 0.0 {
                continue;
            }
            let col = &cols[i * n..(i + 1) * n];
            let old = beta[i];
            let g = dot(col, &r);
            let c = g + a * old;
            let new = soft(c - eta_s[i], lambda) / a;
            let delta = new - old;
            if delta != 0.0 {
                for (rk, &xk) in r.iter_mut().zip(col) {
                    *rk -= delta * xk;
                }
                let change = -delta * g + 0.5 * a * delta * delta + lambda * (new.abs() - old.abs()) + eta_s[i] * delta;
                if change > 1e-12 * (1.0 + obj.abs()) {
                    monotone = false;
                }
                obj += change;
                beta[i] = new;
                gap = gap.max(delta.abs());
            }
        }
        if !gap.is_finite() || norm_sq(&beta).sqrt() > blowup {
            diverged = true;
            break;
        }
        if gap < opts.tol {
            converged = true;
            break;
        }
    }
    let beta_hat = Array1::from(beta);
    let kkt_violation = kkt_residual(&beta_hat, d, eta, lambda)?;
    Ok(CdSolution {
        beta_hat,
        objective_value: obj,
        kkt_violation,
        sweeps,
        converged,
        diverged,
        unbounded,
        monotone,
    })
}

/// Outcome of solving the same instance with two coordinate orders.
#[derive(Debug, Clone, PartialEq)]
pub struct CdProbe {
    pub cyclic: CdSolution,
    pub permuted: CdSolution,
    /// ℓ∞ distance between the two estimates.
    pub max_diff: f64,
    /// Runs disagree by more than `1e-3` or either failed to converge.
    pub flagged: bool,
}

pub fn cd_disagreement(d: &Dataset, eta: &NoiseVector, lambda: f64, opts: &CdOptions, seed: u64) -> Result<CdProbe> {
    let cyclic = solve_lasso_tilted(
        d,
        eta,
        lambda,
        &CdOptions {
            order: CdOrder::Cyclic,
            ..*opts
        },
    )?;
    let permuted = solve_lasso_tilted(
        d,
        eta,
        lambda,
        &CdOptions {
            order: CdOrder::RandomPermutation { seed },
            ..*opts
        },
    )?;
    let max_diff = cyclic
        .beta_hat
        .iter()
        .zip(permuted.beta_hat.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let ok = |s: &CdSolution| s.converged && !s.diverged && !s.unbounded;
    let flagged = !(max_diff <= 1e-3) || !ok(&cyclic) || !ok(&permuted);
    Ok(CdProbe {
        cyclic,
        permuted,
        max_diff,
        flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelParams, Provenance};
    use ndarray::array;

    fn scalar(y: f64) -> Dataset {
        Dataset::from_parts(
            array![[1.0]],
            array![y],
            array![0.0],
            array![0.0],
            ModelParams {
                alpha: 1.0,
                p: 1,
                ..ModelParams::default()
            },
            Provenance { seed: 0, mutant: None },
        )
        .unwrap()
    }

    #[test]
    fn scalar_solutions() {
        let d = scalar(3.0);
        let sol = solve_lasso_tilted(&d, &NoiseVector::zeros(1), 1.0, &CdOptions::default()).unwrap();
        assert!((sol.beta_hat[0] - 2.0).abs() < 1e-15);
        assert!(sol.kkt_violation < 1e-12);
        let eta = NoiseVector {
            eta: array![0.5],
            sigma_eta: 0.5,
        };
        let sol = solve_lasso_tilted(&d, &eta, 1.0, &CdOptions::default()).unwrap();
        assert!((sol.beta_hat[0] - 1.5).abs() < 1e-15);
        assert!(sol.kkt_violation < 1e-12);
        assert!(sol.converged && sol.monotone);
    }

    #[test]
    fn zero_column_is_pinned() {
        let d = Dataset::from_parts(
            array![[1.0, 0.0]],
            array![3.0],
            array![0.0, 0.0],
            array![0.0],
            ModelParams {
                alpha: 0.5,
                p: 2,
                ..ModelParams::default()
            },
            Provenance { seed: 0, mutant: None },
        )
        .unwrap();
        let eta = NoiseVector {
            eta: array![0.0, 2.0],
            sigma_eta: 1.0,
        };
        let sol = solve_lasso_tilted(&d, &eta, 1.0, &CdOptions::default()).unwrap();
        assert_eq!(sol.beta_hat[1], 0.0);
        assert!(sol.unbounded);
    }

    #[test]
    fn global_shrinkage_certificate() {
        let d = scalar(0.5);
        let zero = Array1::zeros(1);
        assert_eq!(kkt_residual(&zero, &d, &NoiseVector::zeros(1), 1.0).unwrap(), 0.0);
    }
}
