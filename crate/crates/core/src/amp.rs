//! Approximate message passing for the tilted LASSO
//! `½‖y − Xβ‖² + λ‖β‖₁ + ηᵀβ`.
//!
//! Each sweep forms the cavity residual with an Onsager memory term,
//! `R ← y − Xβ̂ + s_θ/(1 + s_θ') R'`, the effective fields `m = β̂ + XᵀR/α`,
//! and the update `β̂ ← M(Σ, m − ηΣ)`. At a fixed point
//! `R = (1 + s_θ)(y − Xβ̂)`, so `m − β̂ = Σ Xᵀ(y − Xβ̂)` and the fixed point
//! satisfies the LASSO optimality conditions exactly.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matvec, matvec_t, norm_sq};
use crate::model::{Dataset, NoiseVector};
use crate::scalar_kernel::soft_threshold;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Weight of the previous iterate in `β̂ ← (1 − γ)β̂_new + γβ̂`.
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub blowup_factor: f64,
    /// Consecutive sweeps with a growing iterate gap that count as divergence.
    pub stall_window: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tol: 1e-8,
            max_iter: 5000,
            blowup_factor: 1e3,
            stall_window: 50,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::param("damping", "must lie in [0, 1)"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::param("tol", "must be > 0"));
        }
        if self.max_iter == 0 {
            return Err(Error::param("max_iter", "must be >= 1"));
        }
        if !(self.blowup_factor > 0.0) {
            return Err(Error::param("blowup_factor", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmpState {
    pub beta_hat: Array1<f64>,
    /// Effective fields `m_i` of the last sweep.
    pub m: Array1<f64>,
    pub sigma: f64,
    pub s_theta: f64,
    /// Cavity residuals `y_μ − ŷ_μ^{∖μ}` of the last sweep.
    pub residual_cavity: Array1<f64>,
    pub iter: usize,
    pub converged: bool,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmpFixedPoint {
    pub state: AmpState,
    pub rho_hat: f64,
    pub e_train: f64,
    pub e_per_component: f64,
    pub e_gen_estimate: f64,
    /// Whether the solve used an all-zero tilt.
    pub noise_free: bool,
}

impl AmpFixedPoint {
    pub fn beta_hat(&self) -> &Array1<f64> {
        &self.state.beta_hat
    }

    pub fn converged(&self) -> bool {
        self.state.converged
    }

    pub fn diverged(&self) -> bool {
        self.state.diverged
    }
}

/// Starting point for [`run_amp_from`].
#[derive(Debug, Clone, PartialEq)]
pub struct AmpInit {
    pub beta_hat: Array1<f64>,
    pub s_theta: f64,
}

pub(crate) fn check_dims(d: &Dataset, eta: &NoiseVector) -> Result<()> {
    if eta.len() != d.p() {
        return Err(Error::DimensionMismatch(format!(
            "noise has length {}, dataset has p = {}",
            eta.len(),
            d.p()
        )));
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::param("lambda", format!("must be > 0, got {lambda}")));
    }
    Ok(())
}

/// Runs AMP from `β̂ = 0`, `s_θ = 0`.
pub fn run_amp(d: &Dataset, eta: &NoiseVector, lambda: f64, opts: &SolverOptions) -> Result<AmpFixedPoint> {
    let init = AmpInit {
        beta_hat: Array1::zeros(d.p()),
        s_theta: 0.0,
    };
    run_amp_from(d, eta, lambda, opts, &init)
}

pub fn run_amp_from(
    d: &Dataset,
    eta: &NoiseVector,
    lambda: f64,
    opts: &SolverOptions,
    init: &AmpInit,
) -> Result<AmpFixedPoint> {
    check_dims(d, eta)?;
    check_lambda(lambda)?;
    opts.validate()?;
    if init.beta_hat.len() != d.p() || !(init.s_theta >= 0.0) {
        return Err(Error::DimensionMismatch(
            "initial estimate must have length p and s_theta >= 0".into(),
        ));
    }
    let (n, p) = (d.n(), d.p());
    let alpha = n as f64 / p as f64;
    let x = d.x().as_slice().expect("standard layout");
    let y = d.y().as_slice().expect("contiguous");
    let eta_s = eta.eta.as_slice().expect("contiguous");
    let params = d.params();
    let blowup = opts.blowup_factor * (p as f64 * (params.rho * params.sigma_beta * params.sigma_beta + 1.0)).sqrt();
    let gamma = opts.damping;

    let mut beta = init.beta_hat.to_vec();
    let mut s_theta = init.s_theta;
    let mut s_theta_prev = init.s_theta;
    let mut r_prev = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut xb = vec![0.0; n];
    let mut m = vec![0.0; p];
    let mut beta_new = vec![0.0; p];

    let mut converged = false;
    let mut diverged = false;
    let mut last_gap = f64::INFINITY;
    let mut growing = 0usize;
    let mut iter = 0;

    while iter < opts.max_iter {
        iter += 1;
        matvec(x, p, &beta, &mut xb);
        let onsager = s_theta / (1.0 + s_theta_prev);
        for k in 0..n {
            r[k] = y[k] - xb[k] + onsager * r_prev[k];
        }
        let sigma = (1.0 + s_theta) / alpha;
        matvec_t(x, p, &r, &mut m);
        let mut active = 0usize;
        for i in 0..p {
            m[i] = beta[i] + m[i] / alpha;
            let b = soft_threshold(sigma, m[i] - eta_s[i] * sigma, lambda);
            active += (b != 0.0) as usize;
            beta_new[i] = b;
        }
        let s_theta_new = sigma * active as f64 / p as f64;

        let mut gap = 0.0f64;
        let mut finite = true;
        for i in 0..p {
            let next = (1.0 - gamma) * beta_new[i] + gamma * beta[i];
            finite &= next.is_finite();
            gap = gap.max((next - beta[i]).abs());
            beta[i] = next;
        }
        s_theta_prev = s_theta;
        s_theta = (1.0 - gamma) * s_theta_new + gamma * s_theta;
        std::mem::swap(&mut r, &mut r_prev);

        if !finite || !gap.is_finite() || norm_sq(&beta).sqrt() > blowup {
            diverged = true;
            break;
        }
        if gap < opts.tol {
            converged = true;
            break;
        }
        if gap > last_gap {
            growing += 1;
            if opts.stall_window > 0 && growing >= opts.stall_window {
                diverged = true;
                break;
            }
        } else {
            growing = 0;
        }
        last_gap = gap;
    }
    let sigma = (1.0 + s_theta) / alpha;
    // Damping never zeroes a coordinate exactly; report the thresholded iterate.
    if iter > 0 && beta_new.iter().all(|b| b.is_finite()) {
        beta.copy_from_slice(&beta_new);
    }

    matvec(x, p, &beta, &mut xb);
    let resid_sq: f64 = y.iter().zip(&xb).map(|(a, b)| (a - b) * (a - b)).sum();
    let active = beta.iter().filter(|&&b| b != 0.0).count();
    let beta0 = d.beta0();
    let err_sq: f64 = beta.iter().zip(beta0.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    let e_per_component = err_sq / p as f64;
    let sxi = params.sigma_xi;
    Ok(AmpFixedPoint {
        state: AmpState {
            beta_hat: Array1::from(beta),
            m: Array1::from(m),
            sigma,
            s_theta,
            residual_cavity: Array1::from(r_prev),
            iter,
            converged,
            diverged,
        },
        rho_hat: active as f64 / p as f64,
        e_train: resid_sq / n as f64,
        e_per_component,
        e_gen_estimate: e_per_component + sxi * sxi,
        noise_free: eta.eta.iter().all(|&e| e == 0.0),
    })
}

/// `β̂ + η` for a solution computed without objective noise.
pub fn apply_output_perturbation(fp: &AmpFixedPoint, eta: &NoiseVector) -> Result<Array1<f64>> {
    if !fp.noise_free {
        return Err(Error::param(
            "fp",
            "output perturbation expects a solution computed with zero tilt",
        ));
    }
    if eta.len() != fp.state.beta_hat.len() {
        return Err(Error::DimensionMismatch(format!(
            "noise has length {}, estimate has length {}",
            eta.len(),
            fp.state.beta_hat.len()
        )));
    }
    Ok(&fp.state.beta_hat + &eta.eta)
}

/// Errors of an arbitrary estimate on `d`: `(E_gen estimate, E_train)`.
pub fn estimate_errors(d: &Dataset, beta: &Array1<f64>) -> Result<(f64, f64)> {
    if beta.len() != d.p() {
        return Err(Error::DimensionMismatch("estimate length differs from p".into()));
    }
    let resid = d.y() - &d.x().dot(beta);
    let e_train = resid.dot(&resid) / d.n() as f64;
    let diff = beta - d.beta0();
    let sxi = d.params().sigma_xi;
    Ok((diff.dot(&diff) / d.p() as f64 + sxi * sxi, e_train))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySample {
    /// `Σ_i (β̂_i − β̂'_i)²`.
    pub value: f64,
    /// Both solves converged.
    pub valid: bool,
}

/// Solves on a dataset and its mutant with the same tilt and compares.
pub fn pairwise_sensitivity(
    d: &Dataset,
    d_mut: &Dataset,
    lambda: f64,
    eta: &NoiseVector,
    opts: &SolverOptions,
) -> Result<SensitivitySample> {
    if d.x().dim() != d_mut.x().dim() {
        return Err(Error::DimensionMismatch("datasets differ in shape".into()));
    }
    let a = run_amp(d, eta, lambda, opts)?;
    let b = run_amp(d_mut, eta, lambda, opts)?;
    let diff = a.beta_hat() - b.beta_hat();
    Ok(SensitivitySample {
        value: diff.dot(&diff),
        valid: a.converged() && b.converged(),
    })
}
