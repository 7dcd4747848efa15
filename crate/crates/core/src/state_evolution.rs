//! Scalar state evolution and the replica-symmetric fixed point.
//!
//! The recursion tracks `E` (per-component error plus `σ_ξ²`) and `V` (rescaled
//! local variance) through `Σ = (1 + V)/α` and `σ_z² = E/α`. Gaussian privacy
//! noise enters the threshold field with variance `σ_z² + Σ²σ_η²`, so the fast
//! path evaluates both signal branches in closed form. The nested path keeps
//! the `β⁰` and `η` integrals explicit and exists for validation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::quadrature::{try_gaussian_expectation, QuadOptions};
use crate::special::{erf, lower_moments, norm_interval, norm_pdf, norm_sf, upper_moments};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeOptions {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Iteration stops and reports instability once `V` exceeds this.
    pub v_cap: f64,
}

impl Default for SeOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tol: 1e-10,
            max_iter: 10_000,
            v_cap: 1e8,
        }
    }
}

impl SeOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::param("damping", "must lie in [0, 1)"));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::param("tol", "tolerance and iteration cap must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeState {
    pub e: f64,
    pub v: f64,
}

impl SeState {
    pub fn initial(params: &ModelParams) -> Self {
        Self {
            e: params.null_error(),
            v: 0.0,
        }
    }

    pub fn sigma(&self, alpha: f64) -> f64 {
        (1.0 + self.v) / alpha
    }

    pub fn sigma_z(&self, alpha: f64) -> f64 {
        (self.e / alpha).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeFixedPoint {
    pub e: f64,
    pub v: f64,
    pub sigma: f64,
    pub sigma_z: f64,
    pub rho_hat: f64,
    pub e_gen: f64,
    pub e_train: f64,
    pub stability_margin: f64,
    pub stable: bool,
    pub iterations: usize,
    pub converged: bool,
    pub params: ModelParams,
}

impl SeFixedPoint {
    /// `|V(α − ρ̂) − ρ̂|`.
    pub fn sparsity_identity_residual(&self) -> f64 {
        (self.v * (self.params.alpha - self.rho_hat) - self.rho_hat).abs()
    }

    /// Std of the privacy noise in the threshold field.
    pub fn sigma_eta(&self) -> f64 {
        self.params.objective_sigma_eta()
    }
}

/// Closed-form branch expectations for a threshold field of std `s`.
struct Branch {
    mse: f64,
    active: f64,
}

/// `β⁰ = 0`: field `N(0, s²)`, error `soft(h)²`.
fn zero_branch(s: f64, theta: f64) -> Branch {
    if s == 0.0 {
        return Branch { mse: 0.0, active: 0.0 };
    }
    let t = theta / s;
    let [m0, m1, m2] = upper_moments(t);
    Branch {
        mse: 2.0 * (s * s * m2 - 2.0 * theta * s * m1 + theta * theta * m0),
        active: 2.0 * m0,
    }
}

/// `β⁰ ~ N(0, σ_β²)`: field `N(0, σ_β² + s²)`, error `(β⁰ − soft(h))²`.
fn gaussian_branch(sigma_beta: f64, s: f64, theta: f64) -> Branch {
    let sb2 = sigma_beta * sigma_beta;
    let t2 = sb2 + s * s;
    if t2 == 0.0 {
        return Branch { mse: 0.0, active: 0.0 };
    }
    let tt = t2.sqrt();
    let kappa = sb2 / t2;
    let g = s * s / t2;
    let v = sb2 * s * s / t2;
    let t = theta / tt;
    let [m0, m1, m2] = upper_moments(t);
    let inner = erf(t / std::f64::consts::SQRT_2) - 2.0 * t * norm_pdf(t);
    let mse = v + kappa * kappa * t2 * inner + 2.0 * (theta * theta * m0 - 2.0 * theta * g * tt * m1 + g * g * t2 * m2);
    Branch { mse, active: 2.0 * m0 }
}

struct SeMap {
    e_next: f64,
    rho_hat: f64,
}

fn check_state(state: &SeState) -> Result<()> {
    if !(state.e.is_finite() && state.e >= 0.0 && state.v.is_finite() && state.v >= 0.0) {
        return Err(Error::param(
            "state",
            format!("E and V must be finite and >= 0, got ({}, {})", state.e, state.v),
        ));
    }
    Ok(())
}

fn se_map(state: &SeState, params: &ModelParams) -> SeMap {
    let alpha = params.alpha;
    let sigma = state.sigma(alpha);
    let se = params.objective_sigma_eta();
    let s = (state.e / alpha + sigma * sigma * se * se).sqrt();
    let theta = params.lambda * sigma;
    let rho = params.rho;
    let z = zero_branch(s, theta);
    let g = if rho > 0.0 {
        gaussian_branch(params.sigma_beta, s, theta)
    } else {
        Branch { mse: 0.0, active: 0.0 }
    };
    SeMap {
        e_next: (1.0 - rho) * z.mse + rho * g.mse + params.sigma_xi * params.sigma_xi,
        rho_hat: (1.0 - rho) * z.active + rho * g.active,
    }
}

/// One undamped application of the recursion (closed-form fast path).
pub fn se_update(state: &SeState, params: &ModelParams) -> Result<SeState> {
    params.validate()?;
    check_state(state)?;
    let m = se_map(state, params);
    Ok(SeState {
        e: m.e_next,
        v: state.sigma(params.alpha) * m.rho_hat,
    })
}

/// Asymptotic active fraction at `state`.
pub fn se_rho_hat(state: &SeState, params: &ModelParams) -> f64 {
    se_map(state, params).rho_hat
}

/// Per-`(β⁰, η)` error and activity with the `z` integral in closed form.
fn conditional_on_signal_and_noise(b: f64, e: f64, sigma: f64, sz: f64, theta: f64) -> (f64, f64) {
    let mu = b - e * sigma;
    let big_a = e * sigma + theta;
    let big_b = e * sigma - theta;
    if sz == 0.0 {
        return if mu > theta {
            (big_a * big_a, 1.0)
        } else if mu < -theta {
            (big_b * big_b, 1.0)
        } else {
            (b * b, 0.0)
        };
    }
    let a = (theta - mu) / sz;
    let bb = (-theta - mu) / sz;
    let [m0, m1, m2] = upper_moments(a);
    let [n0, n1, n2] = lower_moments(bb);
    let err = big_a * big_a * m0 - 2.0 * big_a * sz * m1 + sz * sz * m2 + big_b * big_b * n0 - 2.0 * big_b * sz * n1
        + sz * sz * n2
        + b * b * norm_interval(bb, a);
    (err, m0 + n0)
}

/// One undamped update with explicit quadrature over `β⁰` and `η`.
pub fn se_update_nested(state: &SeState, params: &ModelParams, opts: &QuadOptions) -> Result<SeState> {
    params.validate()?;
    check_state(state)?;
    let alpha = params.alpha;
    let sigma = state.sigma(alpha);
    let sz = state.sigma_z(alpha);
    let theta = params.lambda * sigma;
    let se = params.objective_sigma_eta();

    let over_noise = |b: f64, want_active: bool| -> Result<f64> {
        let pick = |e: f64| {
            let (err, act) = conditional_on_signal_and_noise(b, e, sigma, sz, theta);
            Ok(if want_active { act } else { err })
        };
        try_gaussian_expectation(pick, 0.0, se, &[], opts)
    };
    let zero_err = over_noise(0.0, false)?;
    let zero_act = over_noise(0.0, true)?;
    let (sig_err, sig_act) = if params.rho > 0.0 {
        (
            try_gaussian_expectation(|b| over_noise(b, false), 0.0, params.sigma_beta, &[], opts)?,
            try_gaussian_expectation(|b| over_noise(b, true), 0.0, params.sigma_beta, &[], opts)?,
        )
    } else {
        (0.0, 0.0)
    };
    let rho = params.rho;
    let rho_hat = (1.0 - rho) * zero_act + rho * sig_act;
    Ok(SeState {
        e: (1.0 - rho) * zero_err + rho * sig_err + params.sigma_xi * params.sigma_xi,
        v: sigma * rho_hat,
    })
}

/// Damped iteration from `E = ρσ_β² + σ_ξ²`, `V = 0`.
pub fn se_fixed_point(params: &ModelParams, opts: &SeOptions) -> Result<SeFixedPoint> {
    params.validate()?;
    opts.validate()?;
    let alpha = params.alpha;
    let gamma = opts.damping;
    let mut state = SeState::initial(params);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=opts.max_iter {
        iterations = it;
        let m = se_map(&state, params);
        let target_v = state.sigma(alpha) * m.rho_hat;
        let next = SeState {
            e: (1.0 - gamma) * m.e_next + gamma * state.e,
            v: (1.0 - gamma) * target_v + gamma * state.v,
        };
        if !(next.e.is_finite() && next.v.is_finite()) || next.v > opts.v_cap {
            state = next;
            break;
        }
        let change = (next.e - state.e).abs() + (next.v - state.v).abs();
        state = next;
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    let rho_hat = if state.e.is_finite() && state.v.is_finite() {
        se_rho_hat(&state, params)
    } else {
        f64::NAN
    };
    let margin = rho_hat / alpha;
    Ok(SeFixedPoint {
        e: state.e,
        v: state.v,
        sigma: state.sigma(alpha),
        sigma_z: state.sigma_z(alpha),
        rho_hat,
        e_gen: state.e,
        e_train: state.e / ((1.0 + state.v) * (1.0 + state.v)),
        stability_margin: margin,
        stable: converged && margin < 1.0,
        iterations,
        converged,
        params: *params,
    })
}

/// `(E_gen, E_train)` under output perturbation from the noiseless fixed point.
pub fn output_perturbation_asymptotics(fp0: &SeFixedPoint, sigma_eta: f64) -> Result<(f64, f64)> {
    if fp0.sigma_eta() != 0.0 {
        return Err(Error::param("fp0", "must be computed without objective noise"));
    }
    if !(sigma_eta.is_finite() && sigma_eta >= 0.0) {
        return Err(Error::param("sigma_eta", "must be finite and >= 0"));
    }
    let shift = sigma_eta * sigma_eta;
    Ok((fp0.e_gen + shift, fp0.e_train + shift))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicaFixedPoint {
    pub q: f64,
    pub chi: f64,
    pub m: f64,
    pub theta_hat: f64,
    pub chi_hat: f64,
    pub mu_hat: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl ReplicaFixedPoint {
    /// `Q − 2m + ρσ_β² + σ_ξ²`.
    pub fn error(&self, params: &ModelParams) -> f64 {
        self.q - 2.0 * self.m + params.null_error()
    }
}

#[derive(Debug, Clone, Copy)]
struct Conjugates {
    theta_hat: f64,
    chi_hat: f64,
    mu_hat: f64,
}

fn conjugates(q: f64, chi: f64, m: f64, params: &ModelParams) -> Conjugates {
    let a = params.alpha;
    let theta_hat = a / (1.0 + chi);
    Conjugates {
        theta_hat,
        chi_hat: a * (q - 2.0 * m + params.null_error()) / ((1.0 + chi) * (1.0 + chi)),
        mu_hat: theta_hat,
    }
}

/// `(E[soft(h)²], E[soft(h)], P(|h| > λ))` for `h ~ N(c, s²)` and threshold `λ`.
fn soft_moments(c: f64, s: f64, lambda: f64) -> [f64; 3] {
    if s == 0.0 {
        let v = if c > lambda {
            c - lambda
        } else if c < -lambda {
            c + lambda
        } else {
            0.0
        };
        return [v * v, v, (v != 0.0) as u8 as f64];
    }
    let a = (lambda - c) / s;
    let b = (-lambda - c) / s;
    let [m0, m1, m2] = upper_moments(a);
    let [n0, n1, n2] = lower_moments(b);
    let (dp, dn) = (c - lambda, c + lambda);
    let sq = dp * dp * m0 + 2.0 * dp * s * m1 + s * s * m2 + dn * dn * n0 + 2.0 * dn * s * n1 + s * s * n2;
    let lin = dp * m0 + s * m1 + dn * n0 + s * n1;
    [sq, lin, m0 + n0]
}

fn replica_map(
    q: f64,
    chi: f64,
    m: f64,
    params: &ModelParams,
    quad: &QuadOptions,
) -> Result<(f64, f64, f64, Conjugates)> {
    let cj = conjugates(q, chi, m, params);
    let se = params.objective_sigma_eta();
    let s = (cj.chi_hat + se * se).sqrt();
    let lam = params.lambda;
    let rho = params.rho;
    let [z_sq, _, z_act] = soft_moments(0.0, s, lam);
    let (g_sq, g_lin, g_act) = if rho > 0.0 && params.sigma_beta > 0.0 {
        let sb = params.sigma_beta;
        let pick = |k: usize, weight_by_b: bool| {
            try_gaussian_expectation(
                |b| {
                    let v = soft_moments(cj.mu_hat * b, s, lam)[k];
                    Ok(if weight_by_b { b * v } else { v })
                },
                0.0,
                sb,
                &[],
                quad,
            )
        };
        (pick(0, false)?, pick(1, true)?, pick(2, false)?)
    } else {
        (0.0, 0.0, 0.0)
    };
    let th = cj.theta_hat;
    let q_next = ((1.0 - rho) * z_sq + rho * g_sq) / (th * th);
    let m_next = rho * g_lin / th;
    let chi_next = ((1.0 - rho) * z_act + rho * g_act) / th;
    Ok((q_next, chi_next, m_next, cj))
}

/// Damped iteration of the replica-symmetric saddle-point equations.
pub fn replica_fixed_point(params: &ModelParams, opts: &SeOptions) -> Result<ReplicaFixedPoint> {
    params.validate()?;
    opts.validate()?;
    let quad = QuadOptions {
        abs_tol: 1e-14,
        rel_tol: 1e-13,
        max_subdivisions: 2000,
    };
    let gamma = opts.damping;
    let (mut q, mut chi, mut m) = (0.0, 0.0, 0.0);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=opts.max_iter {
        iterations = it;
        let (qn, cn, mn, _) = replica_map(q, chi, m, params, &quad)?;
        let qd = (1.0 - gamma) * qn + gamma * q;
        let cd = (1.0 - gamma) * cn + gamma * chi;
        let md = (1.0 - gamma) * mn + gamma * m;
        let change = (qd - q).abs() + (cd - chi).abs() + (md - m).abs();
        q = qd;
        chi = cd;
        m = md;
        if !(q.is_finite() && chi.is_finite() && m.is_finite()) || chi > opts.v_cap {
            break;
        }
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    let cj = conjugates(q, chi, m, params);
    Ok(ReplicaFixedPoint {
        q,
        chi,
        m,
        theta_hat: cj.theta_hat,
        chi_hat: cj.chi_hat,
        mu_hat: cj.mu_hat,
        iterations,
        converged,
    })
}

/// Probability that a field `N(mean, sd²)` exceeds `theta` in magnitude.
pub fn exceed_probability(mean: f64, sd: f64, theta: f64) -> f64 {
    if sd == 0.0 {
        return (mean.abs() > theta) as u8 as f64;
    }
    norm_sf((theta - mean) / sd) + norm_sf((theta + mean) / sd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Mechanism;

    fn base() -> ModelParams {
        ModelParams {
            alpha: 0.5,
            rho: 0.1,
            sigma_beta: 1.0,
            sigma_xi: 0.1,
            lambda: 1.0,
            sigma_eta: 0.0,
            mechanism: Mechanism::Objective,
            p: 1000,
            seed: 0,
        }
    }

    #[test]
    fn huge_penalty_keeps_null_estimate() {
        let params = ModelParams { lambda: 1e6, ..base() };
        let next = se_update(&SeState::initial(&params), &params).unwrap();
        assert!((next.e - 0.11).abs() < 1e-15);
        assert_eq!(next.v, 0.0);
        let fp = se_fixed_point(&params, &SeOptions::default()).unwrap();
        assert!((fp.e - 0.11).abs() < 1e-15);
        assert_eq!(fp.v, 0.0);
        assert_eq!(fp.rho_hat, 0.0);
        assert!(fp.stable);
    }

    #[test]
    fn vanishing_penalty_activates_everything() {
        let params = base();
        let state = SeState { e: 0.2, v: 0.3 };
        let tiny = ModelParams {
            lambda: 1e-12,
            ..params
        };
        assert!((se_rho_hat(&state, &tiny) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn fixed_point_is_self_consistent() {
        let params = base();
        let fp = se_fixed_point(&params, &SeOptions::default()).unwrap();
        assert!(fp.converged && fp.stable);
        assert!(fp.sparsity_identity_residual() < 1e-9);
        let again = se_update(&SeState { e: fp.e, v: fp.v }, &params).unwrap();
        assert!((again.e - fp.e).abs() + (again.v - fp.v).abs() < 1e-9);
        assert!((fp.e_gen / fp.e_train - (1.0 + fp.v).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn output_mechanism_ignores_noise_in_recursion() {
        let params = ModelParams {
            sigma_eta: 0.3,
            mechanism: Mechanism::Output,
            ..base()
        };
        let noiseless = se_fixed_point(&base(), &SeOptions::default()).unwrap();
        let fp = se_fixed_point(&params, &SeOptions::default()).unwrap();
        assert_eq!(fp.e, noiseless.e);
        let (g, t) = output_perturbation_asymptotics(&noiseless, 0.3).unwrap();
        assert!((g - noiseless.e_gen - 0.09).abs() < 1e-15);
        assert!(((g - t) - (noiseless.e_gen - noiseless.e_train)).abs() < 1e-15);
        let noisy = se_fixed_point(
            &ModelParams {
                sigma_eta: 0.3,
                ..base()
            },
            &SeOptions::default(),
        )
        .unwrap();
        assert!(output_perturbation_asymptotics(&noisy, 0.1).is_err());
    }

    #[test]
    fn closed_form_matches_nested_quadrature() {
        let params = ModelParams {
            sigma_eta: 0.4,
            ..base()
        };
        let state = SeState { e: 0.15, v: 0.4 };
        let fast = se_update(&state, &params).unwrap();
        let slow = se_update_nested(&state, &params, &QuadOptions::tight()).unwrap();
        assert!((fast.e - slow.e).abs() < 1e-10, "{} {}", fast.e, slow.e);
        assert!((fast.v - slow.v).abs() < 1e-10, "{} {}", fast.v, slow.v);
    }

    #[test]
    fn replica_agrees_with_state_evolution() {
        let params = ModelParams {
            sigma_eta: 0.2,
            lambda: 0.8,
            ..base()
        };
        let fp = se_fixed_point(&params, &SeOptions::default()).unwrap();
        let rs = replica_fixed_point(&params, &SeOptions::default()).unwrap();
        assert!(rs.converged);
        assert!((rs.chi - fp.v).abs() < 1e-7, "{} {}", rs.chi, fp.v);
        assert!((rs.error(&params) - fp.e).abs() < 1e-7);
        assert_eq!(rs.theta_hat, params.alpha / (1.0 + rs.chi));
        assert_eq!(rs.mu_hat, rs.theta_hat);
    }

    #[test]
    fn replica_with_huge_penalty_is_null() {
        let params = ModelParams { lambda: 1e6, ..base() };
        let rs = replica_fixed_point(&params, &SeOptions::default()).unwrap();
        assert_eq!((rs.q, rs.chi, rs.m), (0.0, 0.0, 0.0));
    }

    #[test]
    fn exceed_probability_limits() {
        assert_eq!(exceed_probability(2.0, 0.0, 1.0), 1.0);
        assert!((exceed_probability(0.0, 1.0, 0.0) - 1.0).abs() < 1e-15);
    }
}
