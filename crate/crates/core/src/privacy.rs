//! Component-wise on-average KL divergence, sensitivity and trade-off curves.

use serde::{Deserialize, Serialize};
use std::cell::Cell;

use crate::amp::{pairwise_sensitivity, SolverOptions};
use crate::error::{Error, Result};
use crate::model::{generate_dataset, make_one_point_mutant, Mechanism, ModelParams, NoiseVector};
use crate::quadrature::{try_gaussian_expectation, GaussHermite, QuadOptions};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::scalar_kernel::{active_probability, active_probability_derivs, se_kl, ScalarChannel};
use crate::state_evolution::{se_fixed_point, SeFixedPoint, SeOptions};
use crate::stats::MeanAccumulator;

/// Floor applied to `1 − r̂` in denominators.
pub const INACTIVE_FLOOR: f64 = 1e-12;

fn require_positive_noise(sigma_eta: f64) -> Result<()> {
    if sigma_eta == 0.0 {
        return Err(Error::InfiniteDivergence("privacy noise is zero"));
    }
    if !(sigma_eta.is_finite() && sigma_eta > 0.0) {
        return Err(Error::param("sigma_eta", format!("must be > 0, got {sigma_eta}")));
    }
    Ok(())
}

/// `E₀ ρ̂₀ / (α² σ_η²)`.
pub fn cwonavekl_output(e0: f64, rho_hat0: f64, alpha: f64, sigma_eta: f64) -> Result<f64> {
    require_positive_noise(sigma_eta)?;
    if !(alpha > 0.0) || !(e0 >= 0.0) || !(0.0..=1.0).contains(&rho_hat0) {
        return Err(Error::param("e0", "requires E0 >= 0, rho_hat0 in [0, 1], alpha > 0"));
    }
    Ok(e0 * rho_hat0 / (alpha * alpha * sigma_eta * sigma_eta))
}

/// `2 E ρ̂ / α²`, the asymptotic squared change of the estimate under a one-point mutation.
pub fn asymptotic_sensitivity(se: &SeFixedPoint) -> f64 {
    2.0 * se.e * se.rho_hat / (se.params.alpha * se.params.alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaCoupling {
    /// `Δ = E/(αn)`.
    pub delta: f64,
    /// `√(σ_z² − Δ)`.
    pub sigma_z_cavity: f64,
}

pub fn delta_coupling(se: &SeFixedPoint, n: usize) -> Result<DeltaCoupling> {
    if n == 0 {
        return Err(Error::param("n", "must be >= 1"));
    }
    let delta = se.e / (se.params.alpha * n as f64);
    let sz2 = se.sigma_z * se.sigma_z;
    if delta > sz2 * (1.0 + 1e-12) {
        return Err(Error::Invariant(format!(
            "coupling variance {delta} exceeds field variance {sz2}"
        )));
    }
    Ok(DeltaCoupling {
        delta,
        sigma_z_cavity: (sz2 - delta).max(0.0).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RFactor {
    pub value: f64,
    /// Integrand evaluations where `1 − r̂` fell below [`INACTIVE_FLOOR`].
    pub clamp_count: usize,
}

fn require_objective_channel(se: &SeFixedPoint) -> Result<f64> {
    let sigma_eta = se.sigma_eta();
    require_positive_noise(sigma_eta)?;
    if !se.stable {
        return Err(Error::NoStablePoint);
    }
    Ok(sigma_eta)
}

/// Expectation of `f(m̂)` over `m̂ = β⁰ + σ z` for the Bernoulli–Gaussian prior.
fn field_expectation<F: FnMut(f64) -> Result<f64>>(
    mut f: F,
    params: &ModelParams,
    sd: f64,
    breaks: &[f64],
    opts: &QuadOptions,
) -> Result<f64> {
    let rho = params.rho;
    let zero = if rho < 1.0 {
        try_gaussian_expectation(&mut f, 0.0, sd, breaks, opts)?
    } else {
        0.0
    };
    let signal = if rho > 0.0 {
        let total = (params.sigma_beta * params.sigma_beta + sd * sd).sqrt();
        try_gaussian_expectation(&mut f, 0.0, total, breaks, opts)?
    } else {
        0.0
    };
    Ok((1.0 - rho) * zero + rho * signal)
}

fn field_opts() -> QuadOptions {
    QuadOptions {
        abs_tol: 1e-15,
        rel_tol: 1e-13,
        max_subdivisions: 4000,
    }
}

/// `R = σ_η² E_m̂[ r̂'²/(1 − r̂) + r̂'' + r̂/(Σσ_η)² ]`.
pub fn r_factor(se: &SeFixedPoint) -> Result<RFactor> {
    let sigma_eta = require_objective_channel(se)?;
    let params = &se.params;
    let clamps = Cell::new(0usize);
    let c = params.lambda * se.sigma;
    let integrand = |m_hat: f64| -> Result<f64> {
        let ch = ScalarChannel {
            sigma: se.sigma,
            lambda: params.lambda,
            sigma_eta,
            m_hat,
        };
        let r = active_probability(&ch);
        let q = ch.inactive_probability();
        let (d1, d2) = active_probability_derivs(&ch)?;
        if q < INACTIVE_FLOOR {
            clamps.set(clamps.get() + 1);
        }
        let s = ch.spread();
        Ok(d1 * d1 / q.max(INACTIVE_FLOOR) + d2 + r / (s * s))
    };
    let mean = field_expectation(integrand, params, se.sigma_z, &[-c, c], &field_opts())?;
    Ok(RFactor {
        value: sigma_eta * sigma_eta * mean,
        clamp_count: clamps.get(),
    })
}

/// `E R / (α² σ_η²)`.
pub fn cwonavekl_objective(se: &SeFixedPoint, r: f64, sigma_eta: f64) -> Result<f64> {
    require_positive_noise(sigma_eta)?;
    let a = se.params.alpha;
    Ok(se.e * r / (a * a * sigma_eta * sigma_eta))
}

/// Direct evaluation of `p E[KL]` between the component laws under the two
/// coupled fields `σ_z^{∖Δ} z + √Δ ζ` and `σ_z^{∖Δ} z + √Δ ζ'`, with `p = n/α`.
///
/// The pair is rewritten as a midpoint `c ~ N(β⁰, σ_z² − Δ/2)` and an
/// independent difference `d ~ N(0, 2Δ)`; `d` is integrated by Gauss–Hermite
/// and `c` adaptively.
pub fn cwonavekl_numeric(se: &SeFixedPoint, n: usize) -> Result<f64> {
    let sigma_eta = require_objective_channel(se)?;
    let params = &se.params;
    let coupling = delta_coupling(se, n)?;
    let delta = coupling.delta;
    if delta == 0.0 {
        return Ok(0.0);
    }
    let gh = GaussHermite::new(40)?;
    let d_sd = (2.0 * delta).sqrt();
    let mid_sd = (se.sigma_z * se.sigma_z - 0.5 * delta).sqrt();
    let cthr = params.lambda * se.sigma;
    let kl_at = |mid: f64| -> Result<f64> {
        gh.try_expect(|z| {
            let d = d_sd * z;
            let ch = |m_hat| ScalarChannel {
                sigma: se.sigma,
                lambda: params.lambda,
                sigma_eta,
                m_hat,
            };
            se_kl(&ch(mid - 0.5 * d), &ch(mid + 0.5 * d))
        })
    };
    let mean = field_expectation(kl_at, params, mid_sd, &[-cthr, cthr], &field_opts())?;
    let p = n as f64 / params.alpha;
    Ok(p * mean)
}

/// Mean shift `√(2ε/p)` of two unit Gaussians in `p` dimensions at KL `ε`.
pub fn gaussian_reference_mu(p: usize, epsilon: f64) -> Result<f64> {
    if p == 0 {
        return Err(Error::param("p", "must be >= 1"));
    }
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::param("epsilon", "must be finite and >= 0"));
    }
    Ok((2.0 * epsilon / p as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub sigma_eta: f64,
    pub e_gen: f64,
    pub cwonavekl: f64,
    pub distance_to_origin: f64,
    pub rho_hat: f64,
    pub stable: bool,
}

impl TradeoffPoint {
    pub fn new(sigma_eta: f64, e_gen: f64, cwonavekl: f64, rho_hat: f64, stable: bool) -> Self {
        Self {
            sigma_eta,
            e_gen,
            cwonavekl,
            distance_to_origin: e_gen.hypot(cwonavekl),
            rho_hat,
            stable,
        }
    }

    /// `√((w_e E_gen)² + (w_k KL)²)`.
    pub fn weighted_distance(&self, w_e: f64, w_k: f64) -> f64 {
        (w_e * self.e_gen).hypot(w_k * self.cwonavekl)
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::param("sigma_eta grid", "must not be empty"));
    }
    if grid.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(Error::param("sigma_eta grid", "values must be finite and > 0"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("sigma_eta grid", "must be strictly increasing"));
    }
    Ok(())
}

/// One trade-off point per grid value. Points whose fixed point is unstable
/// are kept with `stable = false` and non-finite metrics replaced by `NaN`.
pub fn tradeoff_curve(
    base: &ModelParams,
    grid: &[f64],
    mechanism: Mechanism,
    opts: &SeOptions,
) -> Result<Vec<TradeoffPoint>> {
    check_grid(grid)?;
    let base = ModelParams { mechanism, ..*base };
    match mechanism {
        Mechanism::Output => {
            let fp0 = se_fixed_point(&ModelParams { sigma_eta: 0.0, ..base }, opts)?;
            grid.iter()
                .map(|&s| {
                    let kl = cwonavekl_output(fp0.e, fp0.rho_hat.clamp(0.0, 1.0), base.alpha, s)?;
                    Ok(TradeoffPoint::new(s, fp0.e_gen + s * s, kl, fp0.rho_hat, fp0.stable))
                })
                .collect()
        }
        Mechanism::Objective => grid
            .iter()
            .map(|&s| {
                let fp = se_fixed_point(&ModelParams { sigma_eta: s, ..base }, opts)?;
                if !fp.stable {
                    return Ok(TradeoffPoint::new(s, fp.e_gen, f64::NAN, fp.rho_hat, false));
                }
                let r = r_factor(&fp)?;
                let kl = cwonavekl_objective(&fp, r.value, s)?;
                Ok(TradeoffPoint::new(s, fp.e_gen, kl, fp.rho_hat, true))
            })
            .collect(),
    }
}

/// Stable point closest to the origin; ties go to the smaller noise.
pub fn optimal_noise(curve: &[TradeoffPoint]) -> Result<TradeoffPoint> {
    optimal_noise_weighted(curve, 1.0, 1.0)
}

pub fn optimal_noise_weighted(curve: &[TradeoffPoint], w_e: f64, w_k: f64) -> Result<TradeoffPoint> {
    let mut best: Option<(f64, TradeoffPoint)> = None;
    for pt in curve.iter().filter(|p| p.stable) {
        let d = pt.weighted_distance(w_e, w_k);
        if !d.is_finite() {
            continue;
        }
        let better = match &best {
            None => true,
            Some((bd, bp)) => d < *bd || (d == *bd && pt.sigma_eta < bp.sigma_eta),
        };
        if better {
            best = Some((d, *pt));
        }
    }
    best.map(|(_, p)| p).ok_or(Error::NoStablePoint)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityEstimate {
    pub mean: f64,
    pub stderr: Option<f64>,
    pub valid_pairs: usize,
    pub total_pairs: usize,
}

/// Monte Carlo mean of `Σ_i (β̂_i − β̂'_i)²` over independent one-point-mutant
/// pairs without privacy noise. Pair `k` uses its own dataset and mutant streams.
pub fn sensitivity_monte_carlo(
    params: &ModelParams,
    pairs: usize,
    opts: &SolverOptions,
    seed: u64,
) -> Result<SensitivityEstimate> {
    params.validate()?;
    let eta = NoiseVector::zeros(params.p);
    let mut acc = MeanAccumulator::new();
    for k in 0..pairs as u64 {
        let data_seed = derive_seed(seed, Stream::Trial, &[k]);
        let d = generate_dataset(params, data_seed)?;
        let mu = {
            use rand::Rng;
            stream_rng(seed, Stream::MutantRow, &[k]).gen_range(0..d.n())
        };
        let mutant = make_one_point_mutant(&d, mu, derive_seed(seed, Stream::MutantRow, &[k, 1]))?;
        let s = pairwise_sensitivity(&d, &mutant, params.lambda, &eta, opts)?;
        if s.valid {
            acc.push(s.value);
        }
    }
    Ok(SensitivityEstimate {
        mean: acc.mean(),
        stderr: acc.stderr(),
        valid_pairs: acc.count(),
        total_pairs: pairs,
    })
}

/// Privacy and accuracy summary at one experiment point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub mechanism: Mechanism,
    pub sigma_eta: f64,
    pub cwonavekl_analytic: f64,
    pub cwonavekl_numeric: Option<f64>,
    pub r_factor: Option<f64>,
    pub r_clamp_count: usize,
    pub sensitivity_mc: Option<SensitivityEstimate>,
    pub e_gen: f64,
    pub se: SeFixedPoint,
}

impl PrivacyReport {
    /// Per-component divergence (the p-summed value divided by `p = n/α`).
    pub fn per_component(&self, p: usize) -> f64 {
        self.cwonavekl_analytic / p as f64
    }
}

/// Builds a report; `numeric_n` additionally runs the direct quadrature for
/// the objective mechanism at that sample count.
pub fn privacy_report(params: &ModelParams, opts: &SeOptions, numeric_n: Option<usize>) -> Result<PrivacyReport> {
    params.validate()?;
    require_positive_noise(params.sigma_eta)?;
    match params.mechanism {
        Mechanism::Output => {
            let fp0 = se_fixed_point(params, opts)?;
            if !fp0.stable {
                return Err(Error::NoStablePoint);
            }
            Ok(PrivacyReport {
                mechanism: Mechanism::Output,
                sigma_eta: params.sigma_eta,
                cwonavekl_analytic: cwonavekl_output(fp0.e, fp0.rho_hat, params.alpha, params.sigma_eta)?,
                cwonavekl_numeric: None,
                r_factor: None,
                r_clamp_count: 0,
                sensitivity_mc: None,
                e_gen: fp0.e_gen + params.sigma_eta * params.sigma_eta,
                se: fp0,
            })
        }
        Mechanism::Objective => {
            let fp = se_fixed_point(params, opts)?;
            let r = r_factor(&fp)?;
            let numeric = numeric_n.map(|n| cwonavekl_numeric(&fp, n)).transpose()?;
            Ok(PrivacyReport {
                mechanism: Mechanism::Objective,
                sigma_eta: params.sigma_eta,
                cwonavekl_analytic: cwonavekl_objective(&fp, r.value, params.sigma_eta)?,
                cwonavekl_numeric: numeric,
                r_factor: Some(r.value),
                r_clamp_count: r.clamp_count,
                sensitivity_mc: None,
                e_gen: fp.e_gen,
                se: fp,
            })
        }
    }
}
