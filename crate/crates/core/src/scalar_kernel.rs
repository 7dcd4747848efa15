//! Scalar decoupled channel: soft threshold, active probability, the law of
//! a single estimator component over the privacy noise, and KL primitives.
//!
//! For a channel with scale `Σ`, penalty `λ`, noise std `σ_η` and field `m̂`,
//! the component is `M(Σ, m̂ − ηΣ)` with `η ~ N(0, σ_η²)`. Writing
//! `c = λΣ` and `s = Σσ_η`, its law is an atom of weight `1 − r̂` at zero plus
//! two Gaussian pieces `N(m̂ − c, s²)` restricted to `β > 0` and
//! `N(m̂ + c, s²)` restricted to `β < 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{lower_moments, norm_interval, norm_pdf, norm_sf, upper_moments};

/// Soft threshold `(h − sgn(h) λΣ) 1{|h| > λΣ}`; ties map to zero.
pub fn soft_threshold(sigma: f64, h: f64, lambda: f64) -> f64 {
    let t = lambda * sigma;
    if h > t {
        h - t
    } else if h < -t {
        h + t
    } else {
        0.0
    }
}

/// `Σ 1{|h| > λΣ}`.
pub fn local_variance(sigma: f64, h: f64, lambda: f64) -> f64 {
    if h.abs() > lambda * sigma {
        sigma
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarChannel {
    pub sigma: f64,
    pub lambda: f64,
    pub sigma_eta: f64,
    pub m_hat: f64,
}

impl ScalarChannel {
    pub fn new(sigma: f64, lambda: f64, sigma_eta: f64, m_hat: f64) -> Result<Self> {
        let ch = Self {
            sigma,
            lambda,
            sigma_eta,
            m_hat,
        };
        ch.validate()?;
        Ok(ch)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::param("sigma", format!("must be > 0, got {}", self.sigma)));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::param("lambda", format!("must be > 0, got {}", self.lambda)));
        }
        if !(self.sigma_eta.is_finite() && self.sigma_eta >= 0.0) {
            return Err(Error::param(
                "sigma_eta",
                format!("must be finite and >= 0, got {}", self.sigma_eta),
            ));
        }
        if self.m_hat.is_nan() {
            return Err(Error::param("m_hat", "must not be NaN"));
        }
        Ok(())
    }

    /// Threshold `λΣ`.
    pub fn threshold(&self) -> f64 {
        self.lambda * self.sigma
    }

    /// Spread `Σσ_η` of the continuous pieces.
    pub fn spread(&self) -> f64 {
        self.sigma * self.sigma_eta
    }

    fn standardized(&self) -> (f64, f64, f64) {
        let s = self.spread();
        let c = self.threshold();
        ((c - self.m_hat) / s, (c + self.m_hat) / s, s)
    }

    /// `1 − r̂`, accurate when `r̂` is close to one.
    pub fn inactive_probability(&self) -> f64 {
        if self.sigma_eta == 0.0 {
            return if self.m_hat.abs() > self.threshold() { 0.0 } else { 1.0 };
        }
        let (u, v, _) = self.standardized();
        norm_interval(-v, u)
    }
}

/// `r̂ = P_η(|m̂ − ηΣ| > λΣ)`; for `σ_η = 0` the indicator `1{|m̂| > λΣ}`.
pub fn active_probability(ch: &ScalarChannel) -> f64 {
    if ch.sigma_eta == 0.0 {
        return if ch.m_hat.abs() > ch.threshold() { 1.0 } else { 0.0 };
    }
    let (u, v, _) = ch.standardized();
    let r = norm_sf(u) + norm_sf(v);
    r.min(1.0)
}

/// First and second derivatives of `r̂` with respect to `m̂`.
pub fn active_probability_derivs(ch: &ScalarChannel) -> Result<(f64, f64)> {
    if ch.sigma_eta == 0.0 {
        return Err(Error::param(
            "sigma_eta",
            "derivatives of the indicator limit are not defined",
        ));
    }
    let (u, v, s) = ch.standardized();
    let (pu, pv) = (norm_pdf(u), norm_pdf(v));
    Ok(((pu - pv) / s, (u * pu + v * pv) / (s * s)))
}

/// Law of one estimator component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SeDensity {
    /// Atom `atom_weight` at zero plus a continuous part with value `density` at the query point.
    Continuous { atom_weight: f64, density: f64 },
    /// `σ_η = 0`: all mass at `location`.
    PointMass { location: f64 },
}

/// Evaluates the component law at `beta`. The continuous part at `beta = 0`
/// is reported as zero; the atom carries that point.
pub fn se_density(ch: &ScalarChannel, beta: f64) -> SeDensity {
    if ch.sigma_eta == 0.0 {
        return SeDensity::PointMass {
            location: soft_threshold(ch.sigma, ch.m_hat, ch.lambda),
        };
    }
    let s = ch.spread();
    let c = ch.threshold();
    let density = if beta > 0.0 {
        norm_pdf((beta - ch.m_hat + c) / s) / s
    } else if beta < 0.0 {
        norm_pdf((beta - ch.m_hat - c) / s) / s
    } else {
        0.0
    };
    SeDensity::Continuous {
        atom_weight: ch.inactive_probability(),
        density,
    }
}

/// Continuous density of the component law (0 at `beta = 0` and for `σ_η = 0`).
pub fn continuous_density(ch: &ScalarChannel, beta: f64) -> f64 {
    match se_density(ch, beta) {
        SeDensity::Continuous { density, .. } => density,
        SeDensity::PointMass { .. } => 0.0,
    }
}

struct Branches {
    atom: f64,
    s: f64,
    /// Location of the positive piece `m̂ − c` and the negative piece `m̂ + c`.
    mu_pos: f64,
    mu_neg: f64,
}

fn branches(ch: &ScalarChannel) -> Branches {
    Branches {
        atom: ch.inactive_probability(),
        s: ch.spread(),
        mu_pos: ch.m_hat - ch.threshold(),
        mu_neg: ch.m_hat + ch.threshold(),
    }
}

fn require_noisy(ch1: &ScalarChannel, ch2: &ScalarChannel) -> Result<()> {
    ch1.validate()?;
    ch2.validate()?;
    if ch1.sigma_eta == 0.0 || ch2.sigma_eta == 0.0 {
        return Err(Error::InfiniteDivergence("point-mass laws"));
    }
    Ok(())
}

/// Cross entropy `∫ P₁ ln P₂` relative to the measure `δ₀ + dβ`.
///
/// Returns `Error::InfiniteDivergence` when `P₂` has no atom but `P₁` does.
pub fn se_cross_entropy(ch1: &ScalarChannel, ch2: &ScalarChannel) -> Result<f64> {
    require_noisy(ch1, ch2)?;
    let b1 = branches(ch1);
    let b2 = branches(ch2);
    let atom = if b1.atom == 0.0 {
        0.0
    } else if b2.atom == 0.0 {
        return Err(Error::InfiniteDivergence("reference law has no atom at zero"));
    } else {
        b1.atom * b2.atom.ln()
    };
    let log_norm = -(b2.s * (2.0 * std::f64::consts::PI).sqrt()).ln();
    let s1 = b1.s;
    let inv = 1.0 / (2.0 * b2.s * b2.s);
    // positive piece: beta = mu1 + s1 w over w > -mu1/s1
    let [m0, m1, m2] = upper_moments(-b1.mu_pos / s1);
    let d = b1.mu_pos - b2.mu_pos;
    let pos = log_norm * m0 - inv * (s1 * s1 * m2 + 2.0 * s1 * d * m1 + d * d * m0);
    let [n0, n1, n2] = lower_moments(-b1.mu_neg / s1);
    let d = b1.mu_neg - b2.mu_neg;
    let neg = log_norm * n0 - inv * (s1 * s1 * n2 + 2.0 * s1 * d * n1 + d * d * n0);
    Ok(atom + pos + neg)
}

/// `KL(P₁ ‖ P₂)`. Equal spreads use a cancellation-free direct form.
pub fn se_kl(ch1: &ScalarChannel, ch2: &ScalarChannel) -> Result<f64> {
    require_noisy(ch1, ch2)?;
    let b1 = branches(ch1);
    let b2 = branches(ch2);
    if b1.s != b2.s {
        let kl = se_cross_entropy(ch1, ch1)? - se_cross_entropy(ch1, ch2)?;
        return Ok(kl.max(0.0));
    }
    let atom = if b1.atom == 0.0 {
        0.0
    } else if b2.atom == 0.0 {
        return Err(Error::InfiniteDivergence("reference law has no atom at zero"));
    } else {
        b1.atom * ((b1.atom - b2.atom) / b2.atom).ln_1p()
    };
    let s = b1.s;
    let [m0, m1, _] = upper_moments(-b1.mu_pos / s);
    let d = b1.mu_pos - b2.mu_pos;
    let pos = (2.0 * d * s * m1 + d * d * m0) / (2.0 * s * s);
    let [n0, n1, _] = lower_moments(-b1.mu_neg / s);
    let d = b1.mu_neg - b2.mu_neg;
    let neg = (2.0 * d * s * n1 + d * d * n0) / (2.0 * s * s);
    Ok((atom + pos + neg).max(0.0))
}
