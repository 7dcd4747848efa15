//! Browser bindings. Each export takes plain numbers and returns JSON.
//!
//! Build with `wasm-pack build crates/wasm-demo --target web --out-dir www/pkg`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use privlasso_core::privacy::{optimal_noise, tradeoff_curve};
use privlasso_core::scalar_kernel::{continuous_density, ScalarChannel};
use privlasso_core::{se_fixed_point, Error, Mechanism, ModelParams, SeOptions, TradeoffPoint};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn params(alpha: f64, rho: f64, sigma_xi: f64, lambda: f64, sigma_eta: f64) -> Result<ModelParams, Error> {
    let p = ModelParams {
        alpha,
        rho,
        sigma_xi,
        lambda,
        sigma_eta,
        ..ModelParams::default()
    };
    p.validate()?;
    Ok(p)
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

#[derive(Debug, Serialize)]
pub struct CurvePoint {
    pub sigma_eta: f64,
    pub e_gen: f64,
    pub e_train: f64,
    pub rho_hat: f64,
    pub stability_margin: f64,
    pub stable: bool,
}

/// State-evolution errors on `points` noise levels in `[0, sigma_max]`.
pub fn se_curve_json(
    alpha: f64,
    rho: f64,
    sigma_xi: f64,
    lambda: f64,
    output: bool,
    sigma_max: f64,
    points: usize,
) -> Result<String, Error> {
    if points < 2 || !(sigma_max > 0.0) {
        return Err(Error::param("points", "need at least 2 points and sigma_max > 0"));
    }
    let base = params(alpha, rho, sigma_xi, lambda, 0.0)?;
    let opts = SeOptions::default();
    let fp0 = se_fixed_point(&base, &opts)?;
    let mut out = Vec::with_capacity(points);
    for k in 0..points {
        let s = sigma_max * k as f64 / (points - 1) as f64;
        let pt = if output {
            CurvePoint {
                sigma_eta: s,
                e_gen: fp0.e_gen + s * s,
                e_train: fp0.e_train + s * s,
                rho_hat: fp0.rho_hat,
                stability_margin: fp0.stability_margin,
                stable: fp0.stable,
            }
        } else {
            let fp = se_fixed_point(&ModelParams { sigma_eta: s, ..base }, &opts)?;
            CurvePoint {
                sigma_eta: s,
                e_gen: fp.e_gen,
                e_train: fp.e_train,
                rho_hat: fp.rho_hat,
                stability_margin: fp.stability_margin,
                stable: fp.stable,
            }
        };
        out.push(pt);
    }
    Ok(to_json(&out))
}

#[derive(Debug, Serialize)]
pub struct Tradeoff {
    pub e_gen_noiseless: f64,
    pub output: Vec<TradeoffPoint>,
    pub objective: Vec<TradeoffPoint>,
    pub output_optimum: Option<TradeoffPoint>,
    pub objective_optimum: Option<TradeoffPoint>,
}

/// Error against divergence for both mechanisms on a log grid over `[1e-3, 10]`.
pub fn tradeoff_json(alpha: f64, rho: f64, sigma_xi: f64, lambda: f64, points: usize) -> Result<String, Error> {
    if points < 2 {
        return Err(Error::param("points", "need at least 2 points"));
    }
    let base = params(alpha, rho, sigma_xi, lambda, 0.0)?;
    let grid: Vec<f64> = (0..points)
        .map(|k| 10f64.powf(-3.0 + 4.0 * k as f64 / (points - 1) as f64))
        .collect();
    let opts = SeOptions::default();
    let output = tradeoff_curve(&base, &grid, Mechanism::Output, &opts)?;
    let objective = tradeoff_curve(&base, &grid, Mechanism::Objective, &opts)?;
    let optimum = |c: &[TradeoffPoint]| match optimal_noise(c) {
        Ok(p) => Ok(Some(p)),
        Err(Error::NoStablePoint) => Ok(None),
        Err(e) => Err(e),
    };
    Ok(to_json(&Tradeoff {
        e_gen_noiseless: se_fixed_point(&base, &opts)?.e_gen,
        output_optimum: optimum(&output)?,
        objective_optimum: optimum(&objective)?,
        output,
        objective,
    }))
}

#[derive(Debug, Serialize)]
pub struct ComponentLaw {
    pub atom: f64,
    pub beta: Vec<f64>,
    pub density: Vec<f64>,
    pub sigma: f64,
    pub sigma_z: f64,
    pub stable: bool,
}

/// Law of one estimated component with true value `beta0` and privacy noise
/// `eta`, over dataset redraws, on a grid of `points` values.
#[allow(clippy::too_many_arguments)]
pub fn component_law_json(
    alpha: f64,
    rho: f64,
    sigma_xi: f64,
    lambda: f64,
    sigma_eta: f64,
    beta0: f64,
    eta: f64,
    points: usize,
) -> Result<String, Error> {
    if points < 2 {
        return Err(Error::param("points", "need at least 2 points"));
    }
    let p = params(alpha, rho, sigma_xi, lambda, sigma_eta)?;
    let fp = se_fixed_point(&p, &SeOptions::default())?;
    if !(fp.sigma_z > 0.0) {
        return Err(Error::param("sigma_z", "degenerate law without field noise"));
    }
    let ch = ScalarChannel::new(fp.sigma, lambda, fp.sigma_z / fp.sigma, beta0 - eta * fp.sigma)?;
    let reach = ch.threshold() + 6.0 * fp.sigma_z;
    let (lo, hi) = ((ch.m_hat - reach).min(-0.5), (ch.m_hat + reach).max(0.5));
    let beta: Vec<f64> = (0..points)
        .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
        .collect();
    let density = beta.iter().map(|&b| continuous_density(&ch, b)).collect();
    Ok(to_json(&ComponentLaw {
        atom: ch.inactive_probability(),
        beta,
        density,
        sigma: fp.sigma,
        sigma_z: fp.sigma_z,
        stable: fp.stable,
    }))
}

fn js(r: Result<String, Error>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn se_curve(
    alpha: f64,
    rho: f64,
    sigma_xi: f64,
    lambda: f64,
    output: bool,
    sigma_max: f64,
    points: usize,
) -> Result<String, JsError> {
    js(se_curve_json(alpha, rho, sigma_xi, lambda, output, sigma_max, points))
}

#[wasm_bindgen]
pub fn tradeoff(alpha: f64, rho: f64, sigma_xi: f64, lambda: f64, points: usize) -> Result<String, JsError> {
    js(tradeoff_json(alpha, rho, sigma_xi, lambda, points))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn component_law(
    alpha: f64,
    rho: f64,
    sigma_xi: f64,
    lambda: f64,
    sigma_eta: f64,
    beta0: f64,
    eta: f64,
    points: usize,
) -> Result<String, JsError> {
    js(component_law_json(
        alpha, rho, sigma_xi, lambda, sigma_eta, beta0, eta, points,
    ))
}
