//! Experiment parameters, synthetic datasets, one-point mutants and privacy noise.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    /// Linear tilt `η·β` added to the objective before solving.
    #[default]
    Objective,
    /// Noise added to the noiseless estimate.
    Output,
}

impl std::str::FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "objective" => Ok(Mechanism::Objective),
            "output" => Ok(Mechanism::Output),
            other => Err(Error::param(
                "mechanism",
                format!("expected `objective` or `output`, got `{other}`"),
            )),
        }
    }
}

impl std::fmt::Display for Mechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mechanism::Objective => "objective",
            Mechanism::Output => "output",
        })
    }
}

fn default_sigma_beta() -> f64 {
    1.0
}

/// One experiment point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub alpha: f64,
    pub rho: f64,
    #[serde(default = "default_sigma_beta")]
    pub sigma_beta: f64,
    pub sigma_xi: f64,
    pub lambda: f64,
    #[serde(default)]
    pub sigma_eta: f64,
    #[serde(default)]
    pub mechanism: Mechanism,
    #[serde(default = "default_p")]
    pub p: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_p() -> usize {
    1000
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
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
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |name: &'static str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::param(name, format!("must be finite and >= 0, got {v}")))
            }
        };
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::param("alpha", format!("must be > 0, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::param("rho", format!("must lie in [0, 1], got {}", self.rho)));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::param("lambda", format!("must be > 0, got {}", self.lambda)));
        }
        finite_nonneg("sigma_beta", self.sigma_beta)?;
        finite_nonneg("sigma_xi", self.sigma_xi)?;
        finite_nonneg("sigma_eta", self.sigma_eta)?;
        if self.p == 0 {
            return Err(Error::param("p", "must be >= 1"));
        }
        if self.n() == 0 {
            return Err(Error::param("alpha", "round(alpha * p) must be >= 1"));
        }
        Ok(())
    }

    /// Sample count `round(alpha * p)`.
    pub fn n(&self) -> usize {
        (self.alpha * self.p as f64).round() as usize
    }

    /// Privacy-noise std that enters the solver objective.
    pub fn objective_sigma_eta(&self) -> f64 {
        match self.mechanism {
            Mechanism::Objective => self.sigma_eta,
            Mechanism::Output => 0.0,
        }
    }

    /// Initial per-component error `rho sigma_beta^2 + sigma_xi^2` (estimate at zero).
    pub fn null_error(&self) -> f64 {
        self.rho * self.sigma_beta * self.sigma_beta + self.sigma_xi * self.sigma_xi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    /// `(row, seed)` of the redrawn row for one-point mutants.
    pub mutant: Option<(usize, u64)>,
}

/// Design matrix, responses, ground truth and observation noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Array1<f64>,
    beta0: Array1<f64>,
    xi: Array1<f64>,
    params: ModelParams,
    provenance: Provenance,
}

impl Dataset {
    /// Assembles a dataset from parts, checking shapes and recomputing nothing.
    pub fn from_parts(
        x: Array2<f64>,
        y: Array1<f64>,
        beta0: Array1<f64>,
        xi: Array1<f64>,
        params: ModelParams,
        provenance: Provenance,
    ) -> Result<Self> {
        let (n, p) = x.dim();
        if y.len() != n || xi.len() != n || beta0.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "X is {n}x{p}, y {}, xi {}, beta0 {}",
                y.len(),
                xi.len(),
                beta0.len()
            )));
        }
        let x = if x.is_standard_layout() {
            x
        } else {
            x.as_standard_layout().to_owned()
        };
        Ok(Self {
            x,
            y,
            beta0,
            xi,
            params,
            provenance,
        })
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }
    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }
    pub fn beta0(&self) -> &Array1<f64> {
        &self.beta0
    }
    pub fn xi(&self) -> &Array1<f64> {
        &self.xi
    }
    pub fn params(&self) -> &ModelParams {
        &self.params
    }
    pub fn provenance(&self) -> Provenance {
        self.provenance
    }
    pub fn n(&self) -> usize {
        self.x.nrows()
    }
    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

fn row_dot(row: &[f64], v: &[f64]) -> f64 {
    row.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn draw_row<R: Rng>(rng: &mut R, scale: f64, out: &mut [f64]) {
    for v in out.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = scale * z;
    }
}

/// Draws `(X, beta0, xi)` and `y = X beta0 + xi` from the `Dataset` stream of `seed`.
pub fn generate_dataset(params: &ModelParams, seed: u64) -> Result<Dataset> {
    params.validate()?;
    let p = params.p;
    let n = params.n();
    let mut rng = stream_rng(seed, Stream::Dataset, &[]);
    let scale = 1.0 / (p as f64).sqrt();

    let mut beta0 = Array1::zeros(p);
    for b in beta0.iter_mut() {
        let active: bool = rng.gen_bool(params.rho);
        let z: f64 = StandardNormal.sample(&mut rng);
        if active {
            *b = params.sigma_beta * z;
        }
    }
    let mut x = Array2::zeros((n, p));
    for mut row in x.rows_mut() {
        draw_row(&mut rng, scale, row.as_slice_mut().expect("standard layout"));
    }
    let mut xi = Array1::zeros(n);
    for v in xi.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v = params.sigma_xi * z;
    }
    let b = beta0.as_slice().expect("contiguous");
    let y = Array1::from_iter(
        x.rows()
            .into_iter()
            .zip(xi.iter())
            .map(|(row, e)| row_dot(row.as_slice().expect("standard layout"), b) + e),
    );
    Ok(Dataset {
        x,
        y,
        beta0,
        xi,
        params: *params,
        provenance: Provenance { seed, mutant: None },
    })
}

/// Replaces row `mu` of `d` with a fresh `(x'_mu, xi'_mu)` and its response.
pub fn make_one_point_mutant(d: &Dataset, mu: usize, seed: u64) -> Result<Dataset> {
    let n = d.n();
    if mu >= n {
        return Err(Error::IndexOutOfRange { index: mu, len: n });
    }
    let p = d.p();
    let mut rng = stream_rng(seed, Stream::MutantRow, &[mu as u64]);
    let mut x = d.x.clone();
    let mut row = x.row_mut(mu);
    let row = row.as_slice_mut().expect("standard layout");
    draw_row(&mut rng, 1.0 / (p as f64).sqrt(), row);
    let z: f64 = StandardNormal.sample(&mut rng);
    let xi_mu = d.params.sigma_xi * z;
    let y_mu = row_dot(row, d.beta0.as_slice().expect("contiguous")) + xi_mu;
    let mut y = d.y.clone();
    let mut xi = d.xi.clone();
    y[mu] = y_mu;
    xi[mu] = xi_mu;
    Ok(Dataset {
        x,
        y,
        beta0: d.beta0.clone(),
        xi,
        params: d.params,
        provenance: Provenance {
            seed: d.provenance.seed,
            mutant: Some((mu, seed)),
        },
    })
}

/// Privacy noise with i.i.d. Gaussian coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseVector {
    pub eta: Array1<f64>,
    pub sigma_eta: f64,
}

impl NoiseVector {
    pub fn zeros(p: usize) -> Self {
        Self {
            eta: Array1::zeros(p),
            sigma_eta: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.eta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta.is_empty()
    }
}

/// Draws `eta ~ N(0, sigma_eta^2 I_p)` from the `PrivacyNoise` stream of `seed`.
pub fn sample_privacy_noise(params: &ModelParams, seed: u64) -> Result<NoiseVector> {
    if !(params.sigma_eta.is_finite() && params.sigma_eta >= 0.0) {
        return Err(Error::param(
            "sigma_eta",
            format!("must be finite and >= 0, got {}", params.sigma_eta),
        ));
    }
    if params.p == 0 {
        return Err(Error::param("p", "must be >= 1"));
    }
    if params.sigma_eta == 0.0 {
        return Ok(NoiseVector::zeros(params.p));
    }
    let mut rng = stream_rng(seed, Stream::PrivacyNoise, &[]);
    let normal = Normal::new(0.0, params.sigma_eta).expect("validated std");
    let eta = Array1::from_iter((0..params.p).map(|_| normal.sample(&mut rng)));
    Ok(NoiseVector {
        eta,
        sigma_eta: params.sigma_eta,
    })
}
