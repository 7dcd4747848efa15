//! Component histograms from AMP against the state-evolution law.
//!
//! Each probe owns `components_per_probe` coordinates of every dataset. A
//! probe with `β⁰ = 0` takes coordinates that are already null, a nonzero
//! probe takes coordinates from the support and overwrites their value, so
//! the support fraction is unchanged. In fixed-noise mode the probe's `η` is
//! also written into those coordinates of the privacy noise.
//!
//! The reference law for a field `h ~ N(μ, s²)` passed through the soft
//! threshold `c = λΣ` is an atom `P(|h| ≤ c)` at zero plus the shifted
//! Gaussian pieces. Fixed noise: `μ = β⁰ − ηΣ`, `s = σ_z`. Fixed data: the
//! same law with `s = Σσ_η`, averaged over `μ = β⁰ + σ_z z`.

use std::collections::BTreeMap;

use ndarray::Array1;
use privlasso_core::quadrature::{gaussian_expectation, QuadOptions};
use privlasso_core::special::norm_interval;
use privlasso_core::stats::MeanAccumulator;
use privlasso_core::{generate_dataset, run_amp, sample_privacy_noise, se_fixed_point, Dataset, ModelParams};
use serde_json::json;

use crate::config::{DistMode, DistSettings, ExperimentConfig, Probe};
use crate::error::{HarnessError, Result};
use crate::output::{param_cells, Cell, RunOutput, Table};

use super::{par_map, trial_seed};

/// Bins are `[k/100, (k+1)/100)`.
const BINS_PER_UNIT: f64 = 100.0;

fn bin_of(x: f64) -> i64 {
    (x * BINS_PER_UNIT).floor() as i64
}

fn bin_left(k: i64) -> f64 {
    k as f64 / BINS_PER_UNIT
}

/// Coordinates owned by each probe, lowest indices first.
pub fn assign_components(beta0: &Array1<f64>, probes: &[Probe], per_probe: usize) -> Vec<Vec<usize>> {
    let p = beta0.len();
    let mut used = vec![false; p];
    probes
        .iter()
        .map(|probe| {
            let want_null = probe.beta0 == 0.0;
            let mut picked = Vec::with_capacity(per_probe);
            // second pass only if the matching pool ran out
            for strict in [true, false] {
                for i in 0..p {
                    if picked.len() == per_probe {
                        break;
                    }
                    if used[i] || (strict && (beta0[i] == 0.0) != want_null) {
                        continue;
                    }
                    used[i] = true;
                    picked.push(i);
                }
            }
            picked
        })
        .collect()
}

fn plant(d: &Dataset, comps: &[Vec<usize>], probes: &[Probe]) -> Result<Dataset> {
    let mut beta0 = d.beta0().clone();
    let mut delta = Array1::zeros(d.p());
    for (probe, cs) in probes.iter().zip(comps) {
        for &i in cs {
            delta[i] = probe.beta0 - beta0[i];
            beta0[i] = probe.beta0;
        }
    }
    let y = d.y() + &d.x().dot(&delta);
    Ok(Dataset::from_parts(
        d.x().clone(),
        y,
        beta0,
        d.xi().clone(),
        *d.params(),
        d.provenance(),
    )?)
}

/// Soft-thresholded Gaussian field `N(mu, s²)` with threshold `c`.
#[derive(Debug, Clone, Copy)]
struct Piece {
    mu: f64,
    s: f64,
    c: f64,
}

impl Piece {
    fn atom(&self) -> f64 {
        if self.s == 0.0 {
            return (self.mu.abs() <= self.c) as u8 as f64;
        }
        norm_interval((-self.c - self.mu) / self.s, (self.c - self.mu) / self.s)
    }

    /// Continuous mass in `[lo, hi)`, a bin that does not straddle zero.
    fn mass(&self, lo: f64, hi: f64) -> f64 {
        let shift = if lo >= 0.0 { self.c } else { -self.c };
        if self.s == 0.0 {
            let b = self.mu - shift;
            let inside = (self.mu.abs() > self.c) && b >= lo && b < hi;
            return inside as u8 as f64;
        }
        norm_interval((lo + shift - self.mu) / self.s, (hi + shift - self.mu) / self.s)
    }
}

/// Reference law of one probe.
#[derive(Debug, Clone, Copy)]
enum Reference {
    Single(Piece),
    /// `Piece { mu: center + sigma_z z, .. }` averaged over `z ~ N(0, 1)`.
    Mixture {
        piece: Piece,
        sigma_z: f64,
    },
}

impl Reference {
    fn extent(&self) -> (f64, f64) {
        let (mu, spread, c) = match *self {
            Reference::Single(p) => (p.mu, p.s, p.c),
            Reference::Mixture { piece, sigma_z } => (piece.mu, piece.s.hypot(sigma_z), piece.c),
        };
        ((mu - c - 10.0 * spread).min(0.0), (mu + c + 10.0 * spread).max(0.0))
    }

    fn average(&self, f: impl Fn(&Piece) -> f64, kinks: &[f64]) -> Result<f64> {
        match *self {
            Reference::Single(p) => Ok(f(&p)),
            Reference::Mixture { piece, sigma_z } => {
                let breaks: Vec<f64> = if sigma_z > 0.0 {
                    kinks.iter().map(|k| (k - piece.mu) / sigma_z).collect()
                } else {
                    Vec::new()
                };
                let g = |z: f64| {
                    f(&Piece {
                        mu: piece.mu + sigma_z * z,
                        ..piece
                    })
                };
                Ok(gaussian_expectation(g, 0.0, 1.0, &breaks, &QuadOptions::default())?)
            }
        }
    }

    fn atom(&self) -> Result<f64> {
        let c = self.piece().c;
        self.average(Piece::atom, &[-c, c])
    }

    fn mass(&self, lo: f64, hi: f64) -> Result<f64> {
        let c = self.piece().c;
        let shift = if lo >= 0.0 { c } else { -c };
        self.average(|p| p.mass(lo, hi), &[lo + shift, hi + shift])
    }

    fn piece(&self) -> Piece {
        match *self {
            Reference::Single(p) | Reference::Mixture { piece: p, .. } => p,
        }
    }
}

/// Histogram with the atom at zero kept apart from the bins.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Histogram {
    pub atom: f64,
    pub bins: BTreeMap<i64, f64>,
}

impl Histogram {
    fn from_samples(samples: &[f64]) -> Self {
        let mut h = Histogram::default();
        let w = 1.0 / samples.len() as f64;
        for &x in samples {
            if x == 0.0 {
                h.atom += w;
            } else {
                *h.bins.entry(bin_of(x)).or_insert(0.0) += w;
            }
        }
        h
    }

    /// Total-variation distance, counting `other`'s mass off the shared bins.
    pub fn tv(&self, other: &Histogram) -> f64 {
        let keys: std::collections::BTreeSet<i64> = self.bins.keys().chain(other.bins.keys()).copied().collect();
        let mut sum = (self.atom - other.atom).abs();
        for k in keys {
            sum += (self.bins.get(&k).unwrap_or(&0.0) - other.bins.get(&k).unwrap_or(&0.0)).abs();
        }
        0.5 * sum
    }

    fn table(&self, lo: i64, hi: i64) -> Table {
        let mut t = Table::new(["bin_left", "mass"]);
        t.push(vec![Cell::from("atom"), Cell::Float(self.atom)]);
        for k in lo..=hi {
            t.push(vec![
                Cell::Float(bin_left(k)),
                Cell::Float(*self.bins.get(&k).unwrap_or(&0.0)),
            ]);
        }
        t
    }
}

fn reference_histogram(r: &Reference, lo: i64, hi: i64) -> Result<Histogram> {
    let mut h = Histogram {
        atom: r.atom()?,
        bins: BTreeMap::new(),
    };
    for k in lo..=hi {
        let m = r.mass(bin_left(k), bin_left(k + 1))?;
        if m > 0.0 {
            h.bins.insert(k, m);
        }
    }
    Ok(h)
}

/// Per-probe result of a comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub probe: Probe,
    pub solves: usize,
    pub samples: usize,
    pub low_sample: bool,
    pub atom_amp: f64,
    pub atom_amp_stderr: Option<f64>,
    pub atom_se: f64,
    pub tv: f64,
    pub amp: Histogram,
    pub se: Histogram,
    pub bin_range: (i64, i64),
}

/// Samples of one solve per probe; `None` when the solve did not converge.
type Solve = Option<Vec<Vec<f64>>>;

fn solve(
    d: &Dataset,
    eta: &privlasso_core::NoiseVector,
    comps: &[Vec<usize>],
    cfg: &ExperimentConfig,
) -> Result<Solve> {
    let fp = run_amp(d, eta, cfg.params.lambda, &cfg.solver)?;
    if !fp.converged() || fp.diverged() {
        return Ok(None);
    }
    Ok(Some(
        comps
            .iter()
            .map(|cs| cs.iter().map(|&i| fp.beta_hat()[i]).collect())
            .collect(),
    ))
}

/// Runs the solves and groups them into independent units (one per dataset
/// draw in fixed-noise mode, one per dataset in fixed-data mode).
fn collect_units(cfg: &ExperimentConfig, d: &DistSettings) -> Result<Vec<Vec<Solve>>> {
    let params = cfg.params;
    let probes = &d.probes;
    match d.mode {
        DistMode::FixedNoise => {
            let solves = par_map(d.realizations, |r| -> Result<Solve> {
                let seed = trial_seed(cfg.seed, 0, r);
                let data = generate_dataset(&params, seed)?;
                let comps = assign_components(data.beta0(), probes, d.components_per_probe);
                let data = plant(&data, &comps, probes)?;
                let mut eta = sample_privacy_noise(&params, seed)?;
                for (probe, cs) in probes.iter().zip(&comps) {
                    for &i in cs {
                        eta.eta[i] = probe.eta.expect("validated");
                    }
                }
                solve(&data, &eta, &comps, cfg)
            });
            solves.into_iter().map(|s| s.map(|s| vec![s])).collect()
        }
        DistMode::FixedData => {
            let datasets = par_map(d.datasets, |j| -> Result<(Dataset, Vec<Vec<usize>>)> {
                let data = generate_dataset(&params, trial_seed(cfg.seed, 0, j))?;
                let comps = assign_components(data.beta0(), probes, d.components_per_probe);
                Ok((plant(&data, &comps, probes)?, comps))
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let per = d.realizations;
            let mut solves = par_map(d.datasets * per, |k| -> Result<Solve> {
                let (j, r) = (k / per, k % per);
                let (data, comps) = &datasets[j];
                let eta = sample_privacy_noise(&params, trial_seed(cfg.seed, 1 + j, r))?;
                solve(data, &eta, comps, cfg)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let mut units = Vec::with_capacity(d.datasets);
            for _ in 0..d.datasets {
                let rest = solves.split_off(per);
                units.push(std::mem::replace(&mut solves, rest));
            }
            Ok(units)
        }
    }
}

pub fn compare(cfg: &ExperimentConfig) -> Result<(Vec<ProbeResult>, serde_json::Value)> {
    let d = cfg.dist.as_ref().expect("validated");
    let params: ModelParams = cfg.params;
    let fp = se_fixed_point(&params, &cfg.se)?;
    if !fp.stable {
        return Err(HarnessError::Numerical(format!(
            "state evolution is unstable at this point (margin {:.3})",
            fp.stability_margin
        )));
    }
    let (sigma, sigma_z) = (fp.sigma, fp.sigma_z);
    let c = params.lambda * sigma;
    let units = collect_units(cfg, d)?;

    let mut results = Vec::with_capacity(d.probes.len());
    for (k, probe) in d.probes.iter().enumerate() {
        let mut samples = Vec::new();
        let mut unit_atoms = MeanAccumulator::new();
        let mut solves = 0usize;
        for unit in &units {
            let mut zeros = 0usize;
            let mut count = 0usize;
            for s in unit.iter().flatten() {
                solves += 1;
                let v = &s[k];
                zeros += v.iter().filter(|&&b| b == 0.0).count();
                count += v.len();
                samples.extend_from_slice(v);
            }
            if count > 0 {
                unit_atoms.push(zeros as f64 / count as f64);
            }
        }
        let reference = match d.mode {
            DistMode::FixedNoise => Reference::Single(Piece {
                mu: probe.beta0 - probe.eta.expect("validated") * sigma,
                s: sigma_z,
                c,
            }),
            DistMode::FixedData => Reference::Mixture {
                piece: Piece {
                    mu: probe.beta0,
                    s: sigma * params.sigma_eta,
                    c,
                },
                sigma_z,
            },
        };
        let (mut lo, mut hi) = reference.extent();
        for &x in &samples {
            lo = lo.min(x);
            hi = hi.max(x);
        }
        let range = (bin_of(lo), bin_of(hi));
        let se = reference_histogram(&reference, range.0, range.1)?;
        let amp = if samples.is_empty() {
            Histogram::default()
        } else {
            Histogram::from_samples(&samples)
        };
        let off_grid = (1.0 - se.atom - se.bins.values().sum::<f64>()).max(0.0);
        results.push(ProbeResult {
            probe: *probe,
            solves,
            samples: samples.len(),
            low_sample: solves < d.min_samples,
            atom_amp: if samples.is_empty() { f64::NAN } else { amp.atom },
            atom_amp_stderr: unit_atoms.stderr(),
            atom_se: se.atom,
            tv: if samples.is_empty() {
                f64::NAN
            } else {
                amp.tv(&se) + 0.5 * off_grid
            },
            amp,
            se,
            bin_range: range,
        });
    }
    let notes = json!({
        "mode": d.mode,
        "Sigma": sigma,
        "sigma_z": sigma_z,
        "low_sample_probes": results.iter().filter(|r| r.low_sample).count(),
    });
    Ok((results, notes))
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let (results, notes) = compare(cfg)?;
    let d = cfg.dist.as_ref().expect("validated");
    let mode = match d.mode {
        DistMode::FixedNoise => "fixed-noise",
        DistMode::FixedData => "fixed-data",
    };
    let mut summary = Table::with_params([
        "mode",
        "probe",
        "beta0",
        "eta",
        "solves",
        "samples",
        "low_sample",
        "atom_amp",
        "atom_amp_stderr",
        "atom_se",
        "tv",
    ]);
    let mut tables = Vec::new();
    for (k, r) in results.iter().enumerate() {
        let mut row = param_cells(&cfg.params);
        row.extend([
            Cell::from(mode),
            Cell::from(k),
            Cell::Float(r.probe.beta0),
            Cell::opt(r.probe.eta),
            Cell::from(r.solves),
            Cell::from(r.samples),
            Cell::Bool(r.low_sample),
            Cell::Float(r.atom_amp),
            Cell::opt(r.atom_amp_stderr),
            Cell::Float(r.atom_se),
            Cell::Float(r.tv),
        ]);
        summary.push(row);
        tables.push((format!("hist_probe{k}_amp"), r.amp.table(r.bin_range.0, r.bin_range.1)));
        tables.push((format!("hist_probe{k}_se"), r.se.table(r.bin_range.0, r.bin_range.1)));
    }
    tables.insert(0, ("summary".into(), summary));
    Ok(RunOutput { tables, notes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_reference_has_unit_mass() {
        let r = Reference::Single(Piece {
            mu: 0.7,
            s: 0.3,
            c: 0.5,
        });
        let (lo, hi) = r.extent();
        let h = reference_histogram(&r, bin_of(lo), bin_of(hi)).unwrap();
        let total = h.atom + h.bins.values().sum::<f64>();
        assert!((total - 1.0).abs() < 1e-12, "{total}");
    }

    #[test]
    fn mixture_reference_has_unit_mass_even_without_spread() {
        for s in [0.0, 0.4] {
            let r = Reference::Mixture {
                piece: Piece { mu: 0.2, s, c: 0.6 },
                sigma_z: 0.5,
            };
            let (lo, hi) = r.extent();
            let h = reference_histogram(&r, bin_of(lo), bin_of(hi)).unwrap();
            let total = h.atom + h.bins.values().sum::<f64>();
            assert!((total - 1.0).abs() < 1e-8, "s = {s}: {total}");
        }
    }

    #[test]
    fn probes_keep_support_pattern() {
        let beta0 = Array1::from(vec![0.0, 1.0, 0.0, -2.0, 0.0, 0.5]);
        let probes = [Probe { beta0: 0.0, eta: None }, Probe { beta0: 3.0, eta: None }];
        let comps = assign_components(&beta0, &probes, 2);
        assert_eq!(comps, vec![vec![0, 2], vec![1, 3]]);
    }

    #[test]
    fn tv_of_identical_histograms_is_zero() {
        let h = Histogram::from_samples(&[0.0, 0.013, 0.5, -0.2]);
        assert_eq!(h.tv(&h), 0.0);
        assert!((h.atom - 0.25).abs() < 1e-15);
    }
}
