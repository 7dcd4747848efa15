//! Gauss–Hermite rules and adaptive Gauss–Kronrod integration.

#![allow(clippy::excessive_precision)]

use crate::error::{Error, Result};
use crate::special::norm_pdf;

/// Gauss–Hermite rule rescaled to the standard normal weight: nodes `z_i` and
/// weights `w_i` with `sum w_i f(z_i) ≈ E[f(Z)]`, `Z ~ N(0, 1)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Builds an `n`-point rule by Newton iteration on the orthonormal
    /// Hermite recurrence.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || n > 300 {
            return Err(Error::param("n", "node count must be in 1..=300"));
        }
        let pim4 = std::f64::consts::PI.powf(-0.25);
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let m = n.div_ceil(2);
        let nf = n as f64;
        let mut z = 0.0f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            let mut converged = false;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::Quadrature(format!("Hermite root {i} of {n} did not converge")));
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let nodes = x.iter().rev().map(|v| v * std::f64::consts::SQRT_2).collect();
        let weights = w.iter().rev().map(|v| v / sqrt_pi).collect();
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// E[f(Z)] for Z ~ N(0, 1).
    pub fn expect<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&z, &w)| w * f(z)).sum()
    }

    /// E[f(Z)] for a fallible integrand.
    pub fn try_expect<F: FnMut(f64) -> Result<f64>>(&self, mut f: F) -> Result<f64> {
        let mut acc = 0.0;
        for (&z, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(z)?;
        }
        Ok(acc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-12,
            max_subdivisions: 2000,
        }
    }
}

impl QuadOptions {
    pub fn tight() -> Self {
        Self {
            abs_tol: 1e-14,
            rel_tol: 1e-13,
            max_subdivisions: 4000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn gk15<F: FnMut(f64) -> Result<f64>>(f: &mut F, a: f64, b: f64) -> Result<Segment> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center)?;
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx)?;
        let f2 = f(center + dx)?;
        kronrod += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let value = kronrod * half;
    let error = ((kronrod - gauss) * half).abs();
    if !value.is_finite() {
        return Err(Error::Quadrature(format!("non-finite integrand on [{a}, {b}]")));
    }
    Ok(Segment { a, b, value, error })
}

/// Integrates `f` over `[a, b]` by globally adaptive bisection of the
/// segment with the largest Kronrod–Gauss error estimate.
pub fn integrate<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, opts: &QuadOptions) -> Result<Integral> {
    integrate_with_breaks(f, &[a, b], opts)
}

/// Like [`integrate`], with the initial partition fixed by `points`
/// (sorted, at least two entries). Kinks of the integrand belong there.
pub fn integrate_with_breaks<F: FnMut(f64) -> f64>(mut f: F, points: &[f64], opts: &QuadOptions) -> Result<Integral> {
    try_integrate_with_breaks(|x| Ok(f(x)), points, opts)
}

pub fn try_integrate_with_breaks<F: FnMut(f64) -> Result<f64>>(
    mut f: F,
    points: &[f64],
    opts: &QuadOptions,
) -> Result<Integral> {
    if points.len() < 2 {
        return Err(Error::Quadrature("need at least two breakpoints".into()));
    }
    if points.iter().any(|p| !p.is_finite()) || points.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Quadrature(format!(
            "breakpoints must be finite and sorted: {points:?}"
        )));
    }
    let mut evaluations = 0usize;
    let mut counted = |x: f64| {
        evaluations += 1;
        f(x)
    };
    let mut segments = Vec::with_capacity(points.len() + 64);
    for w in points.windows(2) {
        if w[1] > w[0] {
            segments.push(gk15(&mut counted, w[0], w[1])?);
        }
    }
    if segments.is_empty() {
        return Ok(Integral {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
        });
    }
    loop {
        let value: f64 = segments.iter().map(|s| s.value).sum();
        let error: f64 = segments.iter().map(|s| s.error).sum();
        if error <= opts.abs_tol.max(opts.rel_tol * value.abs()) {
            return Ok(Integral {
                value,
                error,
                evaluations,
            });
        }
        if segments.len() >= opts.max_subdivisions {
            // Accept if the remaining error is at round-off level.
            if error <= 1e3 * f64::EPSILON * segments.iter().map(|s| s.value.abs()).sum::<f64>() {
                return Ok(Integral {
                    value,
                    error,
                    evaluations,
                });
            }
            return Err(Error::Quadrature(format!(
                "subdivision limit reached (value {value:e}, error {error:e})"
            )));
        }
        let (worst, _) = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .expect("non-empty");
        let seg = segments.swap_remove(worst);
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b {
            // Interval can no longer be split in floating point.
            segments.push(Segment { error: 0.0, ..seg });
            continue;
        }
        segments.push(gk15(&mut counted, seg.a, mid)?);
        segments.push(gk15(&mut counted, mid, seg.b)?);
    }
}

/// E[f(X)] for X ~ N(mean, sd²), integrating over mean ± 12 sd. Extra
/// `breaks` inside that window are honoured.
pub fn gaussian_expectation<F: FnMut(f64) -> f64>(
    mut f: F,
    mean: f64,
    sd: f64,
    breaks: &[f64],
    opts: &QuadOptions,
) -> Result<f64> {
    try_gaussian_expectation(|x| Ok(f(x)), mean, sd, breaks, opts)
}

pub fn try_gaussian_expectation<F: FnMut(f64) -> Result<f64>>(
    mut f: F,
    mean: f64,
    sd: f64,
    breaks: &[f64],
    opts: &QuadOptions,
) -> Result<f64> {
    if sd == 0.0 {
        return f(mean);
    }
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::Quadrature(format!("invalid standard deviation {sd}")));
    }
    let lo = mean - 12.0 * sd;
    let hi = mean + 12.0 * sd;
    let mut points = vec![lo, hi];
    points.extend(breaks.iter().copied().filter(|&b| b > lo && b < hi));
    points.sort_by(f64::total_cmp);
    points.dedup();
    let res = try_integrate_with_breaks(|x| Ok(f(x)? * norm_pdf((x - mean) / sd) / sd), &points, opts)?;
    Ok(res.value)
}
