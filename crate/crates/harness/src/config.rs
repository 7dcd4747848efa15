//! Experiment configuration: TOML schema, CLI overrides and grid expansion.
//!
//! ```toml
//! schema_version = 1
//! kind = "amp-mc"
//! seed = 7
//! trials = 100
//! output_dir = "out/fig1"
//!
//! [params]
//! alpha = 0.5
//! rho = 0.1
//! sigma_xi = 0.1
//! lambda = 1.0
//! p = 1000
//!
//! [[sweep]]
//! param = "lambda"
//! values = [0.5, 1.0, 1.5]
//!
//! [[sweep]]
//! param = "sigma_eta"
//! grid = { start = 0.0, stop = 0.36, points = 10 }
//! ```
//!
//! Sweep axes expand to their Cartesian product with the first axis
//! outermost. `[params] seed` is ignored; datasets are keyed by the run seed.

use std::fmt;
use std::path::{Path, PathBuf};

use privlasso_core::{Mechanism, ModelParams, SeOptions, SolverOptions};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[value(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SeSweep,
    AmpMc,
    DistCompare,
    PrivacySweep,
    Tradeoff,
    StabilityMap,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::SeSweep => "se-sweep",
            ExperimentKind::AmpMc => "amp-mc",
            ExperimentKind::DistCompare => "dist-compare",
            ExperimentKind::PrivacySweep => "privacy-sweep",
            ExperimentKind::Tradeoff => "tradeoff",
            ExperimentKind::StabilityMap => "stability-map",
        })
    }
}

fn one() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub params: ModelParams,
    #[serde(default)]
    pub sweep: Vec<SweepAxis>,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub se: SeOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist: Option<DistSettings>,
    #[serde(default)]
    pub stability: StabilitySettings,
    #[serde(default)]
    pub privacy: PrivacySettings,
    #[serde(default)]
    pub tradeoff: TradeoffSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisValue {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridScale {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    #[serde(default)]
    pub scale: GridScale,
}

impl GridSpec {
    fn expand(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.start];
        }
        let last = (self.points - 1) as f64;
        (0..self.points)
            .map(|k| {
                let t = k as f64 / last;
                match self.scale {
                    GridScale::Linear => self.start + (self.stop - self.start) * t,
                    GridScale::Log => (self.start.ln() + (self.stop.ln() - self.start.ln()) * t).exp(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub param: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<AxisValue>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistMode {
    /// Probe `(β⁰, η)` held fixed; samples over dataset draws.
    FixedNoise,
    /// Probe `β⁰` held fixed; samples over privacy-noise draws per dataset.
    FixedData,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Probe {
    pub beta0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
}

fn default_min_samples() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistSettings {
    pub mode: DistMode,
    /// Dataset draws (fixed-noise) or noise draws per dataset (fixed-data).
    pub realizations: usize,
    /// Datasets averaged over in fixed-data mode.
    #[serde(default = "one")]
    pub datasets: usize,
    /// Components assigned to each probe in every solve.
    #[serde(default = "one")]
    pub components_per_probe: usize,
    /// Probes with fewer converged solves are flagged.
    #[serde(default = "default_min_samples")]
    pub min_samples: usize,
    pub probes: Vec<Probe>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySettings {
    /// Also solve every run with coordinate descent in two coordinate orders.
    #[serde(default = "yes")]
    pub coordinate_descent: bool,
    /// Stop a cell's trials once every enabled solver has failed at least once.
    /// `runs` then reports the trials actually executed.
    #[serde(default)]
    pub stop_at_first_failure: bool,
}

impl Default for StabilitySettings {
    fn default() -> Self {
        Self {
            coordinate_descent: true,
            stop_at_first_failure: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrivacySettings {
    /// Sample count for the direct divergence quadrature (objective mechanism).
    pub numeric_n: Option<usize>,
    /// One-point-mutant pairs for the Monte Carlo sensitivity; 0 disables it.
    pub sensitivity_pairs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TradeoffSettings {
    /// Weights of the error and divergence axes in the distance to the origin.
    pub weights: [f64; 2],
}

impl Default for TradeoffSettings {
    fn default() -> Self {
        Self { weights: [1.0, 1.0] }
    }
}

/// Parameter a sweep axis may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Param {
    Alpha,
    Rho,
    SigmaBeta,
    SigmaXi,
    Lambda,
    SigmaEta,
    Mechanism,
    P,
}

impl Param {
    pub const ALL: [Param; 8] = [
        Param::Alpha,
        Param::Rho,
        Param::SigmaBeta,
        Param::SigmaXi,
        Param::Lambda,
        Param::SigmaEta,
        Param::Mechanism,
        Param::P,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Param::Alpha => "alpha",
            Param::Rho => "rho",
            Param::SigmaBeta => "sigma_beta",
            Param::SigmaXi => "sigma_xi",
            Param::Lambda => "lambda",
            Param::SigmaEta => "sigma_eta",
            Param::Mechanism => "mechanism",
            Param::P => "p",
        }
    }

    pub fn parse(s: &str) -> Option<Param> {
        Param::ALL.into_iter().find(|p| p.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AxisPoint {
    Number(f64),
    Mechanism(Mechanism),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub param: Param,
    pub points: Vec<AxisPoint>,
}

impl Axis {
    pub fn numbers(&self) -> Vec<f64> {
        self.points
            .iter()
            .filter_map(|p| match p {
                AxisPoint::Number(v) => Some(*v),
                AxisPoint::Mechanism(_) => None,
            })
            .collect()
    }
}

/// One expanded grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub index: usize,
    /// Position along each axis.
    pub coords: Vec<usize>,
    pub params: ModelParams,
}

fn set(params: &mut ModelParams, param: Param, v: AxisPoint) {
    match (param, v) {
        (Param::Mechanism, AxisPoint::Mechanism(m)) => params.mechanism = m,
        (Param::P, AxisPoint::Number(x)) => params.p = x as usize,
        (Param::Alpha, AxisPoint::Number(x)) => params.alpha = x,
        (Param::Rho, AxisPoint::Number(x)) => params.rho = x,
        (Param::SigmaBeta, AxisPoint::Number(x)) => params.sigma_beta = x,
        (Param::SigmaXi, AxisPoint::Number(x)) => params.sigma_xi = x,
        (Param::Lambda, AxisPoint::Number(x)) => params.lambda = x,
        (Param::SigmaEta, AxisPoint::Number(x)) => params.sigma_eta = x,
        _ => unreachable!("axis values are checked against their parameter"),
    }
}

impl SweepAxis {
    pub fn resolve(&self) -> Result<Axis> {
        let param = Param::parse(&self.param).ok_or_else(|| {
            let known: Vec<_> = Param::ALL.iter().map(|p| p.name()).collect();
            HarnessError::config(format!(
                "unknown sweep parameter `{}` (known: {})",
                self.param,
                known.join(", ")
            ))
        })?;
        let raw: Vec<AxisValue> = match (&self.values, &self.grid) {
            (Some(v), None) => v.clone(),
            (None, Some(g)) => {
                if param == Param::Mechanism {
                    return Err(HarnessError::config("`mechanism` axis takes `values`, not `grid`"));
                }
                if g.points == 0 {
                    return Err(HarnessError::config(format!("grid for `{}` is empty", self.param)));
                }
                if !(g.start.is_finite() && g.stop.is_finite()) || (g.points > 1 && g.stop <= g.start) {
                    return Err(HarnessError::config(format!(
                        "grid for `{}` must have finite start < stop",
                        self.param
                    )));
                }
                if g.scale == GridScale::Log && g.start <= 0.0 {
                    return Err(HarnessError::config(format!(
                        "log grid for `{}` needs start > 0",
                        self.param
                    )));
                }
                g.expand().into_iter().map(AxisValue::Number).collect()
            }
            _ => {
                return Err(HarnessError::config(format!(
                    "sweep `{}` needs exactly one of `values` or `grid`",
                    self.param
                )))
            }
        };
        if raw.is_empty() {
            return Err(HarnessError::config(format!(
                "sweep grid for `{}` is empty",
                self.param
            )));
        }
        let points = raw
            .iter()
            .map(|v| match (param, v) {
                (Param::Mechanism, AxisValue::Text(s)) => s
                    .parse::<Mechanism>()
                    .map(AxisPoint::Mechanism)
                    .map_err(|e| HarnessError::config(e.to_string())),
                (Param::Mechanism, AxisValue::Number(_)) => {
                    Err(HarnessError::config("`mechanism` values must be strings"))
                }
                (Param::P, AxisValue::Number(x)) if x.fract() == 0.0 && *x >= 1.0 => Ok(AxisPoint::Number(*x)),
                (Param::P, _) => Err(HarnessError::config("`p` values must be positive integers")),
                (_, AxisValue::Number(x)) => Ok(AxisPoint::Number(*x)),
                (_, AxisValue::Text(s)) => Err(HarnessError::config(format!(
                    "`{}` values must be numbers, got \"{s}\"",
                    self.param
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        match param {
            Param::Mechanism => {
                if points.iter().enumerate().any(|(i, p)| points[..i].contains(p)) {
                    return Err(HarnessError::config("`mechanism` values must be distinct"));
                }
            }
            _ => {
                let xs: Vec<f64> = points
                    .iter()
                    .map(|p| match p {
                        AxisPoint::Number(x) => *x,
                        AxisPoint::Mechanism(_) => unreachable!(),
                    })
                    .collect();
                if xs.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(HarnessError::config(format!(
                        "sweep grid for `{}` must be sorted strictly increasing",
                        self.param
                    )));
                }
            }
        }
        Ok(Axis { param, points })
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Self::from_table(parse_table(s)?)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, applies dotted `key=value` overrides, then validates.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::config(format!("cannot read {}: {e}", path.display())))?;
        let mut table = parse_table(&text)?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    pub fn axes(&self) -> Result<Vec<Axis>> {
        let axes = self.sweep.iter().map(SweepAxis::resolve).collect::<Result<Vec<_>>>()?;
        for (i, a) in axes.iter().enumerate() {
            if axes[..i].iter().any(|b| b.param == a.param) {
                return Err(HarnessError::config(format!(
                    "parameter `{}` swept twice",
                    a.param.name()
                )));
            }
        }
        Ok(axes)
    }

    /// Cartesian product of the sweep axes, first axis outermost.
    pub fn grid(&self) -> Result<Vec<GridPoint>> {
        let axes = self.axes()?;
        let total: usize = axes.iter().map(|a| a.points.len()).product();
        let mut out = Vec::with_capacity(total);
        for index in 0..total {
            let mut rem = index;
            let mut coords = vec![0; axes.len()];
            for (k, a) in axes.iter().enumerate().rev() {
                coords[k] = rem % a.points.len();
                rem /= a.points.len();
            }
            let mut params = self.params;
            params.seed = 0;
            for (a, &c) in axes.iter().zip(&coords) {
                set(&mut params, a.param, a.points[c]);
            }
            out.push(GridPoint { index, coords, params });
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(HarnessError::config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.trials == 0 {
            return Err(HarnessError::config("`trials` must be >= 1"));
        }
        if self.threads == Some(0) {
            return Err(HarnessError::config("`threads` must be >= 1"));
        }
        self.solver.validate()?;
        self.se.validate()?;
        let axes = self.axes()?;
        let grid = self.grid()?;
        for g in &grid {
            g.params.validate()?;
        }
        let has = |p: Param| axes.iter().any(|a| a.param == p);
        match self.kind {
            ExperimentKind::SeSweep | ExperimentKind::AmpMc => {}
            ExperimentKind::DistCompare => {
                let d = self
                    .dist
                    .as_ref()
                    .ok_or_else(|| HarnessError::config("dist-compare needs a [dist] section"))?;
                if !axes.is_empty() {
                    return Err(HarnessError::config("dist-compare does not take sweep axes"));
                }
                if self.params.mechanism != Mechanism::Objective {
                    return Err(HarnessError::config("dist-compare needs the objective mechanism"));
                }
                if d.probes.is_empty() {
                    return Err(HarnessError::config("[dist] needs at least one probe"));
                }
                if d.realizations == 0 || d.datasets == 0 || d.components_per_probe == 0 {
                    return Err(HarnessError::config(
                        "realizations, datasets and components_per_probe must be >= 1",
                    ));
                }
                if d.mode == DistMode::FixedNoise && d.probes.iter().any(|p| p.eta.is_none()) {
                    return Err(HarnessError::config("fixed-noise probes need an `eta`"));
                }
                if d.probes
                    .iter()
                    .any(|p| !p.beta0.is_finite() || p.eta.is_some_and(|e| !e.is_finite()))
                {
                    return Err(HarnessError::config("probe values must be finite"));
                }
                let needed = d.probes.len() * d.components_per_probe;
                if needed > self.params.p {
                    return Err(HarnessError::config(format!(
                        "{needed} probe components do not fit in p = {}",
                        self.params.p
                    )));
                }
            }
            ExperimentKind::PrivacySweep => {
                if grid.iter().any(|g| !(g.params.sigma_eta > 0.0)) {
                    return Err(HarnessError::config("privacy-sweep needs sigma_eta > 0 at every point"));
                }
            }
            ExperimentKind::Tradeoff => {
                if !has(Param::SigmaEta) {
                    return Err(HarnessError::config("tradeoff needs a `sigma_eta` sweep axis"));
                }
                if grid.iter().any(|g| !(g.params.sigma_eta > 0.0)) {
                    return Err(HarnessError::config("tradeoff needs sigma_eta > 0 on its grid"));
                }
                let [we, wk] = self.tradeoff.weights;
                if !(we >= 0.0 && wk >= 0.0 && we + wk > 0.0) {
                    return Err(HarnessError::config("tradeoff weights must be >= 0 and not both zero"));
                }
            }
            ExperimentKind::StabilityMap => {
                if axes.len() != 2 || has(Param::Mechanism) {
                    return Err(HarnessError::config(
                        "stability-map needs exactly two numeric sweep axes (slice axis, scanned axis)",
                    ));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, excluding output location and thread count.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.threads = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn parse_table(s: &str) -> Result<toml::Table> {
    s.parse::<toml::Table>()
        .map_err(|e| HarnessError::config(format!("TOML syntax: {}", e.message())))
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `a.b.0.c=value`; numeric segments index arrays, missing tables are created.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| HarnessError::config(format!("override `{spec}` is not key=value")))?;
    let segments: Vec<&str> = key.trim().split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(HarnessError::config(format!("override key `{key}` is malformed")));
    }
    let value = parse_value(raw.trim());
    let mut cur = table
        .entry(segments[0].to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    if segments.len() == 1 {
        *cur = value;
        return Ok(());
    }
    for (depth, seg) in segments.iter().enumerate().skip(1) {
        let last = depth == segments.len() - 1;
        cur = match cur {
            toml::Value::Table(t) => {
                if last {
                    t.insert(seg.to_string(), value);
                    return Ok(());
                }
                t.entry(seg.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            }
            toml::Value::Array(a) => {
                let i: usize = seg
                    .parse()
                    .map_err(|_| HarnessError::config(format!("`{seg}` in `{key}` must index an array")))?;
                let len = a.len();
                let slot = a
                    .get_mut(i)
                    .ok_or_else(|| HarnessError::config(format!("index {i} in `{key}` out of range ({len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(HarnessError::config(format!("`{key}` descends into a scalar"))),
        };
    }
    unreachable!("loop returns on the last segment")
}
