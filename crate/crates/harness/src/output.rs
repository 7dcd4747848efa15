//! Tables, CSV emission and the per-run JSON sidecar.
//!
//! Floats are written with 17 significant digits in scientific notation,
//! which round-trips every `f64`. Missing values are empty fields.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use privlasso_core::ModelParams;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(u64),
    Bool(bool),
    Text(String),
    Empty,
}

impl Cell {
    pub fn opt(v: Option<f64>) -> Cell {
        v.map_or(Cell::Empty, Cell::Float)
    }

    pub fn render(&self) -> String {
        match self {
            Cell::Float(x) => format_float(*x),
            Cell::Int(i) => i.to_string(),
            Cell::Bool(b) => b.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Float(x) => Some(*x),
            Cell::Int(i) => Some(*i as f64),
            _ => None,
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as u64)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Bool(x)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_string())
    }
}

pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

/// Column names echoing the full parameter tuple.
pub const PARAM_COLUMNS: [&str; 8] = [
    "alpha",
    "rho",
    "sigma_beta",
    "sigma_xi",
    "lambda",
    "sigma_eta",
    "mechanism",
    "p",
];

pub fn param_cells(p: &ModelParams) -> Vec<Cell> {
    vec![
        p.alpha.into(),
        p.rho.into(),
        p.sigma_beta.into(),
        p.sigma_xi.into(),
        p.lambda.into(),
        p.sigma_eta.into(),
        Cell::Text(p.mechanism.to_string()),
        p.p.into(),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(|s| s.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Header starting with the parameter columns.
    pub fn with_params<S: AsRef<str>>(extra: impl IntoIterator<Item = S>) -> Self {
        let mut header: Vec<String> = PARAM_COLUMNS.iter().map(|s| s.to_string()).collect();
        header.extend(extra.into_iter().map(|s| s.as_ref().to_string()));
        Self {
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.header.len(), "row width differs from header");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Values of a numeric column; non-numeric cells become `None`.
    pub fn floats(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let c = self.column(name)?;
        Some(self.rows.iter().map(|r| r[c].as_f64()).collect())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)?;
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Named tables produced by one run, plus kind-specific notes for the sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub tables: Vec<(String, Table)>,
    pub notes: serde_json::Value,
}

impl RunOutput {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Sidecar<'a> {
    pub kind: String,
    pub version: &'static str,
    pub config_hash: String,
    pub seed: u64,
    pub wall_time_seconds: f64,
    pub threads: usize,
    pub files: Vec<String>,
    pub notes: &'a serde_json::Value,
    pub config: &'a ExperimentConfig,
}

/// Writes every table as `<name>.csv` and the sidecar as `run.json`.
pub fn write_run(
    dir: &Path,
    cfg: &ExperimentConfig,
    out: &RunOutput,
    wall_time_seconds: f64,
    threads: usize,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for (name, table) in &out.tables {
        let path = dir.join(format!("{name}.csv"));
        table.write_csv(&path)?;
        files.push(path);
    }
    let sidecar = Sidecar {
        kind: cfg.kind.to_string(),
        version: env!("CARGO_PKG_VERSION"),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        wall_time_seconds,
        threads,
        files: out.tables.iter().map(|(n, _)| format!("{n}.csv")).collect(),
        notes: &out.notes,
        config: cfg,
    };
    let path = dir.join("run.json");
    serde_json::to_writer_pretty(BufWriter::new(File::create(&path)?), &sidecar)
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    files.push(path);
    Ok(files)
}
