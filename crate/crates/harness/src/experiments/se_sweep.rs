use privlasso_core::{se_fixed_point, Mechanism, ModelParams, SeFixedPoint, SeOptions};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::output::{param_cells, Cell, RunOutput, Table};

use super::par_map;

/// SE summary at one point; output perturbation shifts both errors by `σ_η²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SePoint {
    pub fp: SeFixedPoint,
    pub e_gen: f64,
    pub e_train: f64,
}

pub fn se_point(params: &ModelParams, opts: &SeOptions) -> Result<SePoint> {
    let fp = se_fixed_point(params, opts)?;
    let shift = match params.mechanism {
        Mechanism::Objective => 0.0,
        Mechanism::Output => params.sigma_eta * params.sigma_eta,
    };
    Ok(SePoint {
        fp,
        e_gen: fp.e_gen + shift,
        e_train: fp.e_train + shift,
    })
}

pub const COLUMNS: [&str; 10] = [
    "E_gen",
    "E_train",
    "rho_hat",
    "V",
    "Sigma",
    "sigma_z",
    "stability_margin",
    "stable",
    "converged",
    "iterations",
];

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let grid = cfg.grid()?;
    let points = par_map(grid.len(), |i| se_point(&grid[i].params, &cfg.se));
    let mut table = Table::with_params(COLUMNS);
    let mut unstable = 0usize;
    for (g, pt) in grid.iter().zip(points) {
        let pt = pt?;
        let fp = &pt.fp;
        unstable += (!fp.stable) as usize;
        let mut row = param_cells(&g.params);
        row.extend([
            Cell::Float(pt.e_gen),
            Cell::Float(pt.e_train),
            Cell::Float(fp.rho_hat),
            Cell::Float(fp.v),
            Cell::Float(fp.sigma),
            Cell::Float(fp.sigma_z),
            Cell::Float(fp.stability_margin),
            Cell::Bool(fp.stable),
            Cell::Bool(fp.converged),
            Cell::from(fp.iterations),
        ]);
        table.push(row);
    }
    Ok(RunOutput {
        tables: vec![("se".into(), table)],
        notes: json!({ "points": grid.len(), "unstable_points": unstable }),
    })
}
