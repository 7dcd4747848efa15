use privlasso_core::stats::MeanAccumulator;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::output::{param_cells, Cell, RunOutput, Table};

use super::se_sweep::se_point;
use super::{amp_trial, metric_columns, par_map, summary_cells, trial_seed};

const METRICS: [&str; 4] = ["rho_hat", "E_gen", "E_train", "ratio"];

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let grid = cfg.grid()?;
    let trials = cfg.trials;
    let with_stderr = trials > 1;
    let outcomes = par_map(grid.len() * trials, |k| {
        let (g, t) = (k / trials, k % trials);
        amp_trial(&grid[g].params, trial_seed(cfg.seed, g, t), &cfg.solver)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let se = par_map(grid.len(), |g| se_point(&grid[g].params, &cfg.se))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut header = vec![
        "trials".to_string(),
        "converged_runs".into(),
        "converged_fraction".into(),
    ];
    header.extend(metric_columns(&METRICS, with_stderr));
    header.extend(
        [
            "mean_iterations",
            "se_rho_hat",
            "se_E_gen",
            "se_E_train",
            "se_ratio",
            "se_V",
            "se_stable",
        ]
        .map(String::from),
    );
    let mut table = Table::with_params(header);
    let mut all_diverged = 0usize;
    for (g, point) in grid.iter().enumerate() {
        let mut acc: [MeanAccumulator; 4] = Default::default();
        let mut iters = MeanAccumulator::new();
        for o in &outcomes[g * trials..(g + 1) * trials] {
            if !o.converged {
                continue;
            }
            acc[0].push(o.rho_hat);
            acc[1].push(o.e_gen);
            acc[2].push(o.e_train);
            acc[3].push(o.e_gen / o.e_train);
            iters.push(o.iterations as f64);
        }
        let converged = acc[0].count();
        all_diverged += (converged == 0) as usize;
        let s = &se[g];
        let mut row = param_cells(&point.params);
        row.extend([
            Cell::from(trials),
            Cell::from(converged),
            Cell::Float(converged as f64 / trials as f64),
        ]);
        for a in &acc {
            row.extend(summary_cells(a, with_stderr));
        }
        row.extend([
            if converged > 0 {
                Cell::Float(iters.mean())
            } else {
                Cell::Empty
            },
            Cell::Float(s.fp.rho_hat),
            Cell::Float(s.e_gen),
            Cell::Float(s.e_train),
            Cell::Float(s.e_gen / s.e_train),
            Cell::Float(s.fp.v),
            Cell::Bool(s.fp.stable),
        ]);
        table.push(row);
    }
    Ok(RunOutput {
        tables: vec![("amp_mc".into(), table)],
        notes: json!({ "points": grid.len(), "trials": trials, "all_diverged_points": all_diverged }),
    })
}
