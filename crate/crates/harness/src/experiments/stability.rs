//! Two-dimensional convergence map. The first sweep axis indexes slices, the
//! second is scanned within each slice for the first failing cell.

use privlasso_core::cd::{cd_disagreement, CdOptions};
use privlasso_core::rng::{derive_seed, Stream};
use privlasso_core::{generate_dataset, run_amp, sample_privacy_noise, se_fixed_point, Mechanism, NoiseVector};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::output::{param_cells, Cell, RunOutput, Table};

use super::{par_map, trial_seed};

#[derive(Debug, Clone, Copy, PartialEq)]
struct RunCheck {
    amp_failed: bool,
    cd_flagged: bool,
}

/// Per-cell summary of a stability map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapCell {
    pub se_margin: f64,
    pub se_stable: bool,
    pub runs: usize,
    pub amp_failures: usize,
    pub cd_flagged: Option<usize>,
}

/// First scan index along each slice where a cell fails.
#[derive(Debug, Clone, PartialEq)]
pub struct Boundary {
    pub se: Option<usize>,
    pub amp: Option<usize>,
    pub cd: Option<usize>,
}

pub fn boundaries(cells: &[MapCell], scan_len: usize) -> Vec<Boundary> {
    cells
        .chunks(scan_len)
        .map(|slice| Boundary {
            se: slice.iter().position(|c| !c.se_stable),
            amp: slice.iter().position(|c| c.amp_failures > 0),
            cd: slice.iter().position(|c| c.cd_flagged.is_some_and(|n| n > 0)),
        })
        .collect()
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let axes = cfg.axes()?;
    let grid = cfg.grid()?;
    let (slice_axis, scan_axis) = (&axes[0], &axes[1]);
    let scan_len = scan_axis.points.len();
    let trials = cfg.trials;
    let with_cd = cfg.stability.coordinate_descent;
    let cd_opts = CdOptions::mirroring(&cfg.solver);

    let se = par_map(grid.len(), |g| se_fixed_point(&grid[g].params, &cfg.se))
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let check = |g: usize, t: usize| -> Result<RunCheck> {
        let params = &grid[g].params;
        let seed = trial_seed(cfg.seed, g, t);
        let d = generate_dataset(params, seed)?;
        let eta = match params.mechanism {
            Mechanism::Objective => sample_privacy_noise(params, seed)?,
            Mechanism::Output => NoiseVector::zeros(params.p),
        };
        let fp = run_amp(&d, &eta, params.lambda, &cfg.solver)?;
        let cd_flagged = if with_cd {
            let order_seed = derive_seed(seed, Stream::Trial, &[0]);
            cd_disagreement(&d, &eta, params.lambda, &cd_opts, order_seed)?.flagged
        } else {
            false
        };
        Ok(RunCheck {
            amp_failed: !fp.converged() || fp.diverged(),
            cd_flagged,
        })
    };
    let per_cell: Vec<Vec<RunCheck>> = if cfg.stability.stop_at_first_failure {
        par_map(grid.len(), |g| -> Result<Vec<RunCheck>> {
            let mut runs = Vec::with_capacity(trials);
            for t in 0..trials {
                runs.push(check(g, t)?);
                let amp_done = runs.iter().any(|r| r.amp_failed);
                let cd_done = !with_cd || runs.iter().any(|r| r.cd_flagged);
                if amp_done && cd_done {
                    break;
                }
            }
            Ok(runs)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?
    } else {
        let flat = par_map(grid.len() * trials, |k| check(k / trials, k % trials))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        flat.chunks(trials).map(<[RunCheck]>::to_vec).collect()
    };

    let cells: Vec<MapCell> = (0..grid.len())
        .map(|g| {
            let runs = &per_cell[g];
            MapCell {
                se_margin: se[g].stability_margin,
                se_stable: se[g].stable,
                runs: runs.len(),
                amp_failures: runs.iter().filter(|r| r.amp_failed).count(),
                cd_flagged: with_cd.then(|| runs.iter().filter(|r| r.cd_flagged).count()),
            }
        })
        .collect();

    let mut table = Table::with_params(["se_margin", "se_stable", "runs", "amp_failures", "cd_flagged"]);
    for (g, c) in grid.iter().zip(&cells) {
        let mut row = param_cells(&g.params);
        row.extend([
            Cell::Float(c.se_margin),
            Cell::Bool(c.se_stable),
            Cell::from(c.runs),
            Cell::from(c.amp_failures),
            c.cd_flagged.map_or(Cell::Empty, Cell::from),
        ]);
        table.push(row);
    }

    let scan = scan_axis.numbers();
    let slice_name = slice_axis.param.name();
    let scan_name = scan_axis.param.name();
    let mut header = vec![slice_name.to_string()];
    for kind in ["se", "amp", "cd"] {
        header.push(format!("{kind}_first_{scan_name}"));
        header.push(format!("{kind}_first_index"));
    }
    let mut bounds = Table::new(header);
    let found = boundaries(&cells, scan_len);
    for (s, b) in slice_axis.numbers().iter().zip(&found) {
        let mut row = vec![Cell::Float(*s)];
        for idx in [b.se, b.amp, b.cd] {
            row.push(Cell::opt(idx.map(|i| scan[i])));
            row.push(idx.map_or(Cell::Empty, Cell::from));
        }
        bounds.push(row);
    }
    Ok(RunOutput {
        tables: vec![("cells".into(), table), ("boundaries".into(), bounds)],
        notes: json!({
            "slice_axis": slice_name,
            "scan_axis": scan_name,
            "trials_per_cell": trials,
            "coordinate_descent": with_cd,
            "stop_at_first_failure": cfg.stability.stop_at_first_failure,
        }),
    })
}
