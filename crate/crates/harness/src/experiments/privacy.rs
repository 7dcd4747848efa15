use privlasso_core::privacy::{
    asymptotic_sensitivity, optimal_noise_weighted, privacy_report, sensitivity_monte_carlo, tradeoff_curve,
    SensitivityEstimate,
};
use privlasso_core::{se_fixed_point, Error as CoreError, Mechanism, ModelParams, TradeoffPoint};
use serde_json::json;

use crate::config::{ExperimentConfig, Param};
use crate::error::Result;
use crate::output::{param_cells, Cell, RunOutput, Table};

use super::{par_map, trial_seed};

/// Noise-free, mechanism-free key of a point; sensitivity depends on nothing else.
fn noiseless(p: &ModelParams) -> ModelParams {
    ModelParams {
        sigma_eta: 0.0,
        mechanism: Mechanism::Objective,
        seed: 0,
        ..*p
    }
}

fn unique(points: impl IntoIterator<Item = ModelParams>) -> Vec<ModelParams> {
    let mut keys: Vec<ModelParams> = Vec::new();
    for k in points {
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys
}

pub fn run_privacy_sweep(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let grid = cfg.grid()?;
    let numeric_n = cfg.privacy.numeric_n;
    let pairs = cfg.privacy.sensitivity_pairs;

    let keys = unique(grid.iter().map(|g| noiseless(&g.params)));
    let noiseless_se = par_map(keys.len(), |k| se_fixed_point(&keys[k], &cfg.se))
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let sensitivity: Vec<Option<SensitivityEstimate>> = if pairs > 0 {
        par_map(keys.len(), |k| {
            sensitivity_monte_carlo(&keys[k], pairs, &cfg.solver, trial_seed(cfg.seed, k, 0)).map(Some)
        })
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()?
    } else {
        vec![None; keys.len()]
    };

    let reports = par_map(grid.len(), |g| {
        match privacy_report(&grid[g].params, &cfg.se, numeric_n) {
            Ok(r) => Ok(Some(r)),
            Err(CoreError::NoStablePoint) => Ok(None),
            Err(e) => Err(e),
        }
    })
    .into_iter()
    .collect::<std::result::Result<Vec<_>, _>>()?;

    let mut table = Table::with_params([
        "E_gen",
        "rho_hat",
        "V",
        "stable",
        "cwonavekl",
        "cwonavekl_per_component",
        "cwonavekl_numeric",
        "r_factor",
        "r_clamp_count",
        "sensitivity_asymptotic",
        "sensitivity_mc",
        "sensitivity_mc_stderr",
        "sensitivity_valid_pairs",
    ]);
    let mut unstable = 0usize;
    for (g, report) in grid.iter().zip(&reports) {
        let k = keys
            .iter()
            .position(|k| *k == noiseless(&g.params))
            .expect("key present");
        let fp0 = &noiseless_se[k];
        let mut row = param_cells(&g.params);
        match report {
            Some(r) => row.extend([
                Cell::Float(r.e_gen),
                Cell::Float(r.se.rho_hat),
                Cell::Float(r.se.v),
                Cell::Bool(true),
                Cell::Float(r.cwonavekl_analytic),
                Cell::Float(r.per_component(g.params.p)),
                Cell::opt(r.cwonavekl_numeric),
                Cell::opt(r.r_factor),
                Cell::from(r.r_clamp_count),
            ]),
            None => {
                unstable += 1;
                row.extend([
                    Cell::Empty,
                    Cell::Empty,
                    Cell::Empty,
                    Cell::Bool(false),
                    Cell::Empty,
                    Cell::Empty,
                    Cell::Empty,
                    Cell::Empty,
                    Cell::Empty,
                ]);
            }
        }
        row.push(if fp0.stable {
            Cell::Float(asymptotic_sensitivity(fp0))
        } else {
            Cell::Empty
        });
        match &sensitivity[k] {
            Some(s) if s.valid_pairs > 0 => {
                row.extend([Cell::Float(s.mean), Cell::opt(s.stderr), Cell::from(s.valid_pairs)])
            }
            Some(s) => row.extend([Cell::Empty, Cell::Empty, Cell::from(s.valid_pairs)]),
            None => row.extend([Cell::Empty, Cell::Empty, Cell::Empty]),
        }
        table.push(row);
    }
    Ok(RunOutput {
        tables: vec![("privacy".into(), table)],
        notes: json!({ "points": grid.len(), "unstable_points": unstable, "sensitivity_pairs": pairs }),
    })
}

/// Grid points sharing every coordinate except `σ_η`, in `σ_η` order.
struct Curve {
    base: ModelParams,
    sigma_eta: Vec<f64>,
}

fn curves(cfg: &ExperimentConfig) -> Result<Vec<Curve>> {
    let axes = cfg.axes()?;
    let s_axis = axes.iter().position(|a| a.param == Param::SigmaEta).expect("validated");
    let sigma_eta = axes[s_axis].numbers();
    let mut out: Vec<Curve> = Vec::new();
    for g in cfg.grid()? {
        if g.coords[s_axis] == 0 {
            out.push(Curve {
                base: ModelParams {
                    sigma_eta: 0.0,
                    ..g.params
                },
                sigma_eta: sigma_eta.clone(),
            });
        }
    }
    Ok(out)
}

pub fn run_tradeoff(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let curves = curves(cfg)?;
    let [w_e, w_k] = cfg.tradeoff.weights;
    let computed = par_map(curves.len(), |c| -> Result<(Vec<TradeoffPoint>, f64)> {
        let cv = &curves[c];
        let pts = tradeoff_curve(&cv.base, &cv.sigma_eta, cv.base.mechanism, &cfg.se)?;
        let e0 = se_fixed_point(&cv.base, &cfg.se)?.e_gen;
        Ok((pts, e0))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut points = Table::with_params([
        "curve",
        "E_gen",
        "cwonavekl",
        "cwonavekl_per_component",
        "distance",
        "rho_hat",
        "stable",
        "optimal",
    ]);
    let mut optima = Table::with_params([
        "curve",
        "sigma_eta_star",
        "E_gen",
        "cwonavekl",
        "distance",
        "rho_hat",
        "unstable_excluded",
        "E_gen_noiseless",
    ]);
    let mut without_optimum = 0usize;
    for (c, (cv, (pts, e0))) in curves.iter().zip(&computed).enumerate() {
        let best = match optimal_noise_weighted(pts, w_e, w_k) {
            Ok(b) => Some(b),
            Err(CoreError::NoStablePoint) => None,
            Err(e) => return Err(e.into()),
        };
        for pt in pts {
            let params = ModelParams {
                sigma_eta: pt.sigma_eta,
                ..cv.base
            };
            let mut row = param_cells(&params);
            row.extend([
                Cell::from(c),
                Cell::Float(pt.e_gen),
                Cell::Float(pt.cwonavekl),
                Cell::Float(pt.cwonavekl / params.p as f64),
                Cell::Float(pt.weighted_distance(w_e, w_k)),
                Cell::Float(pt.rho_hat),
                Cell::Bool(pt.stable),
                Cell::Bool(best.is_some_and(|b| b.sigma_eta == pt.sigma_eta)),
            ]);
            points.push(row);
        }
        let excluded = pts.iter().filter(|p| !p.stable).count();
        let mut row;
        match best {
            Some(b) => {
                row = param_cells(&ModelParams {
                    sigma_eta: b.sigma_eta,
                    ..cv.base
                });
                row.extend([
                    Cell::from(c),
                    Cell::Float(b.sigma_eta),
                    Cell::Float(b.e_gen),
                    Cell::Float(b.cwonavekl),
                    Cell::Float(b.weighted_distance(w_e, w_k)),
                    Cell::Float(b.rho_hat),
                ]);
            }
            None => {
                without_optimum += 1;
                row = param_cells(&cv.base);
                row.extend([
                    Cell::from(c),
                    Cell::Empty,
                    Cell::Empty,
                    Cell::Empty,
                    Cell::Empty,
                    Cell::Empty,
                ]);
            }
        }
        row.extend([Cell::from(excluded), Cell::Float(*e0)]);
        optima.push(row);
    }
    Ok(RunOutput {
        tables: vec![("curves".into(), points), ("optima".into(), optima)],
        notes: json!({ "curves": curves.len(), "curves_without_optimum": without_optimum, "weights": [w_e, w_k] }),
    })
}
