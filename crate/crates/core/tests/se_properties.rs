use privlasso_core::privacy::{
    cwonavekl_numeric, cwonavekl_objective, cwonavekl_output, optimal_noise, r_factor, tradeoff_curve,
};
use privlasso_core::quadrature::QuadOptions;
use privlasso_core::state_evolution::{
    output_perturbation_asymptotics, replica_fixed_point, se_update, se_update_nested,
};
use privlasso_core::{se_fixed_point, Mechanism, ModelParams, SeOptions, SeState};
use proptest::prelude::*;

fn params() -> impl Strategy<Value = ModelParams> {
    (0.3f64..3.0, 0.02f64..0.6, 0.0f64..0.5, 0.1f64..2.5, 0.0f64..0.8).prop_map(
        |(alpha, rho, sigma_xi, lambda, sigma_eta)| ModelParams {
            alpha,
            rho,
            sigma_xi,
            lambda,
            sigma_eta,
            ..ModelParams::default()
        },
    )
}

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 64,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn converged_fixed_points_satisfy_sparsity_identity(p in params()) {
        let fp = se_fixed_point(&p, &SeOptions::default()).unwrap();
        prop_assume!(fp.converged && fp.stable);
        prop_assert!(fp.sparsity_identity_residual() < 1e-8, "residual {}", fp.sparsity_identity_residual());
        prop_assert!((fp.v - fp.rho_hat / (p.alpha - fp.rho_hat)).abs() < 1e-7 * (1.0 + fp.v));
        let ratio = fp.e_gen / fp.e_train;
        prop_assert!((ratio - (1.0 + fp.v).powi(2)).abs() < 1e-10 * ratio);
        prop_assert!(fp.e_gen >= p.sigma_xi * p.sigma_xi);
        prop_assert!((0.0..=1.0).contains(&fp.rho_hat));
    }

    #[test]
    fn closed_form_map_matches_nested_quadrature(p in params(), e in 0.01f64..2.0, v in 0.0f64..3.0) {
        let s = SeState { e, v };
        let fast = se_update(&s, &p).unwrap();
        let slow = se_update_nested(&s, &p, &QuadOptions::tight()).unwrap();
        prop_assert!((fast.e - slow.e).abs() < 1e-8 * (1.0 + fast.e), "{} vs {}", fast.e, slow.e);
        prop_assert!((fast.v - slow.v).abs() < 1e-8 * (1.0 + fast.v), "{} vs {}", fast.v, slow.v);
    }

    #[test]
    fn output_divergence_scales_inverse_square(e in 0.01f64..1.0, rho in 0.01f64..1.0, alpha in 0.2f64..4.0, s in 0.01f64..3.0) {
        let a = cwonavekl_output(e, rho, alpha, s).unwrap();
        let b = cwonavekl_output(e, rho, alpha, 2.0 * s).unwrap();
        prop_assert!((a / b - 4.0).abs() < 1e-12);
        prop_assert!(cwonavekl_output(e, rho, alpha, s * 1.1).unwrap() < a);
    }

    #[test]
    fn output_shift_is_exactly_the_noise_variance(p in params(), s in 0.0f64..3.0) {
        let fp0 = se_fixed_point(&ModelParams { sigma_eta: 0.0, ..p }, &SeOptions::default()).unwrap();
        let (e_gen, e_train) = output_perturbation_asymptotics(&fp0, s).unwrap();
        prop_assert!((e_gen - fp0.e_gen - s * s).abs() <= 2.0 * f64::EPSILON * e_gen);
        prop_assert!((e_train - fp0.e_train - s * s).abs() <= 4.0 * f64::EPSILON * (e_train + s * s));
    }
}

#[test]
fn replica_error_matches_state_evolution_across_parameters() {
    for (alpha, rho, lambda, sigma_eta) in [(0.5, 0.1, 1.0, 0.3), (2.0, 0.3, 0.5, 0.0), (1.0, 0.2, 1.5, 0.6)] {
        let p = ModelParams {
            alpha,
            rho,
            sigma_xi: 0.1,
            lambda,
            sigma_eta,
            ..ModelParams::default()
        };
        let se = se_fixed_point(&p, &SeOptions::default()).unwrap();
        let rs = replica_fixed_point(&p, &SeOptions::default()).unwrap();
        assert!(rs.converged);
        assert!((rs.error(&p) - se.e).abs() < 1e-7, "{} vs {}", rs.error(&p), se.e);
        assert!((rs.chi - se.sigma * se.rho_hat).abs() < 1e-7);
    }
}

#[test]
fn numeric_divergence_converges_to_expansion() {
    let p = ModelParams {
        alpha: 0.5,
        rho: 0.1,
        sigma_xi: 0.1,
        lambda: 1.0,
        sigma_eta: 0.3,
        ..ModelParams::default()
    };
    let fp = se_fixed_point(&p, &SeOptions::default()).unwrap();
    let analytic = cwonavekl_objective(&fp, r_factor(&fp).unwrap().value, 0.3).unwrap();
    let gaps: Vec<f64> = [1_000, 10_000, 100_000]
        .iter()
        .map(|&n| (analytic / cwonavekl_numeric(&fp, n).unwrap() - 1.0).abs())
        .collect();
    assert!(gaps[1] <= 0.05, "{gaps:?}");
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
}

#[test]
fn output_divergence_is_monotone_and_objective_is_not() {
    let base = ModelParams {
        alpha: 0.5,
        rho: 0.1,
        sigma_xi: 0.1,
        lambda: 1.0,
        ..ModelParams::default()
    };
    let grid: Vec<f64> = (0..30).map(|k| 10f64.powf(-2.0 + 2.0 * k as f64 / 29.0)).collect();
    let out = tradeoff_curve(&base, &grid, Mechanism::Output, &SeOptions::default()).unwrap();
    assert!(out.windows(2).all(|w| w[1].cwonavekl < w[0].cwonavekl));
    let obj = tradeoff_curve(&base, &grid, Mechanism::Objective, &SeOptions::default()).unwrap();
    let kl: Vec<f64> = obj.iter().filter(|t| t.stable).map(|t| t.cwonavekl).collect();
    let rises = kl.windows(2).any(|w| w[1] > w[0]);
    let falls = kl.windows(2).any(|w| w[1] < w[0]);
    assert!(rises && falls);
}

/// Output perturbation leaks less at its optimal noise than objective
/// perturbation only for small lambda; the order flips near lambda = 0.95.
#[test]
fn optimal_divergence_ordering_depends_on_lambda() {
    let grid: Vec<f64> = (0..400).map(|k| 10f64.powf(-3.0 + 4.0 * k as f64 / 399.0)).collect();
    let at_optimum = |lambda: f64, mechanism: Mechanism| {
        let base = ModelParams {
            alpha: 0.5,
            rho: 0.1,
            sigma_xi: 0.1,
            lambda,
            ..ModelParams::default()
        };
        optimal_noise(&tradeoff_curve(&base, &grid, mechanism, &SeOptions::default()).unwrap())
            .unwrap()
            .cwonavekl
    };
    for lambda in [0.5, 0.8] {
        assert!(
            at_optimum(lambda, Mechanism::Output) < at_optimum(lambda, Mechanism::Objective),
            "lambda {lambda}"
        );
    }
    for lambda in [1.0, 1.5, 2.0] {
        assert!(
            at_optimum(lambda, Mechanism::Output) > at_optimum(lambda, Mechanism::Objective),
            "lambda {lambda}"
        );
    }
}
