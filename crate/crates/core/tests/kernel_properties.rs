use privlasso_core::quadrature::{integrate_with_breaks, QuadOptions};
use privlasso_core::scalar_kernel::{
    active_probability, active_probability_derivs, continuous_density, local_variance, se_kl, soft_threshold,
    ScalarChannel,
};
use proptest::prelude::*;

fn channel() -> impl Strategy<Value = ScalarChannel> {
    (0.2f64..4.0, 0.1f64..2.0, 0.05f64..1.5, -4.0f64..4.0)
        .prop_map(|(sigma, lambda, sigma_eta, m_hat)| ScalarChannel::new(sigma, lambda, sigma_eta, m_hat).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn soft_threshold_is_odd_and_one_lipschitz(
        sigma in 0.01f64..5.0, lambda in 0.01f64..3.0, a in -10.0f64..10.0, b in -10.0f64..10.0,
    ) {
        prop_assert_eq!(soft_threshold(sigma, -a, lambda), -soft_threshold(sigma, a, lambda));
        let d = (soft_threshold(sigma, a, lambda) - soft_threshold(sigma, b, lambda)).abs();
        prop_assert!(d <= (a - b).abs() + 1e-15);
        if a.abs() <= lambda * sigma {
            prop_assert_eq!(soft_threshold(sigma, a, lambda), 0.0);
            prop_assert_eq!(local_variance(sigma, a, lambda), 0.0);
        } else {
            prop_assert_eq!(local_variance(sigma, a, lambda), sigma);
        }
    }

    #[test]
    fn active_probability_is_a_probability_symmetric_in_field(ch in channel()) {
        let r = active_probability(&ch);
        prop_assert!((0.0..=1.0).contains(&r));
        let mirrored = ScalarChannel { m_hat: -ch.m_hat, ..ch };
        prop_assert!((active_probability(&mirrored) - r).abs() < 1e-14);
        prop_assert!((r + ch.inactive_probability() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn active_probability_grows_with_field_magnitude(ch in channel(), bump in 0.01f64..2.0) {
        let far = ScalarChannel { m_hat: ch.m_hat.abs() + bump, ..ch };
        let near = ScalarChannel { m_hat: ch.m_hat.abs(), ..ch };
        prop_assert!(active_probability(&far) >= active_probability(&near) - 1e-15);
    }

    #[test]
    fn derivatives_match_finite_differences(ch in channel()) {
        let (d1, d2) = active_probability_derivs(&ch).unwrap();
        let h = 1e-4 * ch.spread().max(1e-2);
        let at = |m: f64| active_probability(&ScalarChannel { m_hat: m, ..ch });
        let at1 = |m: f64| active_probability_derivs(&ScalarChannel { m_hat: m, ..ch }).unwrap().0;
        let fd1 = (at(ch.m_hat + h) - at(ch.m_hat - h)) / (2.0 * h);
        let fd2 = (at1(ch.m_hat + h) - at1(ch.m_hat - h)) / (2.0 * h);
        let scale1 = d1.abs().max(1e-3 / ch.spread());
        let scale2 = d2.abs().max(1e-3 / (ch.spread() * ch.spread()));
        prop_assert!((fd1 - d1).abs() <= 1e-6 * scale1, "first: {} vs {}", fd1, d1);
        prop_assert!((fd2 - d2).abs() <= 1e-6 * scale2, "second: {} vs {}", fd2, d2);
    }

    #[test]
    fn law_has_unit_mass(ch in channel()) {
        let s = ch.spread();
        let (lo, hi) = (ch.m_hat - ch.threshold() - 14.0 * s, ch.m_hat + ch.threshold() + 14.0 * s);
        let mut breaks = vec![lo.min(-s), 0.0, ch.m_hat - ch.threshold(), ch.m_hat + ch.threshold(), hi.max(s)];
        breaks.sort_by(f64::total_cmp);
        let mass = integrate_with_breaks(|b| continuous_density(&ch, b), &breaks, &QuadOptions::tight())
            .unwrap()
            .value;
        prop_assert!((mass + ch.inactive_probability() - 1.0).abs() < 1e-8, "mass {}", mass);
    }

    #[test]
    fn kl_is_nonnegative_and_vanishes_on_identical_laws(a in channel(), shift in -0.5f64..0.5, scale in 0.7f64..1.4) {
        let b = ScalarChannel { m_hat: a.m_hat + shift, sigma: a.sigma * scale, ..a };
        prop_assume!(a.inactive_probability() > 0.0 && b.inactive_probability() > 0.0);
        let kl = se_kl(&a, &b).unwrap();
        prop_assert!(kl >= 0.0 && kl.is_finite());
        prop_assert!(se_kl(&a, &a).unwrap().abs() < 1e-12);
    }
}

#[test]
fn kl_nonnegative_on_ten_thousand_random_pairs() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let (mut worst, mut finite) = (f64::INFINITY, 0);
    for _ in 0..10_000 {
        let mut draw = || {
            ScalarChannel::new(
                rng.gen_range(0.2..4.0),
                rng.gen_range(0.1..2.0),
                rng.gen_range(0.05..1.5),
                rng.gen_range(-4.0..4.0),
            )
            .unwrap()
        };
        let (a, b) = (draw(), draw());
        let b = ScalarChannel {
            lambda: a.lambda,
            sigma_eta: a.sigma_eta,
            ..b
        };
        match se_kl(&a, &b) {
            Ok(kl) => {
                assert!(kl.is_finite());
                worst = worst.min(kl);
                finite += 1;
            }
            // reference atom underflowed: the divergence is +inf
            Err(privlasso_core::Error::InfiniteDivergence(_)) => {}
            Err(e) => panic!("{e}"),
        }
    }
    assert!(worst >= 0.0);
    assert!(finite > 9_000, "only {finite} finite pairs");
}

#[test]
fn kl_matches_direct_quadrature() {
    let a = ScalarChannel::new(1.3, 0.8, 0.4, 0.9).unwrap();
    for b in [
        ScalarChannel { m_hat: 1.1, ..a },
        ScalarChannel { sigma: 1.5, ..a },
        ScalarChannel {
            m_hat: -0.2,
            sigma: 1.1,
            ..a
        },
    ] {
        let (pa, pb) = (a.inactive_probability(), b.inactive_probability());
        let integrand = |x: f64| {
            let (fa, fb) = (continuous_density(&a, x), continuous_density(&b, x));
            if fa > 0.0 {
                fa * (fa / fb).ln()
            } else {
                0.0
            }
        };
        let cont = integrate_with_breaks(integrand, &[-12.0, 0.0, 12.0], &QuadOptions::tight())
            .unwrap()
            .value;
        let direct = pa * (pa / pb).ln() + cont;
        let kl = se_kl(&a, &b).unwrap();
        assert!((kl - direct).abs() < 1e-9 * direct.max(1e-3), "{kl} vs {direct}");
    }
}
