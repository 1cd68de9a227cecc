use hazard_core::egpd::{self, EgpdParams};
use hazard_core::quad;
use proptest::prelude::*;

fn p(kappa: f64, sigma: f64, xi: f64) -> EgpdParams {
    EgpdParams::new(kappa, sigma, xi).unwrap()
}

/// Textbook GPD cdf written with plain `powf`, independent of the library.
fn gpd_cdf(x: f64, sigma: f64, xi: f64) -> f64 {
    1.0 - (1.0 + xi * x / sigma).powf(-1.0 / xi)
}

fn param_grid() -> Vec<EgpdParams> {
    let mut v = Vec::new();
    for &kappa in &[0.3, 1.0, 2.0, 7.5] {
        for &sigma in &[0.01, 1.0, 40.0] {
            for &xi in &[0.05, 0.3, 0.9] {
                v.push(p(kappa, sigma, xi));
            }
        }
    }
    v
}

fn level_grid() -> Vec<f64> {
    // dense in both tails down to 1e-6
    let mut u: Vec<f64> = (0..=60).map(|i| 10f64.powf(-6.0 + 0.1 * i as f64)).filter(|u| *u < 1.0).collect();
    u.extend((1..100).map(|i| i as f64 / 100.0));
    u.extend((0..=50).map(|i| 1.0 - 10f64.powf(-6.0 + 0.1 * i as f64)));
    u
}

#[test]
fn cdf_matches_direct_substitution() {
    // {1 - 1.5^-2}^2 = (5/9)^2
    let expected = (5.0_f64 / 9.0).powi(2);
    assert!((egpd::cdf(1.0, &p(2.0, 1.0, 0.5)).unwrap() - expected).abs() < 1e-12);
    assert!((expected - 0.308642).abs() < 1e-6);
    assert_eq!(egpd::cdf(1.0, &p(1.0, 1.0, 1.0)).unwrap(), 0.5);
    assert_eq!(egpd::cdf(0.0, &p(3.0, 2.0, 0.1)).unwrap(), 0.0);
}

#[test]
fn unit_kappa_is_the_gpd_to_machine_precision() {
    for &(sigma, xi) in &[(1.0, 0.1), (0.02, 0.3), (15.0, 0.7), (3.0, 1.5)] {
        for i in 1..400 {
            let x = 1e-4 * 1.05f64.powi(i) * sigma;
            let lib = egpd::cdf(x, &p(1.0, sigma, xi)).unwrap();
            let reference = gpd_cdf(x, sigma, xi);
            // a handful of ulps, measured on the larger of the value and its complement
            let scale = lib.max(1.0 - lib).max(f64::MIN_POSITIVE);
            assert!(
                (lib - reference).abs() <= 8.0 * f64::EPSILON * scale.max(reference),
                "x={x} sigma={sigma} xi={xi}: {lib} vs {reference}"
            );
        }
    }
}

#[test]
fn quantile_round_trip_within_1e10() {
    let mut worst: f64 = 0.0;
    for params in param_grid() {
        for &u in &level_grid() {
            let x = egpd::quantile(u, &params).unwrap();
            let back = egpd::cdf(x, &params).unwrap();
            worst = worst.max((back - u).abs() / u);
        }
    }
    assert!(worst <= 1e-10, "worst relative round-trip error {worst:e}");
}

#[test]
fn closed_form_quantiles() {
    assert!((egpd::quantile(0.5, &p(1.0, 1.0, 1.0)).unwrap() - 1.0).abs() < 1e-12);
    let rl = 10.0 / 0.2 * (0.1f64.powf(-0.2) - 1.0);
    assert!((egpd::quantile(0.9, &p(1.0, 10.0, 0.2)).unwrap() - rl).abs() < 1e-10);
    assert!((rl - 29.2446).abs() < 1e-3);
}

#[test]
fn density_examples() {
    assert!((egpd::pdf(1.0, &p(1.0, 1.0, 1.0)).unwrap() - 0.25).abs() < 1e-14);
    assert!((egpd::logpdf(1.0, &p(1.0, 1.0, 1.0)).unwrap() - 0.25f64.ln()).abs() < 1e-9);
    let q = p(2.0, 1.0, 0.5);
    for &x in &[0.01, 1.0, 100.0] {
        let direct = egpd::pdf(x, &q).unwrap();
        let via_log = egpd::logpdf(x, &q).unwrap().exp();
        assert!((direct - via_log).abs() <= 1e-10 * direct);
    }
    assert!(egpd::pdf(1e-12, &q).unwrap() < 1e-10);
    assert!(egpd::logpdf(1e12, &p(1.0, 1.0, 0.3)).unwrap().is_finite());
}

/// Density integrated over (0, inf) by mapping to t in (0, 1).
fn total_mass(params: &EgpdParams) -> f64 {
    let f = |t: f64| {
        if t <= 0.0 || t >= 1.0 {
            return 0.0;
        }
        let x = params.sigma * t / (1.0 - t);
        egpd::pdf(x, params).unwrap() * params.sigma / (1.0 - t).powi(2)
    };
    quad::integrate(f, 0.0, 1.0, 1e-9, 4096).unwrap().value
}

#[test]
fn density_integrates_to_one() {
    for params in [p(2.0, 1.0, 0.5), p(1.0, 0.3, 0.2), p(0.7, 5.0, 0.4), p(6.0, 0.02, 0.1)] {
        let mass = total_mass(&params);
        assert!((mass - 1.0).abs() < 1e-6, "{params:?}: {mass}");
    }
}

#[test]
fn samples_follow_the_cdf() {
    let params = p(2.0, 1.0, 0.3);
    let n = 1_000_000;
    let mut xs = egpd::sample(n, &params, 42).unwrap();
    assert!(xs.iter().all(|x| *x > 0.0));
    assert_eq!(egpd::sample(5, &params, 42).unwrap(), egpd::sample(5, &params, 42).unwrap());
    xs.sort_by(f64::total_cmp);
    let mut ks: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let f = egpd::cdf(*x, &params).unwrap();
        ks = ks.max((f - i as f64 / n as f64).abs()).max(((i + 1) as f64 / n as f64 - f).abs());
    }
    assert!(ks < 0.002, "KS statistic {ks}");
}

#[test]
fn truncated_cdf_is_the_ratio() {
    let q = p(1.0, 0.01, 0.5);
    let ratio = egpd::cdf(0.5, &q).unwrap() / egpd::cdf(1.0, &q).unwrap();
    assert_eq!(egpd::truncated_cdf(0.5, &q).unwrap(), ratio);
    assert_eq!(egpd::truncated_cdf(1.0, &q).unwrap(), 1.0);
    assert_eq!(egpd::truncated_cdf(0.0, &q).unwrap(), 0.0);
    assert!(egpd::truncated_cdf(1.5, &q).is_err());
}

#[test]
fn mle_recovers_generating_parameters() {
    let truth = p(2.0, 1.0, 0.3);
    let data = egpd::sample(50_000, &truth, 7).unwrap();
    let fit = egpd::fit_mle(&data, &p(1.0, 1.0, 0.1)).unwrap();
    assert!(fit.nll <= fit.init_nll);
    for (got, want) in [(fit.params.kappa, 2.0), (fit.params.sigma, 1.0), (fit.params.xi, 0.3)] {
        assert!((got / want - 1.0).abs() < 0.10, "{:?}", fit.params);
    }
}

#[test]
fn mle_refuses_a_single_point() {
    assert!(egpd::fit_mle(&[1.0], &p(1.0, 1.0, 0.1)).is_err());
}

fn params_strategy() -> impl Strategy<Value = EgpdParams> {
    (0.2f64..8.0, 0.01f64..50.0, 0.02f64..1.2).prop_map(|(k, s, x)| p(k, s, x))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn cdf_strictly_increasing(params in params_strategy(), a in 1e-3f64..1e3, b in 1e-3f64..1e3) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(hi > lo * (1.0 + 1e-9));
        let (flo, fhi) = (egpd::cdf(lo * params.sigma, &params).unwrap(), egpd::cdf(hi * params.sigma, &params).unwrap());
        let (slo, shi) = (egpd::sf(lo * params.sigma, &params).unwrap(), egpd::sf(hi * params.sigma, &params).unwrap());
        // in the far upper tail the cdf saturates at 1, the survival function does not
        prop_assert!(flo < fhi || (flo == 1.0 && slo > shi));
    }

    #[test]
    fn larger_scale_is_stochastically_larger(
        params in params_strategy(),
        ratio in 1.001f64..10.0,
        x in 1e-3f64..1e3,
    ) {
        let wider = params.with_sigma(params.sigma * ratio);
        prop_assert!(egpd::cdf(x, &params).unwrap() >= egpd::cdf(x, &wider).unwrap());
    }

    #[test]
    fn quantile_inverts_cdf(params in params_strategy(), lu in -13.8f64..-1e-6) {
        // u in [1e-6, 1 - 1e-6]
        let u = lu.exp().clamp(1e-6, 1.0 - 1e-6);
        let x = egpd::quantile(u, &params).unwrap();
        let back = egpd::cdf(x, &params).unwrap();
        prop_assert!((back - u).abs() <= 1e-10 * u);
    }

    #[test]
    fn density_is_the_cdf_slope(params in params_strategy(), z in 0.01f64..20.0) {
        let x = z * params.sigma;
        let h = 1e-6 * x.max(1.0);
        // difference whichever of cdf/sf is small to avoid cancellation
        let fd = if egpd::cdf(x, &params).unwrap() < 0.5 {
            (egpd::cdf(x + h, &params).unwrap() - egpd::cdf(x - h, &params).unwrap()) / (2.0 * h)
        } else {
            (egpd::sf(x - h, &params).unwrap() - egpd::sf(x + h, &params).unwrap()) / (2.0 * h)
        };
        let d = egpd::pdf(x, &params).unwrap();
        prop_assume!(d > 1e-200);
        prop_assert!((fd - d).abs() <= 1e-5 * d, "fd {fd} pdf {d}");
    }
}
