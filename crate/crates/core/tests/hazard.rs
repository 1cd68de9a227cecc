use std::collections::BTreeMap;

use hazard_core::data::{site_covariates, simulate, FeatureRole, GeneratorSpec};
use hazard_core::egpd::{self, EgpdParams};
use hazard_core::frequency::ReturnLevelSet;
use hazard_core::hazard::{
    classify_change, hazard_area_table, hazard_record, hypothesised_hazard, intensity, rank_bins, read_surfaces_csv,
    scenario_change, severity_threshold, write_surfaces_csv, ChangeClass, ClassCuts, HazardClass, HazardComponents,
    HazardSurface, Scenario, SeverityThreshold, SiteHazard, H_FLOOR, NO_CHANGE_BAND,
};
use hazard_core::seed;
use hazard_core::training::{train, TrainConfig};
use hazard_core::HazardError;
use proptest::prelude::*;
use rand::Rng;

fn threshold(q: f64, a_q: f64) -> SeverityThreshold {
    SeverityThreshold { q, a_q, n_positive: 0 }
}

#[test]
fn severity_threshold_interpolates_order_statistics() {
    // position 1 + 3 * 0.5 = 2.5 lies halfway between 0.2 and 0.3
    assert!((severity_threshold(&[0.3, 0.1, 0.4, 0.2], 0.5).unwrap().a_q - 0.25).abs() < 1e-15);
    assert_eq!(severity_threshold(&[0.3], 0.5).unwrap().a_q, 0.3);
    let t = severity_threshold(&[0.1, 0.2, 0.3, 0.4, 0.5], 0.05).unwrap();
    assert!((t.a_q - 0.12).abs() < 1e-15);
    assert_eq!(t.n_positive, 5);
    assert!(severity_threshold(&[], 0.5).is_err());
    assert!(severity_threshold(&[0.1, 1.2], 0.5).is_err());
    assert!(severity_threshold(&[0.1], 1.0).is_err());
}

#[test]
fn intensity_examples() {
    assert!((intensity(1.0, 1.0, 1.0, &threshold(0.5, 1.0)).unwrap() - 0.5).abs() < 1e-15);
    let p = EgpdParams::new(2.0, 0.05, 0.3).unwrap();
    let a = egpd::quantile(0.95, &p).unwrap();
    assert!((intensity(0.05, 2.0, 0.3, &threshold(0.95, a)).unwrap() - 0.05).abs() < 1e-10);
    assert!(intensity(1e-9, 2.0, 0.3, &threshold(0.5, 0.01)).unwrap() < 1e-12);
}

#[test]
fn hazard_is_the_product_of_its_components() {
    let c = HazardComponents::new(0.5, 0.4);
    assert!((c.h - 0.2).abs() < 1e-15);
    assert_eq!(HazardComponents::new(0.9, 0.0).h, 0.0);
}

#[test]
fn class_cuts() {
    let cuts = ClassCuts::default();
    let cases = [
        (0.0, HazardClass::None),
        (0.009, HazardClass::None),
        (0.01, HazardClass::VeryLow),
        (0.07, HazardClass::Low),
        (0.10, HazardClass::Moderate),
        (0.3, HazardClass::High),
        (0.5, HazardClass::VeryHigh),
        (1.0, HazardClass::VeryHigh),
    ];
    for (h, class) in cases {
        assert_eq!(cuts.classify(h), class, "h={h}");
    }
    assert!(ClassCuts([0.1, 0.05, 0.2, 0.3, 0.4]).validate().is_err());
}

#[test]
fn change_band_examples() {
    let (rel, class) = classify_change(0.10, 0.25, NO_CHANGE_BAND, H_FLOOR);
    assert!((rel.unwrap() - 1.5).abs() < 1e-12);
    assert_eq!(class, ChangeClass::Increase);
    let (rel, class) = classify_change(0.10, 0.11, NO_CHANGE_BAND, H_FLOOR);
    assert!((rel.unwrap() - 0.1).abs() < 1e-12);
    assert_eq!(class, ChangeClass::NoChange);
    assert_eq!(classify_change(0.10, 0.07, NO_CHANGE_BAND, H_FLOOR).1, ChangeClass::Decrease);
    assert_eq!(classify_change(0.3, 0.3, NO_CHANGE_BAND, H_FLOOR), (Some(0.0), ChangeClass::NoChange));
    assert_eq!(classify_change(1e-9, 0.3, NO_CHANGE_BAND, H_FLOOR), (None, ChangeClass::Indeterminate));
}

fn surface(q: f64, period: u32, values: &[(&str, f64)]) -> HazardSurface {
    HazardSurface {
        q,
        return_period: period,
        scenario: Scenario::Historical,
        sites: values
            .iter()
            .map(|(s, h)| SiteHazard {
                site_id: s.to_string(),
                p: 1.0,
                i_q: *h,
                h: *h,
            })
            .collect(),
    }
}

#[test]
fn scenario_change_checks_metadata() {
    let a = surface(0.5, 10, &[("x", 0.1), ("y", 0.2)]);
    let same = scenario_change(&a, &a, NO_CHANGE_BAND, H_FLOOR).unwrap();
    assert!(same.iter().all(|c| c.class == ChangeClass::NoChange));
    let other_q = surface(0.95, 10, &[("x", 0.1), ("y", 0.2)]);
    assert!(matches!(scenario_change(&a, &other_q, 0.2, H_FLOOR), Err(HazardError::Metadata(_))));
    let other_sites = surface(0.5, 10, &[("x", 0.1), ("z", 0.2)]);
    assert!(matches!(scenario_change(&a, &other_sites, 0.2, H_FLOOR), Err(HazardError::Metadata(_))));
}

#[test]
fn surfaces_round_trip_through_csv() {
    let mut s = surface(0.05, 20, &[("a", 0.125), ("b", 1.0 / 3.0)]);
    s.scenario = Scenario::Ssp585;
    let mut buf = Vec::new();
    write_surfaces_csv(&mut buf, &[s.clone()], &ClassCuts::default()).unwrap();
    assert_eq!(read_surfaces_csv(buf.as_slice()).unwrap(), vec![s]);
}

/// Dataset, briefly trained model and the thresholds at the usual levels.
fn trained_fixture() -> (hazard_core::data::Dataset, hazard_core::model::RegressionModel, Vec<SeverityThreshold>) {
    let ds = simulate(60, 6, &GeneratorSpec::quick_start(), 12).unwrap().0;
    let cfg = TrainConfig {
        seed: 1,
        epochs: 3,
        batch_size: 64,
        blocks: 3,
        width: 16,
        ..TrainConfig::default()
    };
    let model = train(&ds, &cfg).unwrap().model;
    let positives: Vec<f64> = ds.records.iter().filter(|r| r.landslide).map(|r| r.area_density).collect();
    let thresholds = [0.05, 0.5, 0.95]
        .iter()
        .map(|q| severity_threshold(&positives, *q).unwrap())
        .collect();
    (ds, model, thresholds)
}

#[test]
fn observed_drivers_reproduce_the_record_hazard() {
    let (ds, model, thresholds) = trained_fixture();
    let [i_max, i_mean, i_sd] = model.driver_positions().unwrap();
    let ndvi: Vec<usize> = ds
        .schema
        .features
        .iter()
        .enumerate()
        .filter(|(_, f)| f.effective_role() == FeatureRole::Ndvi)
        .map(|(j, _)| j)
        .collect();
    assert!(!ndvi.is_empty());
    let covariates = site_covariates(&ds);

    // every site gets the drivers of its third observed year as return levels
    let mut rls = Vec::new();
    let mut expected_features = BTreeMap::new();
    for site in covariates.keys() {
        let years: Vec<_> = ds.records.iter().filter(|r| &r.su_id == site).collect();
        let chosen = years[2];
        rls.push(ReturnLevelSet {
            site_id: site.clone(),
            return_period: 10,
            rl_max: chosen.features[i_max],
            rl_mean: chosen.features[i_mean],
            analogue_year: chosen.year,
            analogue_sd: chosen.features[i_sd],
        });
        let mut x = chosen.features.clone();
        for &j in &ndvi {
            x[j] = years.iter().map(|r| r.features[j]).sum::<f64>() / years.len() as f64;
        }
        expected_features.insert(site.clone(), x);
    }
    let surfaces = hypothesised_hazard(&model, &rls, &covariates, &thresholds, &[10], &Scenario::Historical).unwrap();
    assert_eq!(surfaces.len(), 3);
    for (s, t) in surfaces.iter().zip(&thresholds) {
        assert_eq!(s.q, t.q);
        for site in &s.sites {
            let want = hazard_record(&expected_features[&site.site_id], &model, t).unwrap();
            assert!((site.h - want.h).abs() <= 1e-12, "{}: {} vs {}", site.site_id, site.h, want.h);
            assert!((site.p - want.p).abs() <= 1e-12);
            assert!((site.i_q - want.i_q).abs() <= 1e-12);
        }
    }
}

#[test]
fn hazard_grid_has_one_surface_per_level_and_period() {
    let (ds, model, thresholds) = trained_fixture();
    let covariates = site_covariates(&ds);
    let mut rng = seed::rng(4);
    let mut rls = Vec::new();
    for site in covariates.keys() {
        for (k, p) in [5u32, 10, 15, 20].into_iter().enumerate() {
            rls.push(ReturnLevelSet {
                site_id: site.clone(),
                return_period: p,
                rl_max: 40.0 + 5.0 * k as f64 + rng.random_range(0.0..2.0),
                rl_mean: 3.0 + 0.2 * k as f64,
                analogue_year: 2000,
                analogue_sd: 5.0,
            });
        }
    }
    let surfaces =
        hypothesised_hazard(&model, &rls, &covariates, &thresholds, &[20, 5, 15, 10], &Scenario::Ssp245).unwrap();
    assert_eq!(surfaces.len(), 12);
    let keys: Vec<(f64, u32)> = surfaces.iter().map(|s| (s.q, s.return_period)).collect();
    assert_eq!(keys[..4], [(0.05, 5), (0.05, 10), (0.05, 15), (0.05, 20)]);
    for s in &surfaces {
        assert_eq!(s.sites.len(), covariates.len());
        for site in &s.sites {
            assert_eq!(site.h, site.p * site.i_q);
            assert!((0.0..=1.0).contains(&site.h));
        }
    }
    for p in [5u32, 10, 15, 20] {
        let by_q: Vec<&HazardSurface> = surfaces.iter().filter(|s| s.return_period == p).collect();
        for w in by_q.windows(2) {
            for (lo, hi) in w[0].sites.iter().zip(&w[1].sites) {
                assert!(hi.h <= lo.h, "P={p} site {}: h rose with q", lo.site_id);
            }
        }
    }

    // gaps are all reported together
    let partial: Vec<ReturnLevelSet> = rls.iter().filter(|r| r.return_period != 15).cloned().collect();
    match hypothesised_hazard(&model, &partial, &covariates, &thresholds, &[5, 15], &Scenario::Historical) {
        Err(HazardError::MissingSites(gaps)) => assert_eq!(gaps.len(), covariates.len()),
        other => panic!("expected a missing-site report, got {other:?}"),
    }

    let empty = hypothesised_hazard(&model, &[], &BTreeMap::new(), &thresholds, &[5, 10], &Scenario::Historical).unwrap();
    assert_eq!(empty.len(), 6);
    assert!(empty.iter().all(|s| s.sites.is_empty()));
}

#[test]
fn independent_uniforms_fill_the_nine_cells_evenly() {
    let n = 9000;
    let mut rng = seed::rng(77);
    let values: Vec<(String, f64)> = (0..n).map(|i| (format!("s{i:05}"), rng.random::<f64>())).collect();
    let refs: Vec<(&str, f64)> = values.iter().map(|(s, h)| (s.as_str(), *h)).collect();
    let s = surface(0.5, 10, &refs);
    let areas: BTreeMap<String, f64> = values.iter().map(|(s, _)| (s.clone(), 1.0 + rng.random::<f64>())).collect();
    let cells = hazard_area_table(&s, &areas, 3).unwrap();
    let mut counts = [[0usize; 3]; 3];
    for c in &cells {
        counts[c.hazard_bin][c.area_bin] += 1;
        assert_eq!(c.code, format!("{}-{}", c.hazard_bin + 1, c.area_bin + 1));
    }
    for row in counts {
        for count in row {
            let share = count as f64 / n as f64;
            assert!((share - 1.0 / 9.0).abs() <= 0.02, "{counts:?}");
        }
    }
    let mut missing = areas.clone();
    missing.remove("s00000");
    assert!(matches!(hazard_area_table(&s, &missing, 3), Err(HazardError::MissingSites(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rank_bins_ignore_increasing_relabelling(values in prop::collection::vec(0.0f64..100.0, 1..200), k in 1usize..6) {
        let relabelled: Vec<f64> = values.iter().map(|v| (v / 10.0).exp() + 3.0).collect();
        prop_assert_eq!(rank_bins(&values, k), rank_bins(&relabelled, k));
    }

    #[test]
    fn intensity_increases_with_scale(
        kappa in 0.3f64..6.0, xi in 0.02f64..1.0, a in 1e-4f64..0.5, s in 1e-3f64..1.0, r in 1.01f64..5.0,
    ) {
        let t = threshold(0.5, a);
        let lo = intensity(s, kappa, xi, &t).unwrap();
        let hi = intensity(s * r, kappa, xi, &t).unwrap();
        prop_assert!(hi > lo || (lo == 0.0 && hi == 0.0) || (lo == 1.0 && hi == 1.0));
        prop_assert!(hi >= lo);
    }

    #[test]
    fn intensity_decreases_with_threshold(
        kappa in 0.3f64..6.0, xi in 0.02f64..1.0, a in 1e-4f64..0.5, s in 1e-3f64..1.0, r in 1.01f64..5.0,
    ) {
        let lo = intensity(s, kappa, xi, &threshold(0.5, a)).unwrap();
        let hi = intensity(s, kappa, xi, &threshold(0.9, (a * r).min(0.999))).unwrap();
        prop_assert!(hi <= lo);
    }

    #[test]
    fn swapping_scenarios_swaps_increase_and_decrease(c in 1e-3f64..1.0, f in 1e-3f64..1.0) {
        let (r1, k1) = classify_change(c, f, NO_CHANGE_BAND, H_FLOOR);
        let (r2, k2) = classify_change(f, c, NO_CHANGE_BAND, H_FLOOR);
        if r1.unwrap().abs() > NO_CHANGE_BAND && r2.unwrap().abs() > NO_CHANGE_BAND {
            let swapped = match k1 {
                ChangeClass::Increase => ChangeClass::Decrease,
                ChangeClass::Decrease => ChangeClass::Increase,
                other => other,
            };
            prop_assert_eq!(k2, swapped);
        }
    }

    #[test]
    fn hazard_never_exceeds_either_component(p in 0.0f64..=1.0, i in 0.0f64..=1.0) {
        let c = HazardComponents::new(p, i);
        prop_assert!(c.h <= p.min(i) && c.h >= 0.0);
    }
}
