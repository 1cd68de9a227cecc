use hazard_core::data::{self, export_predictions, read_dataset, simulate, ExportThreshold, GeneratorSpec, Standardizer};
use hazard_core::egpd::{self, EgpdParams};
use hazard_core::network::HeadOutputs;
use hazard_core::HazardError;

#[test]
fn loading_an_exported_dataset_is_idempotent() {
    let (ds, _) = simulate(50, 4, &GeneratorSpec::quick_start(), 3).unwrap();
    let mut first = Vec::new();
    ds.write_csv(&mut first).unwrap();
    let (loaded, manifest) = read_dataset(first.as_slice(), &ds.schema).unwrap();
    assert_eq!(loaded, ds);
    assert_eq!(manifest.record_count, 200);
    assert_eq!(manifest.site_count, 50);
    let mut second = Vec::new();
    loaded.write_csv(&mut second).unwrap();
    assert_eq!(first, second);
    assert_eq!(read_dataset(second.as_slice(), &ds.schema).unwrap().0, loaded);
}

#[test]
fn invalid_rows_are_reported_together() {
    let schema = GeneratorSpec::quick_start().schema();
    let (ds, _) = simulate(3, 2, &GeneratorSpec::quick_start(), 1).unwrap();
    let mut buf = Vec::new();
    ds.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    // a landslide flagged with zero area, then a duplicate key
    let mut bad: Vec<String> = lines[1].split(',').map(str::to_string).collect();
    let n = bad.len();
    bad[n - 2] = "1".into();
    bad[n - 1] = "0".into();
    lines[1] = bad.join(",");
    lines.push(lines[2].clone());
    match read_dataset(lines.join("\n").as_bytes(), &schema) {
        Err(HazardError::Validation(v)) => {
            assert!(v.len() >= 2, "{v:?}");
            assert!(v.iter().any(|x| x.reason.contains("occurrence-size inconsistency")));
            assert!(v.iter().any(|x| x.reason.contains("duplicate")));
        }
        other => panic!("expected a validation report, got {other:?}"),
    }
}

#[test]
fn split_proportions() {
    let s = data::split(1000, 0.7, 5).unwrap();
    assert!(s.train.len().abs_diff(700) <= 1 && s.test.len().abs_diff(300) <= 1);
    let all = data::split(10, 1.0, 5).unwrap();
    assert!(all.test.is_empty() && all.train.len() == 10);
}

#[test]
fn training_statistics_standardise_the_training_split() {
    let (ds, _) = simulate(400, 5, &GeneratorSpec::quick_start(), 9).unwrap();
    let s = data::split(ds.records.len(), 0.7, 2).unwrap();
    let train: Vec<_> = s.train.iter().map(|&i| &ds.records[i]).collect();
    let width = ds.schema.len();
    let st = Standardizer::fit(train.iter().copied(), width);
    let z: Vec<Vec<f64>> = train.iter().map(|r| st.apply(&r.features)).collect();
    let n = z.len() as f64;
    for j in 0..width {
        let mean = z.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = z.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-10, "feature {j}: mean {mean}");
        assert!((var - 1.0).abs() < 1e-10, "feature {j}: variance {var}");
    }
}

#[test]
fn simulated_prevalence_follows_the_true_probabilities() {
    let (ds, truth) = simulate(20_000, 5, &GeneratorSpec::quick_start(), 77).unwrap();
    assert_eq!(ds.records.len(), 100_000);
    let prevalence = ds.records.iter().filter(|r| r.landslide).count() as f64 / 1e5;
    let mean_p = truth.p_true.iter().sum::<f64>() / 1e5;
    assert!((prevalence - mean_p).abs() <= 0.01, "{prevalence} vs {mean_p}");
    assert!(ds.records.iter().all(|r| r.landslide || r.area_density == 0.0));
    assert!(ds.records.iter().all(|r| r.check().is_ok()));
    let again = simulate(20, 5, &GeneratorSpec::quick_start(), 77).unwrap().0;
    assert_eq!(again, simulate(20, 5, &GeneratorSpec::quick_start(), 77).unwrap().0);
}

#[test]
fn exported_predictions_round_trip() {
    let (ds, _) = simulate(30, 3, &GeneratorSpec::quick_start(), 4).unwrap();
    let outputs: Vec<HeadOutputs> = (0..ds.records.len())
        .map(|i| HeadOutputs::from_probability(1.0 / (i as f64 + 3.0), 0.01 + 1e-4 * i as f64 / 7.0))
        .collect();
    let thresholds = [ExportThreshold { q: 0.5, a_q: 0.004 }, ExportThreshold { q: 0.95, a_q: 0.04 }];
    let mut buf = Vec::new();
    export_predictions(&mut buf, &ds.records, &outputs, 2.0, 0.3, &thresholds).unwrap();

    let mut rdr = csv::Reader::from_reader(buf.as_slice());
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        ["su_id", "year", "p", "sigma", "h_q0.5", "h_q0.95"]
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), ds.records.len());
    for ((row, r), o) in rows.iter().zip(&ds.records).zip(&outputs) {
        assert_eq!(row[0], r.su_id);
        assert_eq!(row[1].parse::<i32>().unwrap(), r.year);
        assert_eq!(row[2].parse::<f64>().unwrap().to_bits(), o.p.to_bits());
        assert_eq!(row[3].parse::<f64>().unwrap().to_bits(), o.sigma.to_bits());
        let params = EgpdParams::new(2.0, o.sigma, 0.3).unwrap();
        let h = o.p * egpd::sf(0.04, &params).unwrap();
        assert_eq!(row[5].parse::<f64>().unwrap().to_bits(), h.to_bits());
    }

    let mut empty = Vec::new();
    export_predictions(&mut empty, &[], &[], 2.0, 0.3, &thresholds).unwrap();
    assert_eq!(String::from_utf8(empty).unwrap(), "su_id,year,p,sigma,h_q0.5,h_q0.95\n");
    assert!(export_predictions(&mut Vec::new(), &ds.records, &outputs[..1], 2.0, 0.3, &thresholds).is_err());
}
