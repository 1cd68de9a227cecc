//! One function per subcommand. Each takes its resolved config and writes
//! its outputs through an [`Outputs`] collector.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use hazard_core::data::{
    self, fmt_f64, load_dataset, precipitation_table, site_covariates, simulate, synthetic_site_areas, Dataset,
    FeatureSchema,
};
use hazard_core::evaluation::{evaluate, EvaluationReport};
use hazard_core::frequency::{
    build_return_level_sets, check_series, fit_frequency, read_precip_csv, series_by_site, write_precip_csv,
    write_return_levels_csv, yearly_summaries, read_return_levels_csv, TriggerVariable,
};
use hazard_core::hazard::{
    geojson_with_hazard, hazard_area_table, hypothesised_hazard, read_surfaces_csv, scenario_change,
    severity_threshold, write_area_table_csv, write_changes_csv, write_surfaces_csv, HazardSurface, Scenario,
    SeverityThreshold,
};
use hazard_core::model::RegressionModel;
use hazard_core::training::{train, tune_gamma, write_trace_csv};
use hazard_core::HazardError;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{
    EvaluateConfig, FitConfig, HazardConfig, ReturnLevelsConfig, ScenarioDiffConfig, SimulateConfig, TuneGammaConfig,
};
use crate::error::CliError;

/// Collects written paths under one output directory.
pub struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::config(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes through a buffered file handle and records the path.
    pub fn write_with<F>(&mut self, name: &str, f: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut BufWriter<File>) -> hazard_core::Result<()>,
    {
        let path = self.path(name);
        let io_err = |e: std::io::Error| CliError::compute("io", format!("{}: {e}", path.display()));
        let mut w = BufWriter::new(File::create(&path).map_err(io_err)?);
        f(&mut w).map_err(|e| CliError::from(e).with_path(&path))?;
        w.flush().map_err(io_err)?;
        self.written.push(path);
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        self.write_with(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }

    pub fn into_paths(self) -> Vec<PathBuf> {
        self.written
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    match File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(CliError::missing_file(path)),
        Err(e) => Err(CliError::config(format!("cannot read {}: {e}", path.display()))),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    open(path)?;
    std::fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))
}

pub fn load_schema(path: &Path) -> Result<FeatureSchema, CliError> {
    let text = read_text(path)?;
    let schema: FeatureSchema = serde_json::from_str(&text).map_err(|e| CliError::from_input(path, e.into()))?;
    schema.validate().map_err(|e| CliError::from_input(path, e))?;
    Ok(schema)
}

fn load_data(path: &Path, schema: &FeatureSchema) -> Result<Dataset, CliError> {
    open(path)?;
    load_dataset(path, schema)
        .map(|(ds, _)| ds)
        .map_err(|e| CliError::from_input(path, e))
}

fn load_model(path: &Path) -> Result<RegressionModel, CliError> {
    let text = read_text(path)?;
    RegressionModel::from_json(&text).map_err(|e| CliError::from_input(path, e))
}

fn write_roc(out: &mut Outputs, roc: &[(f64, f64)]) -> Result<(), CliError> {
    out.write_with("roc.csv", |w| {
        writeln!(w, "fpr,tpr")?;
        for (fpr, tpr) in roc {
            writeln!(w, "{},{}", fmt_f64(*fpr), fmt_f64(*tpr))?;
        }
        Ok(())
    })
}

fn write_qq(out: &mut Outputs, report: &EvaluationReport) -> Result<(), CliError> {
    out.write_with("qq.csv", |w| {
        writeln!(w, "level,pit_empirical,empirical_quantile,model_quantile")?;
        for p in &report.qq {
            writeln!(
                w,
                "{},{},{},{}",
                fmt_f64(p.level),
                fmt_f64(p.pit_empirical),
                fmt_f64(p.empirical_quantile),
                fmt_f64(p.model_quantile)
            )?;
        }
        Ok(())
    })
}

#[derive(Serialize)]
struct FitReport<'a> {
    best_epoch: Option<usize>,
    epochs_run: usize,
    n_train: usize,
    n_test: usize,
    test: &'a EvaluationReport,
}

pub fn cmd_fit(cfg: &FitConfig, out: &mut Outputs) -> Result<(), CliError> {
    let schema = load_schema(&cfg.schema)?;
    let ds = load_data(&cfg.dataset, &schema)?;
    let outcome = match train(&ds, &cfg.training) {
        Ok(o) => o,
        Err(HazardError::Divergence { epoch, trace }) => {
            // keep the partial trace for diagnosis
            out.write_with("loss_trace.csv", |w| write_trace_csv(w, &trace))?;
            return Err(HazardError::Divergence { epoch, trace }.into());
        }
        Err(e) => return Err(e.into()),
    };
    let test = ds.subset(&outcome.split.test);
    let report = evaluate(&outcome.model, &test.records, &cfg.qq_grid)?;

    let json = outcome.model.to_json()?;
    out.write_with("model.json", |w| {
        w.write_all(json.as_bytes())?;
        w.write_all(b"\n")?;
        Ok(())
    })?;
    out.write_with("loss_trace.csv", |w| write_trace_csv(w, &outcome.trace))?;
    out.write_json(
        "report.json",
        &FitReport {
            best_epoch: outcome.best_epoch,
            epochs_run: outcome.trace.len(),
            n_train: outcome.split.train.len(),
            n_test: outcome.split.test.len(),
            test: &report,
        },
    )?;
    write_roc(out, &report.roc)?;
    write_qq(out, &report)
}

pub fn cmd_evaluate(cfg: &EvaluateConfig, out: &mut Outputs) -> Result<(), CliError> {
    let model = load_model(&cfg.model)?;
    let schema = match &cfg.schema {
        Some(p) => {
            let s = load_schema(p)?;
            if s.names() != model.schema.names() {
                return Err(CliError::config(format!(
                    "schema {} does not match the model's feature list",
                    p.display()
                )));
            }
            s
        }
        None => model.schema.clone(),
    };
    let ds = load_data(&cfg.dataset, &schema)?;
    let report = evaluate(&model, &ds.records, &cfg.qq_grid)?;
    out.write_json("report.json", &report)?;
    write_roc(out, &report.roc)?;
    write_qq(out, &report)
}

pub fn cmd_simulate(cfg: &SimulateConfig, out: &mut Outputs) -> Result<(), CliError> {
    let (ds, truth) = simulate(cfg.n_sites, cfg.n_years, &cfg.generator, cfg.seed)?;
    let precip = precipitation_table(&ds)?;
    let sites = site_covariates(&ds);
    let areas = synthetic_site_areas(sites.keys(), cfg.seed);

    out.write_with("dataset.csv", |w| ds.write_csv(w))?;
    out.write_json("schema.json", &ds.schema)?;
    out.write_json("truth.json", &truth)?;
    out.write_with("precipitation.csv", |w| write_precip_csv(w, &precip))?;
    out.write_with("sites.csv", |w| data::write_site_table(w, &ds.schema, &sites))?;
    out.write_with("site_areas.csv", |w| data::write_site_areas(w, &areas))
}

pub fn cmd_tune_gamma(cfg: &TuneGammaConfig, out: &mut Outputs) -> Result<(), CliError> {
    let schema = load_schema(&cfg.schema)?;
    let ds = load_data(&cfg.dataset, &schema)?;
    let report = tune_gamma(&ds, &cfg.training, &cfg.grid)?;
    out.write_json("gamma_report.json", &report)?;
    out.write_with("gamma_report.csv", |w| {
        writeln!(w, "gamma,auc,crps,best_epoch,error")?;
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for p in &report.points {
            writeln!(
                w,
                "{},{},{},{},{}",
                fmt_f64(p.gamma),
                opt(p.auc),
                opt(p.crps),
                p.best_epoch.map(|e| e.to_string()).unwrap_or_default(),
                p.error.as_deref().unwrap_or("").replace([',', '\n'], ";")
            )?;
        }
        Ok(())
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SiteFailure {
    pub site_id: String,
    pub variable: TriggerVariable,
    pub reason: String,
}

pub fn cmd_return_levels(cfg: &ReturnLevelsConfig, out: &mut Outputs) -> Result<(), CliError> {
    let rows = read_precip_csv(open(&cfg.precipitation)?).map_err(|e| CliError::from_input(&cfg.precipitation, e))?;

    let mut failures = Vec::new();
    for variable in [TriggerVariable::AnnualMax, TriggerVariable::AnnualMean] {
        for (site, values) in series_by_site(&rows, variable) {
            if let Err(e) = check_series(&values) {
                failures.push(SiteFailure {
                    site_id: site,
                    variable,
                    reason: e.to_string(),
                });
            }
        }
    }
    let failed: std::collections::BTreeSet<&str> = failures.iter().map(|f| f.site_id.as_str()).collect();
    let kept: Vec<_> = rows
        .iter()
        .filter(|r| !failed.contains(r.site_id.as_str()))
        .cloned()
        .collect();
    out.write_json("failures.json", &failures)?;
    if kept.is_empty() {
        return Err(CliError::compute("no_fittable_sites", "every site failed the series checks")
            .with_details(json!({ "failures": failures })));
    }

    let max_fit = fit_frequency(&series_by_site(&kept, TriggerVariable::AnnualMax), TriggerVariable::AnnualMax)?;
    let mean_fit = fit_frequency(&series_by_site(&kept, TriggerVariable::AnnualMean), TriggerVariable::AnnualMean)?;
    let sets = build_return_level_sets(&max_fit.model, &mean_fit.model, &yearly_summaries(&kept), &cfg.periods)?;

    out.write_with("return_levels.csv", |w| write_return_levels_csv(w, &sets))?;
    out.write_json(
        "frequency_models.json",
        &json!({
            "annual_max": {
                "model": max_fit.model,
                "alternations": max_fit.alternations,
                "xi_at_floor": max_fit.xi_at_floor,
            },
            "annual_mean": {
                "model": mean_fit.model,
                "alternations": mean_fit.alternations,
                "xi_at_floor": mean_fit.xi_at_floor,
            },
        }),
    )
}

fn surface_tag(q: f64, period: u32) -> String {
    format!("q{}_P{period}", fmt_f64(q))
}

fn thresholds_for(cfg: &HazardConfig) -> Result<Vec<SeverityThreshold>, CliError> {
    if let Some(t) = &cfg.thresholds {
        return Ok(t.clone());
    }
    let src = cfg
        .thresholds_from
        .as_ref()
        .ok_or_else(|| CliError::config("no threshold source"))?;
    let schema = load_schema(&src.schema)?;
    let ds = load_data(&src.dataset, &schema)?;
    let areas = ds.positive_areas();
    cfg.severity_levels
        .iter()
        .map(|q| severity_threshold(&areas, *q).map_err(|e| CliError::from_input(&src.dataset, e)))
        .collect()
}

pub fn cmd_hazard(cfg: &HazardConfig, out: &mut Outputs) -> Result<(), CliError> {
    let model = load_model(&cfg.model)?;
    let levels =
        read_return_levels_csv(open(&cfg.return_levels)?).map_err(|e| CliError::from_input(&cfg.return_levels, e))?;
    let sites = data::read_site_table(open(&cfg.site_table)?, &model.schema)
        .map_err(|e| CliError::from_input(&cfg.site_table, e))?;
    let thresholds = thresholds_for(cfg)?;
    let scenario: Scenario = cfg.scenario.parse().map_err(|e: HazardError| CliError::config(e.to_string()))?;
    let areas = match &cfg.site_areas {
        Some(p) => Some(data::read_site_areas(open(p)?).map_err(|e| CliError::from_input(p, e))?),
        None => None,
    };
    let geojson: Option<Value> = match &cfg.geojson {
        Some(p) => Some(serde_json::from_str(&read_text(p)?).map_err(|e| CliError::from_input(p, e.into()))?),
        None => None,
    };

    let surfaces = hypothesised_hazard(&model, &levels, &sites, &thresholds, &cfg.periods, &scenario)?;

    out.write_json("thresholds.json", &thresholds)?;
    for s in &surfaces {
        let tag = surface_tag(s.q, s.return_period);
        out.write_with(&format!("hazard_{tag}.csv"), |w| {
            write_surfaces_csv(w, std::slice::from_ref(s), &cfg.class_cuts)
        })?;
        if let Some(areas) = &areas {
            let cells = hazard_area_table(s, areas, cfg.area_bins)?;
            out.write_with(&format!("hazard_area_{tag}.csv"), |w| write_area_table_csv(w, &cells))?;
        }
        if let Some(g) = &geojson {
            let mirrored = geojson_with_hazard(g, s, &cfg.geojson_site_key, &cfg.class_cuts)?;
            out.write_json(&format!("hazard_{tag}.geojson"), &mirrored)?;
        }
    }
    out.write_with("hazard_long.csv", |w| write_surfaces_csv(w, &surfaces, &cfg.class_cuts))
}

type SurfaceKey = (u64, u32);

fn index_surfaces(path: &Path, surfaces: Vec<HazardSurface>) -> Result<BTreeMap<SurfaceKey, HazardSurface>, CliError> {
    let mut map = BTreeMap::new();
    for s in surfaces {
        let key = (s.q.to_bits(), s.return_period);
        if let Some(prev) = map.insert(key, s) {
            return Err(CliError::from(HazardError::Metadata(format!(
                "{} holds more than one surface for (q={}, P={})",
                path.display(),
                prev.q,
                prev.return_period
            ))));
        }
    }
    Ok(map)
}

fn read_surfaces(path: &Path) -> Result<BTreeMap<SurfaceKey, HazardSurface>, CliError> {
    let s = read_surfaces_csv(open(path)?).map_err(|e| CliError::from_input(path, e))?;
    index_surfaces(path, s)
}

pub fn cmd_scenario_diff(cfg: &ScenarioDiffConfig, out: &mut Outputs) -> Result<(), CliError> {
    let current = read_surfaces(&cfg.current)?;
    let future = read_surfaces(&cfg.future)?;
    let describe = |m: &BTreeMap<SurfaceKey, HazardSurface>| {
        m.values()
            .map(|s| format!("(q={}, P={})", fmt_f64(s.q), s.return_period))
            .collect::<Vec<_>>()
    };
    if current.keys().ne(future.keys()) {
        return Err(CliError::from(HazardError::Metadata(
            "current and future files cover different (q, P) pairs".into(),
        ))
        .with_details(json!({ "current": describe(&current), "future": describe(&future) })));
    }

    let mut all = Vec::with_capacity(current.len());
    let mut summary = Vec::with_capacity(current.len());
    for (key, cur) in &current {
        let fut = &future[key];
        let changes = scenario_change(cur, fut, cfg.band, cfg.h_floor)?;
        let tag = surface_tag(cur.q, cur.return_period);
        out.write_with(&format!("change_{tag}.csv"), |w| {
            write_changes_csv(w, fut, &changes, &cfg.class_cuts)
        })?;
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for c in &changes {
            *counts.entry(c.class.label()).or_default() += 1;
        }
        summary.push(json!({ "q": cur.q, "return_period": cur.return_period, "counts": counts }));
        all.push((fut, changes));
    }
    out.write_with("changes_long.csv", |w| {
        // one header, rows from every pair in key order
        let mut first = true;
        for (fut, changes) in &all {
            let mut buf = Vec::new();
            write_changes_csv(&mut buf, fut, changes, &cfg.class_cuts)?;
            let text = String::from_utf8_lossy(&buf);
            let body = if first { &text[..] } else { text.split_once('\n').map_or("", |(_, b)| b) };
            w.write_all(body.as_bytes())?;
            first = false;
        }
        if first {
            let mut buf = Vec::new();
            write_changes_csv(&mut buf, &empty_surface(), &[], &cfg.class_cuts)?;
            w.write_all(&buf)?;
        }
        Ok(())
    })?;
    out.write_json("change_summary.json", &summary)
}

fn empty_surface() -> HazardSurface {
    HazardSurface {
        q: 0.5,
        return_period: 0,
        scenario: Scenario::Historical,
        sites: Vec::new(),
    }
}
