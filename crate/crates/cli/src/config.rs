//! Per-command JSON run configurations.
//!
//! Relative paths in a config file are taken relative to the file's own
//! directory; the resolved copy written next to every output carries the
//! joined paths and the effective seed.

use std::path::{Path, PathBuf};

use hazard_core::data::GeneratorSpec;
use hazard_core::hazard::{ClassCuts, SeverityThreshold, H_FLOOR, NO_CHANGE_BAND};
use hazard_core::training::{default_gamma_grid, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub trait Resolve {
    /// Joins relative paths onto `base` and checks numeric settings.
    fn resolve(&mut self, base: &Path) -> Result<(), CliError>;

    /// Applies `--seed`; commands without randomness ignore it.
    fn set_seed(&mut self, _seed: u64) {}
}

fn join(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn join_opt(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        join(base, p);
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::config(msg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub dataset: PathBuf,
    pub schema: PathBuf,
    #[serde(default = "TrainConfig::quick_start")]
    pub training: TrainConfig,
    /// Levels of the pooled PIT Q-Q plot in the report.
    #[serde(default = "hazard_core::evaluation::default_qq_grid")]
    pub qq_grid: Vec<f64>,
}

impl Resolve for FitConfig {
    fn resolve(&mut self, base: &Path) -> Result<(), CliError> {
        join(base, &mut self.dataset);
        join(base, &mut self.schema);
        self.training.validate().map_err(|e| usage(e.to_string()))?;
        check_levels("qq_grid", &self.qq_grid)
    }
    fn set_seed(&mut self, seed: u64) {
        self.training.seed = seed;
    }
}

fn check_levels(name: &str, v: &[f64]) -> Result<(), CliError> {
    if let Some(x) = v.iter().find(|x| !(**x > 0.0 && **x < 1.0)) {
        return Err(usage(format!("{name} values must lie in (0,1), got {x}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "default_sites")]
    pub n_sites: usize,
    #[serde(default = "default_years")]
    pub n_years: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "GeneratorSpec::quick_start")]
    pub generator: GeneratorSpec,
}

fn default_sites() -> usize {
    2000
}

fn default_years() -> usize {
    10
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            n_sites: default_sites(),
            n_years: default_years(),
            seed: 0,
            generator: GeneratorSpec::quick_start(),
        }
    }
}

impl Resolve for SimulateConfig {
    fn resolve(&mut self, _base: &Path) -> Result<(), CliError> {
        if self.n_sites == 0 || self.n_years == 0 {
            return Err(usage("n_sites and n_years must be >= 1"));
        }
        self.generator.validate().map_err(|e| usage(e.to_string()))
    }
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub model: PathBuf,
    pub dataset: PathBuf,
    /// Defaults to the schema stored in the model artifact.
    #[serde(default)]
    pub schema: Option<PathBuf>,
    #[serde(default = "hazard_core::evaluation::default_qq_grid")]
    pub qq_grid: Vec<f64>,
}

impl Resolve for EvaluateConfig {
    fn resolve(&mut self, base: &Path) -> Result<(), CliError> {
        join(base, &mut self.model);
        join(base, &mut self.dataset);
        join_opt(base, &mut self.schema);
        check_levels("qq_grid", &self.qq_grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneGammaConfig {
    pub dataset: PathBuf,
    pub schema: PathBuf,
    #[serde(default = "TrainConfig::quick_start")]
    pub training: TrainConfig,
    #[serde(default = "default_gamma_grid")]
    pub grid: Vec<f64>,
}

impl Resolve for TuneGammaConfig {
    fn resolve(&mut self, base: &Path) -> Result<(), CliError> {
        join(base, &mut self.dataset);
        join(base, &mut self.schema);
        if self.grid.is_empty() {
            return Err(usage("gamma grid is empty"));
        }
        check_levels("grid", &self.grid)?;
        // gamma itself is swept; validate the rest with a placeholder
        let probe = TrainConfig {
            gamma: 0.5,
            ..self.training.clone()
        };
        probe.validate().map_err(|e| usage(e.to_string()))
    }
    fn set_seed(&mut self, seed: u64) {
        self.training.seed = seed;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReturnLevelsConfig {
    /// CSV with `site_id, year, precip_mean, precip_max, precip_sd`.
    pub precipitation: PathBuf,
    #[serde(default = "default_periods")]
    pub periods: Vec<u32>,
}

pub fn default_periods() -> Vec<u32> {
    vec![5, 10, 15, 20]
}

fn check_periods(p: &[u32]) -> Result<(), CliError> {
    if p.is_empty() {
        return Err(usage("return period list is empty"));
    }
    if p.iter().any(|p| *p < 2) {
        return Err(usage("return periods must be >= 2 years"));
    }
    Ok(())
}

impl Resolve for ReturnLevelsConfig {
    fn resolve(&mut self, base: &Path) -> Result<(), CliError> {
        join(base, &mut self.precipitation);
        check_periods(&self.periods)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSource {
    /// Observed inventory whose positive area densities define `a_q`.
    pub dataset: PathBuf,
    pub schema: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HazardConfig {
    pub model: PathBuf,
    pub return_levels: PathBuf,
    /// CSV `site_id, <model features>`, NDVI columns time-averaged.
    pub site_table: PathBuf,
    #[serde(default = "default_levels")]
    pub severity_levels: Vec<f64>,
    #[serde(default = "default_periods")]
    pub periods: Vec<u32>,
    /// Either an inventory to take `a_q` from, or explicit thresholds.
    #[serde(default)]
    pub thresholds_from: Option<ThresholdSource>,
    #[serde(default)]
    pub thresholds: Option<Vec<SeverityThreshold>>,
    #[serde(default = "default_scenario")]
    pub scenario: String,
    #[serde(default)]
    pub class_cuts: ClassCuts,
    /// Optional `site_id, area` table for the hazard-area classes.
    #[serde(default)]
    pub site_areas: Option<PathBuf>,
    #[serde(default = "default_bins")]
    pub area_bins: usize,
    /// Optional GeoJSON feature collection to mirror with hazard values.
    #[serde(default)]
    pub geojson: Option<PathBuf>,
    #[serde(default = "default_site_key")]
    pub geojson_site_key: String,
}

fn default_levels() -> Vec<f64> {
    vec![0.05, 0.5, 0.95]
}

fn default_scenario() -> String {
    "historical".into()
}

fn default_bins() -> usize {
    3
}

fn default_site_key() -> String {
    "su_id".into()
}

impl Resolve for HazardConfig {
    fn resolve(&mut self, base: &Path) -> Result<(), CliError> {
        join(base, &mut self.model);
        join(base, &mut self.return_levels);
        join(base, &mut self.site_table);
        join_opt(base, &mut self.site_areas);
        join_opt(base, &mut self.geojson);
        if let Some(t) = &mut self.thresholds_from {
            join(base, &mut t.dataset);
            join(base, &mut t.schema);
        }
        check_periods(&self.periods)?;
        match (&self.thresholds_from, &self.thresholds) {
            (Some(_), None) => {
                if self.severity_levels.is_empty() {
                    return Err(usage("severity_levels is empty"));
                }
                check_levels("severity_levels", &self.severity_levels)?;
            }
            (None, Some(t)) => {
                if t.is_empty() {
                    return Err(usage("thresholds is empty"));
                }
                for x in t {
                    if !(x.q > 0.0 && x.q < 1.0 && x.a_q > 0.0 && x.a_q < 1.0) {
                        return Err(usage(format!("threshold (q={}, a_q={}) outside (0,1)", x.q, x.a_q)));
                    }
                }
            }
            _ => return Err(usage("give exactly one of thresholds_from and thresholds")),
        }
        if self.area_bins == 0 {
            return Err(usage("area_bins must be >= 1"));
        }
        if self.scenario.is_empty() || self.scenario.contains(['/', '\\']) {
            return Err(usage("scenario tag must be a nonempty name"));
        }
        self.class_cuts.validate().map_err(|e| usage(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDiffConfig {
    /// Long-format hazard surface tables.
    pub current: PathBuf,
    pub future: PathBuf,
    #[serde(default = "default_band")]
    pub band: f64,
    #[serde(default = "default_floor")]
    pub h_floor: f64,
    #[serde(default)]
    pub class_cuts: ClassCuts,
}

fn default_band() -> f64 {
    NO_CHANGE_BAND
}

fn default_floor() -> f64 {
    H_FLOOR
}

impl Resolve for ScenarioDiffConfig {
    fn resolve(&mut self, base: &Path) -> Result<(), CliError> {
        join(base, &mut self.current);
        join(base, &mut self.future);
        if !(self.band >= 0.0 && self.band.is_finite()) || !(self.h_floor > 0.0) {
            return Err(usage("band must be >= 0 and h_floor > 0"));
        }
        self.class_cuts.validate().map_err(|e| usage(e.to_string()))
    }
}
