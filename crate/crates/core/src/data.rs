//! Slope-unit-year records: schema, CSV ingestion and validation, splitting,
//! standardisation, the synthetic generator and prediction export.
//!
//! Dataset CSV layout: `su_id, year, <features in schema order>, landslide,
//! area_density`. Area density is a fraction in `[0, 1)`, never a percent.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::egpd::{self, EgpdParams};
use crate::error::{HazardError, Result, Violation};
use crate::network::{sigmoid, HeadOutputs};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Dynamic,
    Static,
}

/// What a feature stands for when return levels are substituted in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureRole {
    PrecipMax,
    PrecipMean,
    PrecipSd,
    Ndvi,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    /// `numeric`, or `one_hot:<group>` for 0/1 indicator columns.
    #[serde(default = "default_encoding")]
    pub encoding: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<FeatureRole>,
}

fn default_encoding() -> String {
    "numeric".into()
}

impl FeatureSpec {
    pub fn new(name: &str, kind: FeatureKind) -> Self {
        Self {
            name: name.into(),
            kind,
            encoding: default_encoding(),
            role: None,
        }
    }

    /// Declared role, or one inferred from the conventional column names.
    pub fn effective_role(&self) -> FeatureRole {
        if let Some(r) = self.role {
            return r;
        }
        match self.name.as_str() {
            "precip_max" => FeatureRole::PrecipMax,
            "precip_mean" => FeatureRole::PrecipMean,
            "precip_sd" => FeatureRole::PrecipSd,
            n if n.starts_with("ndvi") => FeatureRole::Ndvi,
            _ => FeatureRole::Other,
        }
    }

    fn is_one_hot(&self) -> bool {
        self.encoding.starts_with("one_hot")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureSpec>,
}

impl FeatureSchema {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn position(&self, role: FeatureRole) -> Option<usize> {
        self.features.iter().position(|f| f.effective_role() == role)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(HazardError::Schema("schema declares no features".into()));
        }
        let mut seen = HashSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return Err(HazardError::Schema(format!("duplicate feature {}", f.name)));
            }
            if ["su_id", "year", "landslide", "area_density"].contains(&f.name.as_str()) {
                return Err(HazardError::Schema(format!("reserved column name {}", f.name)));
            }
            if f.encoding != "numeric" && !f.is_one_hot() {
                return Err(HazardError::Schema(format!(
                    "feature {}: unknown encoding {}",
                    f.name, f.encoding
                )));
            }
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let s: Self = serde_json::from_str(&text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["su_id".to_string(), "year".to_string()];
        h.extend(self.features.iter().map(|f| f.name.clone()));
        h.push("landslide".into());
        h.push("area_density".into());
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuYearRecord {
    pub su_id: String,
    pub year: i32,
    /// Raw covariates in schema order.
    pub features: Vec<f64>,
    pub landslide: bool,
    pub area_density: f64,
}

impl SuYearRecord {
    /// Occurrence/size consistency: `landslide` iff `area_density > 0`.
    pub fn check(&self) -> std::result::Result<(), String> {
        if !(self.area_density >= 0.0 && self.area_density < 1.0) {
            return Err(format!("area density {} outside [0,1)", self.area_density));
        }
        if self.landslide != (self.area_density > 0.0) {
            return Err(format!(
                "occurrence-size inconsistency: landslide={} with area density {}",
                self.landslide as u8, self.area_density
            ));
        }
        if let Some(v) = self.features.iter().find(|v| !v.is_finite()) {
            return Err(format!("non-finite covariate {v}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: FeatureSchema,
    pub records: Vec<SuYearRecord>,
}

/// Per-feature standardisation statistics (population standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Standardizer {
    /// Statistics of `records`; zero-variance features keep unit scale.
    pub fn fit<'a, I>(records: I, width: usize) -> Self
    where
        I: IntoIterator<Item = &'a SuYearRecord>,
    {
        let rows: Vec<&SuYearRecord> = records.into_iter().collect();
        let n = rows.len().max(1) as f64;
        let mut means = vec![0.0; width];
        for r in &rows {
            for (m, v) in means.iter_mut().zip(&r.features) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut vars = vec![0.0; width];
        for r in &rows {
            for j in 0..width {
                let d = r.features[j] - means[j];
                vars[j] += d * d;
            }
        }
        let sds = vars
            .iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { means, sds }
    }

    pub fn identity(width: usize) -> Self {
        Self {
            means: vec![0.0; width],
            sds: vec![1.0; width],
        }
    }

    pub fn apply_into(&self, raw: &[f64], out: &mut [f64]) {
        for j in 0..raw.len() {
            out[j] = (raw[j] - self.means[j]) / self.sds[j];
        }
    }

    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; raw.len()];
        self.apply_into(raw, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: FeatureSchema,
    pub record_count: usize,
    pub year_min: Option<i32>,
    pub year_max: Option<i32>,
    pub site_count: usize,
    pub positive_count: usize,
    /// Filled in once a training split exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardization: Option<Standardizer>,
}

impl Dataset {
    pub fn manifest(&self) -> DatasetManifest {
        let sites: BTreeSet<&str> = self.records.iter().map(|r| r.su_id.as_str()).collect();
        DatasetManifest {
            schema: self.schema.clone(),
            record_count: self.records.len(),
            year_min: self.records.iter().map(|r| r.year).min(),
            year_max: self.records.iter().map(|r| r.year).max(),
            site_count: sites.len(),
            positive_count: self.records.iter().filter(|r| r.landslide).count(),
            standardization: None,
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    /// Area densities of every positive record.
    pub fn positive_areas(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.landslide)
            .map(|r| r.area_density)
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        out.write_record(self.schema.header())?;
        for r in &self.records {
            let mut row = vec![r.su_id.clone(), r.year.to_string()];
            row.extend(r.features.iter().map(|v| fmt_f64(*v)));
            row.push((r.landslide as u8).to_string());
            row.push(fmt_f64(r.area_density));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Shortest decimal form that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Read and validate a dataset; every violation is collected before
/// rejecting.
pub fn read_dataset<R: Read>(reader: R, schema: &FeatureSchema) -> Result<(Dataset, DatasetManifest)> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let expected = schema.header();
    if header != expected {
        return Err(HazardError::Schema(format!(
            "header {header:?} does not match schema order {expected:?}"
        )));
    }
    let width = schema.len();
    let mut violations = Vec::new();
    let mut records = Vec::new();
    let mut seen: HashSet<(String, i32)> = HashSet::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                violations.push(Violation { row: row_no, reason: e.to_string() });
                continue;
            }
        };
        let mut reasons = Vec::new();
        let su_id = row.get(0).unwrap_or("").trim().to_string();
        if su_id.is_empty() {
            reasons.push("empty su_id".to_string());
        }
        let year = match row.get(1).unwrap_or("").trim().parse::<i32>() {
            Ok(y) => y,
            Err(_) => {
                reasons.push(format!("bad year {:?}", row.get(1).unwrap_or("")));
                0
            }
        };
        let mut features = Vec::with_capacity(width);
        for (j, spec) in schema.features.iter().enumerate() {
            let cell = row.get(2 + j).unwrap_or("").trim();
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => {
                    if spec.is_one_hot() && v != 0.0 && v != 1.0 {
                        reasons.push(format!("{}: one-hot value {v} not in {{0,1}}", spec.name));
                    }
                    features.push(v);
                }
                _ => {
                    reasons.push(format!("{}: non-finite or unparsable value {cell:?}", spec.name));
                    features.push(f64::NAN);
                }
            }
        }
        let landslide = match row.get(2 + width).unwrap_or("").trim() {
            "0" => Some(false),
            "1" => Some(true),
            other => {
                reasons.push(format!("landslide must be 0 or 1, got {other:?}"));
                None
            }
        };
        let area = match row.get(3 + width).unwrap_or("").trim().parse::<f64>() {
            Ok(a) if a.is_finite() => Some(a),
            _ => {
                reasons.push("unparsable area_density".into());
                None
            }
        };
        if let (Some(l), Some(a)) = (landslide, area) {
            let rec = SuYearRecord {
                su_id: su_id.clone(),
                year,
                features,
                landslide: l,
                area_density: a,
            };
            if let Err(r) = rec.check() {
                // unparsable covariates are already reported above
                if !r.starts_with("non-finite covariate") {
                    reasons.push(r);
                }
            }
            if reasons.is_empty() {
                if !seen.insert((su_id.clone(), year)) {
                    reasons.push(format!("duplicate (su_id, year) = ({su_id}, {year})"));
                } else {
                    records.push(rec);
                }
            }
        }
        for reason in reasons {
            violations.push(Violation { row: row_no, reason });
        }
    }
    if !violations.is_empty() {
        return Err(HazardError::Validation(violations));
    }
    let ds = Dataset {
        schema: schema.clone(),
        records,
    };
    let manifest = ds.manifest();
    Ok((ds, manifest))
}

pub fn load_dataset(path: &Path, schema: &FeatureSchema) -> Result<(Dataset, DatasetManifest)> {
    let f = std::fs::File::open(path)?;
    read_dataset(std::io::BufReader::new(f), schema)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded uniform record-level split; `round(n * train_fraction)` records
/// go to training. Both index lists come back sorted.
pub fn split(n: usize, train_fraction: f64, seed: u64) -> Result<Split> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(HazardError::Domain(format!(
            "train fraction must lie in [0,1], got {train_fraction}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed));
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum CovariateLaw {
    /// `loc + scale * z`
    Normal { loc: f64, scale: f64 },
    /// `median * exp(log_sd * z)`
    LogNormal { median: f64, log_sd: f64 },
}

impl CovariateLaw {
    fn raw(&self, z: f64) -> f64 {
        match *self {
            Self::Normal { loc, scale } => loc + scale * z,
            Self::LogNormal { median, log_sd } => median * (log_sd * z).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub feature: FeatureSpec,
    pub law: CovariateLaw,
}

/// Known generative model. Both linear predictors act on the latent standard
/// normal covariates `z`:
/// `p = logistic(w.z + b)`, `sigma = exp(v.z + c)`.
///
/// Static covariates draw one `z` per site. Dynamic ones mix a site effect
/// and a yearly innovation: `z = sqrt(rho) z_site + sqrt(1 - rho) z_year`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub covariates: Vec<CovariateSpec>,
    pub susceptibility_weights: Vec<f64>,
    pub susceptibility_bias: f64,
    pub scale_weights: Vec<f64>,
    pub scale_bias: f64,
    pub kappa: f64,
    pub xi: f64,
    #[serde(default = "default_site_share")]
    pub dynamic_site_share: f64,
    #[serde(default = "default_first_year")]
    pub first_year: i32,
}

fn default_site_share() -> f64 {
    0.5
}
fn default_first_year() -> i32 {
    1989
}

impl GeneratorSpec {
    /// Nine covariates (five dynamic, four static) with a strong
    /// susceptibility signal, `kappa = 2`, `xi = 0.3`, and scales around
    /// 0.015 so the mass above a density of 1 is negligible.
    pub fn quick_start() -> Self {
        use FeatureKind::*;
        let cov = |name: &str, kind, law| CovariateSpec {
            feature: FeatureSpec::new(name, kind),
            law,
        };
        Self {
            covariates: vec![
                cov("precip_max", Dynamic, CovariateLaw::LogNormal { median: 110.0, log_sd: 0.25 }),
                cov("precip_mean", Dynamic, CovariateLaw::LogNormal { median: 5.5, log_sd: 0.2 }),
                cov("precip_sd", Dynamic, CovariateLaw::LogNormal { median: 11.0, log_sd: 0.2 }),
                cov("ndvi_mean", Dynamic, CovariateLaw::Normal { loc: 0.55, scale: 0.1 }),
                cov("ndvi_sd", Dynamic, CovariateLaw::Normal { loc: 0.12, scale: 0.02 }),
                cov("elevation_mean", Static, CovariateLaw::Normal { loc: 1500.0, scale: 600.0 }),
                cov("slope_mean", Static, CovariateLaw::Normal { loc: 25.0, scale: 8.0 }),
                cov("curvature_mean", Static, CovariateLaw::Normal { loc: 0.0, scale: 0.01 }),
                cov("clay_content", Static, CovariateLaw::Normal { loc: 30.0, scale: 8.0 }),
            ],
            susceptibility_weights: vec![2.5, 1.0, 0.5, -1.5, 0.0, 0.0, 4.0, 0.0, 1.0],
            susceptibility_bias: -1.0,
            scale_weights: vec![0.3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.25, 0.0, 0.0],
            scale_bias: 0.015_f64.ln(),
            kappa: 2.0,
            xi: 0.3,
            dynamic_site_share: default_site_share(),
            first_year: default_first_year(),
        }
    }

    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema {
            features: self.covariates.iter().map(|c| c.feature.clone()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.covariates.len();
        if n == 0 || self.susceptibility_weights.len() != n || self.scale_weights.len() != n {
            return Err(HazardError::Shape(format!(
                "generator has {n} covariates, {} susceptibility and {} scale weights",
                self.susceptibility_weights.len(),
                self.scale_weights.len()
            )));
        }
        EgpdParams::new(self.kappa, 1.0, self.xi)?;
        if !(0.0..=1.0).contains(&self.dynamic_site_share) {
            return Err(HazardError::InvalidParams("dynamic_site_share must lie in [0,1]".into()));
        }
        self.schema().validate()
    }
}

/// Ground truth emitted next to a simulated dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationTruth {
    pub spec: GeneratorSpec,
    pub seed: u64,
    pub n_sites: usize,
    pub n_years: usize,
    /// Per record, aligned with the dataset.
    pub p_true: Vec<f64>,
    pub sigma_true: Vec<f64>,
    pub mean_p_true: f64,
    pub prevalence: f64,
    /// Draws above 1 that were rejected and redrawn.
    pub rejected_draws: usize,
}

impl SimulationTruth {
    pub fn egpd(&self, i: usize) -> EgpdParams {
        EgpdParams {
            kappa: self.spec.kappa,
            sigma: self.sigma_true[i],
            xi: self.spec.xi,
        }
    }
}

pub fn site_id(i: usize) -> String {
    format!("SU{:05}", i + 1)
}

/// Draw a dataset from `spec`. Positive sizes come from the eGPD, redrawn
/// until below 1.
pub fn simulate(n_sites: usize, n_years: usize, spec: &GeneratorSpec, seed: u64) -> Result<(Dataset, SimulationTruth)> {
    spec.validate()?;
    let mut rng = seed::rng(seed::derive(seed, "simulate"));
    let k = spec.covariates.len();
    let rho = spec.dynamic_site_share;
    let mut records = Vec::with_capacity(n_sites * n_years);
    let mut p_true = Vec::with_capacity(n_sites * n_years);
    let mut sigma_true = Vec::with_capacity(n_sites * n_years);
    let mut rejected = 0;
    for s in 0..n_sites {
        let site_z: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
        for y in 0..n_years {
            let z: Vec<f64> = spec
                .covariates
                .iter()
                .zip(&site_z)
                .map(|(c, zs)| match c.feature.kind {
                    FeatureKind::Static => *zs,
                    FeatureKind::Dynamic => {
                        let zy: f64 = StandardNormal.sample(&mut rng);
                        rho.sqrt() * zs + (1.0 - rho).sqrt() * zy
                    }
                })
                .collect();
            let eta: f64 = spec.susceptibility_bias
                + spec.susceptibility_weights.iter().zip(&z).map(|(w, z)| w * z).sum::<f64>();
            let log_sigma: f64 =
                spec.scale_bias + spec.scale_weights.iter().zip(&z).map(|(v, z)| v * z).sum::<f64>();
            let p = sigmoid(eta);
            let sigma = log_sigma.exp();
            let u: f64 = rand::Rng::random(&mut rng);
            let landslide = u < p;
            let area_density = if landslide {
                let params = EgpdParams {
                    kappa: spec.kappa,
                    sigma,
                    xi: spec.xi,
                };
                loop {
                    let a = egpd::sample_with(&mut rng, 1, &params)[0];
                    if a < 1.0 {
                        break a;
                    }
                    rejected += 1;
                }
            } else {
                0.0
            };
            records.push(SuYearRecord {
                su_id: site_id(s),
                year: spec.first_year + y as i32,
                features: spec.covariates.iter().zip(&z).map(|(c, z)| c.law.raw(*z)).collect(),
                landslide,
                area_density,
            });
            p_true.push(p);
            sigma_true.push(sigma);
        }
    }
    let n = records.len().max(1) as f64;
    let truth = SimulationTruth {
        spec: spec.clone(),
        seed,
        n_sites,
        n_years,
        mean_p_true: p_true.iter().sum::<f64>() / n,
        prevalence: records.iter().filter(|r| r.landslide).count() as f64 / n,
        p_true,
        sigma_true,
        rejected_draws: rejected,
    };
    Ok((
        Dataset {
            schema: spec.schema(),
            records,
        },
        truth,
    ))
}

/// One yearly precipitation summary row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecipRow {
    pub site_id: String,
    pub year: i32,
    pub precip_mean: f64,
    pub precip_max: f64,
    pub precip_sd: f64,
}

/// Yearly precipitation table drawn from a dataset's driver columns.
pub fn precipitation_table(ds: &Dataset) -> Result<Vec<PrecipRow>> {
    let col = |role| {
        ds.schema
            .position(role)
            .ok_or_else(|| HazardError::Schema(format!("schema has no {role:?} column")))
    };
    let (imax, imean, isd) = (
        col(FeatureRole::PrecipMax)?,
        col(FeatureRole::PrecipMean)?,
        col(FeatureRole::PrecipSd)?,
    );
    Ok(ds
        .records
        .iter()
        .map(|r| PrecipRow {
            site_id: r.su_id.clone(),
            year: r.year,
            precip_mean: r.features[imean],
            precip_max: r.features[imax],
            precip_sd: r.features[isd],
        })
        .collect())
}

/// Per-site covariates for hypothesised hazard: every non-driver feature,
/// with static values taken from the site's first year and NDVI values
/// averaged over all years. Driver slots are left at zero.
pub fn site_covariates(ds: &Dataset) -> BTreeMap<String, Vec<f64>> {
    let mut acc: BTreeMap<String, (Vec<f64>, Vec<f64>, usize)> = BTreeMap::new();
    for r in &ds.records {
        let e = acc
            .entry(r.su_id.clone())
            .or_insert_with(|| (r.features.clone(), vec![0.0; r.features.len()], 0));
        for (s, v) in e.1.iter_mut().zip(&r.features) {
            *s += v;
        }
        e.2 += 1;
    }
    acc.into_iter()
        .map(|(site, (first, sums, n))| {
            let v = ds
                .schema
                .features
                .iter()
                .enumerate()
                .map(|(j, f)| match f.effective_role() {
                    FeatureRole::Ndvi => sums[j] / n as f64,
                    FeatureRole::PrecipMax | FeatureRole::PrecipMean | FeatureRole::PrecipSd => 0.0,
                    FeatureRole::Other => first[j],
                })
                .collect();
            (site, v)
        })
        .collect()
}

/// Writes `site_id, <features in schema order>`.
pub fn write_site_table<W: Write>(w: W, schema: &FeatureSchema, sites: &BTreeMap<String, Vec<f64>>) -> Result<()> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    let mut header = vec!["site_id".to_string()];
    header.extend(schema.names().into_iter().map(str::to_string));
    out.write_record(&header)?;
    for (site, v) in sites {
        let mut row = vec![site.clone()];
        row.extend(v.iter().map(|x| fmt_f64(*x)));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a per-site covariate table written by [`write_site_table`].
pub fn read_site_table<R: Read>(reader: R, schema: &FeatureSchema) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let mut expected = vec!["site_id"];
    expected.extend(schema.names());
    if header.iter().ne(expected.iter().copied()) {
        return Err(HazardError::Schema(format!(
            "site table header must be {}, found {}",
            expected.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = BTreeMap::new();
    let mut bad = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let vals: std::result::Result<Vec<f64>, String> = (1..rec.len())
            .map(|k| {
                rec[k]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| format!("{} is not a finite number", expected[k]))
            })
            .collect();
        match vals {
            Ok(v) => {
                if out.insert(rec[0].to_string(), v).is_some() {
                    bad.push(Violation {
                        row: i + 1,
                        reason: format!("duplicate site {}", &rec[0]),
                    });
                }
            }
            Err(reason) => bad.push(Violation { row: i + 1, reason }),
        }
    }
    if !bad.is_empty() {
        return Err(HazardError::Validation(bad));
    }
    Ok(out)
}

/// Log-normal slope-unit areas in square metres (median 1 km^2).
pub fn synthetic_site_areas<'a, I>(sites: I, seed: u64) -> BTreeMap<String, f64>
where
    I: IntoIterator<Item = &'a String>,
{
    let mut rng = seed::rng(seed::derive(seed, "areas"));
    sites
        .into_iter()
        .map(|s| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (s.clone(), 1e6 * (0.8 * z).exp())
        })
        .collect()
}

pub fn write_site_areas<W: Write>(w: W, areas: &BTreeMap<String, f64>) -> Result<()> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    out.write_record(["site_id", "area"])?;
    for (s, a) in areas {
        out.write_record([s.clone(), fmt_f64(*a)])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_site_areas<R: Read>(reader: R) -> Result<BTreeMap<String, f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(["site_id", "area"]) {
        return Err(HazardError::Schema("site area table header must be site_id,area".into()));
    }
    let mut out = BTreeMap::new();
    let mut bad = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        match rec[1].parse::<f64>() {
            Ok(a) if a > 0.0 && a.is_finite() => {
                out.insert(rec[0].to_string(), a);
            }
            _ => bad.push(Violation {
                row: i + 1,
                reason: format!("area must be a positive number, got {}", &rec[1]),
            }),
        }
    }
    if !bad.is_empty() {
        return Err(HazardError::Validation(bad));
    }
    Ok(out)
}

/// Threshold column for prediction export: `(q, a_q)`.
#[derive(Debug, Clone, Copy)]
pub struct ExportThreshold {
    pub q: f64,
    pub a_q: f64,
}

/// Write `su_id, year, p, sigma, h_q<q>...`, one row per record.
pub fn export_predictions<W: Write>(
    w: W,
    records: &[SuYearRecord],
    outputs: &[HeadOutputs],
    kappa: f64,
    xi: f64,
    thresholds: &[ExportThreshold],
) -> Result<()> {
    if records.len() != outputs.len() {
        return Err(HazardError::Shape(format!(
            "{} records but {} predictions",
            records.len(),
            outputs.len()
        )));
    }
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    let mut header = vec!["su_id".to_string(), "year".into(), "p".into(), "sigma".into()];
    header.extend(thresholds.iter().map(|t| format!("h_q{}", fmt_f64(t.q))));
    out.write_record(&header)?;
    for (r, o) in records.iter().zip(outputs) {
        let params = EgpdParams::new(kappa, o.sigma, xi)?;
        let mut row = vec![r.su_id.clone(), r.year.to_string(), fmt_f64(o.p), fmt_f64(o.sigma)];
        for t in thresholds {
            let i_q = egpd::sf(t.a_q, &params)?;
            row.push(fmt_f64(o.p * i_q));
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_schema() -> FeatureSchema {
        FeatureSchema {
            features: vec![
                FeatureSpec::new("precip_max", FeatureKind::Dynamic),
                FeatureSpec::new("slope_mean", FeatureKind::Static),
            ],
        }
    }

    #[test]
    fn rejects_inconsistent_and_duplicate_rows() {
        let csv = "su_id,year,precip_max,slope_mean,landslide,area_density\n\
                   A,2000,100,20,1,0\n\
                   A,2001,100,20,0,0.1\n\
                   B,2000,90,10,0,0\n\
                   B,2000,95,10,0,0\n\
                   C,2000,nan,10,0,0\n";
        let err = read_dataset(csv.as_bytes(), &small_schema()).unwrap_err();
        let HazardError::Validation(v) = err else { panic!("{err:?}") };
        assert!(v.iter().any(|x| x.row == 1 && x.reason.contains("occurrence-size inconsistency")));
        assert!(v.iter().any(|x| x.row == 2 && x.reason.contains("occurrence-size inconsistency")));
        assert!(v.iter().any(|x| x.row == 4 && x.reason.contains("duplicate")));
        assert!(v.iter().any(|x| x.row == 5));
        assert!(!v.iter().any(|x| x.row == 3));
    }

    #[test]
    fn header_must_follow_schema() {
        let csv = "su_id,year,slope_mean,precip_max,landslide,area_density\nA,2000,1,2,0,0\n";
        assert!(matches!(
            read_dataset(csv.as_bytes(), &small_schema()),
            Err(HazardError::Schema(_))
        ));
    }

    #[test]
    fn clean_file_manifest() {
        let mut text = String::from("su_id,year,precip_max,slope_mean,landslide,area_density\n");
        for i in 0..100 {
            let l = i % 7 == 0;
            text.push_str(&format!(
                "S{},{},{},{},{},{}\n",
                i % 10,
                2000 + i / 10,
                80 + i,
                i % 13,
                l as u8,
                if l { 0.01 } else { 0.0 }
            ));
        }
        let (ds, m) = read_dataset(text.as_bytes(), &small_schema()).unwrap();
        assert_eq!(m.record_count, 100);
        assert_eq!(m.site_count, 10);
        assert_eq!((m.year_min, m.year_max), (Some(2000), Some(2009)));
        assert_eq!(ds.records.len(), 100);
    }

    #[test]
    fn split_proportions_and_determinism() {
        let s = split(1000, 0.7, 3).unwrap();
        assert!((s.train.len() as i64 - 700).abs() <= 1);
        assert_eq!(s.train.len() + s.test.len(), 1000);
        let all: BTreeSet<usize> = s.train.iter().chain(&s.test).copied().collect();
        assert_eq!(all.len(), 1000);
        assert_eq!(s, split(1000, 0.7, 3).unwrap());
        assert!(split(10, 1.0, 3).unwrap().test.is_empty());
    }

    #[test]
    fn standardizer_zero_mean_unit_variance() {
        let (ds, _) = simulate(50, 4, &GeneratorSpec::quick_start(), 5).unwrap();
        let st = Standardizer::fit(&ds.records, ds.schema.len());
        let z: Vec<Vec<f64>> = ds.records.iter().map(|r| st.apply(&r.features)).collect();
        let n = z.len() as f64;
        for j in 0..ds.schema.len() {
            let m = z.iter().map(|r| r[j]).sum::<f64>() / n;
            let v = z.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
            assert!(m.abs() < 1e-10);
            assert!((v - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn simulation_properties() {
        let spec = GeneratorSpec::quick_start();
        let (ds, truth) = simulate(100, 5, &spec, 11).unwrap();
        let (ds2, _) = simulate(100, 5, &spec, 11).unwrap();
        assert_eq!(ds, ds2);
        for r in &ds.records {
            if !r.landslide {
                assert_eq!(r.area_density, 0.0);
            } else {
                assert!(r.area_density > 0.0 && r.area_density < 1.0);
            }
        }
        assert_eq!(truth.p_true.len(), 500);
    }

    #[test]
    fn prevalence_tracks_mean_probability() {
        let (_, truth) = simulate(20_000, 5, &GeneratorSpec::quick_start(), 1).unwrap();
        assert!((truth.prevalence - truth.mean_p_true).abs() < 0.01);
    }

    #[test]
    fn dataset_csv_round_trip_is_idempotent() {
        let (ds, _) = simulate(20, 3, &GeneratorSpec::quick_start(), 2).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let (back, _) = read_dataset(buf.as_slice(), &ds.schema).unwrap();
        assert_eq!(back, ds);
        let mut buf2 = Vec::new();
        back.write_csv(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn export_rows_and_precision() {
        let (ds, _) = simulate(5, 2, &GeneratorSpec::quick_start(), 2).unwrap();
        let outs: Vec<HeadOutputs> = (0..ds.records.len())
            .map(|i| HeadOutputs::from_logit(0.1 * i as f64 - 0.3, 0.01 + 1e-3 / 3.0 * i as f64))
            .collect();
        let th = [ExportThreshold { q: 0.5, a_q: 0.004 }];
        let mut buf = Vec::new();
        export_predictions(&mut buf, &ds.records, &outs, 2.0, 0.3, &th).unwrap();
        let mut rdr = csv::Reader::from_reader(buf.as_slice());
        assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), ["su_id", "year", "p", "sigma", "h_q0.5"]);
        let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), ds.records.len());
        for (row, o) in rows.iter().zip(&outs) {
            assert_eq!(row[2].parse::<f64>().unwrap(), o.p);
            assert_eq!(row[3].parse::<f64>().unwrap(), o.sigma);
        }

        let mut empty = Vec::new();
        export_predictions(&mut empty, &[], &[], 2.0, 0.3, &th).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap(), "su_id,year,p,sigma,h_q0.5\n");
    }
}
