//! Hazard as susceptibility times intensity, hypothesised hazard surfaces
//! under trigger return levels, scenario change and display tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::fmt_f64;
use crate::egpd::{self, EgpdParams};
use crate::error::{HazardError, Result, Violation};
use crate::evaluation::empirical_quantile;
use crate::frequency::ReturnLevelSet;
use crate::model::RegressionModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityThreshold {
    pub q: f64,
    /// Critical area density: the empirical `q`-quantile of the positive
    /// observed area densities.
    pub a_q: f64,
    /// Number of positive observations the quantile was taken over; zero
    /// for thresholds given directly.
    #[serde(default)]
    pub n_positive: usize,
}

/// Linear-interpolation empirical quantile of the positive area densities.
pub fn severity_threshold(positive_areas: &[f64], q: f64) -> Result<SeverityThreshold> {
    if positive_areas.is_empty() {
        return Err(HazardError::Degenerate("no positive area densities".into()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(HazardError::Domain(format!("severity level must lie in (0,1), got {q}")));
    }
    if let Some(a) = positive_areas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(HazardError::Domain(format!("area densities must lie in (0,1), got {a}")));
    }
    let mut sorted = positive_areas.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(SeverityThreshold {
        q,
        a_q: empirical_quantile(&sorted, q),
        n_positive: sorted.len(),
    })
}

/// Probability that the area density exceeds `a_q` given a landslide.
pub fn intensity(sigma: f64, kappa: f64, xi: f64, threshold: &SeverityThreshold) -> Result<f64> {
    egpd::sf(threshold.a_q, &EgpdParams::new(kappa, sigma, xi)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HazardComponents {
    pub p: f64,
    pub i_q: f64,
    pub h: f64,
}

impl HazardComponents {
    pub fn new(p: f64, i_q: f64) -> Self {
        Self { p, i_q, h: p * i_q }
    }
}

pub fn hazard_record(features: &[f64], model: &RegressionModel, threshold: &SeverityThreshold) -> Result<HazardComponents> {
    let o = model.predict_record(features)?;
    Ok(HazardComponents::new(o.p, intensity(o.sigma, model.kappa(), model.xi(), threshold)?))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scenario {
    Historical,
    Ssp245,
    Ssp585,
    Custom(String),
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::Historical => f.write_str("historical"),
            Scenario::Ssp245 => f.write_str("ssp245"),
            Scenario::Ssp585 => f.write_str("ssp585"),
            Scenario::Custom(s) => f.write_str(s),
        }
    }
}

impl FromStr for Scenario {
    type Err = HazardError;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "historical" => Scenario::Historical,
            "ssp245" => Scenario::Ssp245,
            "ssp585" => Scenario::Ssp585,
            "" => return Err(HazardError::Domain("empty scenario tag".into())),
            other => Scenario::Custom(other.to_string()),
        })
    }
}

impl Serialize for Scenario {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Scenario {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteHazard {
    pub site_id: String,
    pub p: f64,
    pub i_q: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardSurface {
    pub q: f64,
    pub return_period: u32,
    pub scenario: Scenario,
    /// Sorted by site id.
    pub sites: Vec<SiteHazard>,
}

/// Hazard surfaces with each site's trigger drivers replaced by its
/// return levels (max, mean) and the analogue-year standard deviation.
///
/// `site_covariates` holds one full feature vector per site with NDVI
/// already time-averaged; its driver slots are overwritten. One surface is
/// produced per (threshold, period), thresholds outermost and periods in
/// ascending order. Every coverage gap is collected before failing.
pub fn hypothesised_hazard(
    model: &RegressionModel,
    return_levels: &[ReturnLevelSet],
    site_covariates: &BTreeMap<String, Vec<f64>>,
    thresholds: &[SeverityThreshold],
    periods: &[u32],
    scenario: &Scenario,
) -> Result<Vec<HazardSurface>> {
    let [i_max, i_mean, i_sd] = model.driver_positions()?;
    let periods: BTreeSet<u32> = periods.iter().copied().collect();
    let mut by_key: BTreeMap<(u32, &str), &ReturnLevelSet> = BTreeMap::new();
    let mut gaps = Vec::new();
    for r in return_levels.iter().filter(|r| periods.contains(&r.return_period)) {
        if by_key.insert((r.return_period, r.site_id.as_str()), r).is_some() {
            gaps.push(format!("{}: duplicate return levels for P={}", r.site_id, r.return_period));
        }
        if !site_covariates.contains_key(&r.site_id) {
            gaps.push(format!("{}: no site covariates", r.site_id));
        }
    }
    for site in site_covariates.keys() {
        for p in &periods {
            if !by_key.contains_key(&(*p, site.as_str())) {
                gaps.push(format!("{site}: no return levels for P={p}"));
            }
        }
    }
    gaps.sort();
    gaps.dedup();
    if !gaps.is_empty() {
        return Err(HazardError::MissingSites(gaps));
    }

    let mut per_period = Vec::with_capacity(periods.len());
    for &p in &periods {
        let rows: Vec<Vec<f64>> = site_covariates
            .iter()
            .map(|(site, cov)| {
                let rl = by_key[&(p, site.as_str())];
                let mut x = cov.clone();
                x[i_max] = rl.rl_max;
                x[i_mean] = rl.rl_mean;
                x[i_sd] = rl.analogue_sd;
                x
            })
            .collect();
        let outs = model.predict(rows.iter().map(Vec::as_slice))?;
        per_period.push((p, outs));
    }

    let mut surfaces = Vec::with_capacity(thresholds.len() * periods.len());
    for t in thresholds {
        for (p, outs) in &per_period {
            let sites = site_covariates
                .keys()
                .zip(outs)
                .map(|(site, o)| {
                    let c = HazardComponents::new(o.p, intensity(o.sigma, model.kappa(), model.xi(), t)?);
                    Ok(SiteHazard {
                        site_id: site.clone(),
                        p: c.p,
                        i_q: c.i_q,
                        h: c.h,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            surfaces.push(HazardSurface {
                q: t.q,
                return_period: *p,
                scenario: scenario.clone(),
                sites,
            });
        }
    }
    Ok(surfaces)
}

// ---------------------------------------------------------------------------
// Classes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HazardClass {
    None,
    VeryLow,
    Low,
    Moderate,
    High,
    VeryHigh,
}

impl HazardClass {
    pub fn label(self) -> &'static str {
        match self {
            HazardClass::None => "none",
            HazardClass::VeryLow => "very_low",
            HazardClass::Low => "low",
            HazardClass::Moderate => "moderate",
            HazardClass::High => "high",
            HazardClass::VeryHigh => "very_high",
        }
    }
}

/// Lower edges of Very Low through Very High.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassCuts(pub [f64; 5]);

impl Default for ClassCuts {
    fn default() -> Self {
        Self([0.01, 0.05, 0.10, 0.25, 0.50])
    }
}

impl ClassCuts {
    pub fn validate(&self) -> Result<()> {
        if self.0.windows(2).any(|w| !(w[0] < w[1])) || !(self.0[0] > 0.0 && self.0[4] <= 1.0) {
            return Err(HazardError::InvalidParams(format!(
                "class cut points must increase within (0,1], got {:?}",
                self.0
            )));
        }
        Ok(())
    }

    pub fn classify(&self, h: f64) -> HazardClass {
        const CLASSES: [HazardClass; 5] = [
            HazardClass::VeryLow,
            HazardClass::Low,
            HazardClass::Moderate,
            HazardClass::High,
            HazardClass::VeryHigh,
        ];
        let mut c = HazardClass::None;
        for (cut, class) in self.0.iter().zip(CLASSES) {
            if h >= *cut {
                c = class;
            }
        }
        c
    }
}

// ---------------------------------------------------------------------------
// Scenario change
// ---------------------------------------------------------------------------

pub const NO_CHANGE_BAND: f64 = 0.20;
/// Current hazard below this makes a relative change meaningless.
pub const H_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeClass {
    Decrease,
    NoChange,
    Increase,
    Indeterminate,
}

impl ChangeClass {
    pub fn label(self) -> &'static str {
        match self {
            ChangeClass::Decrease => "decrease",
            ChangeClass::NoChange => "no_change",
            ChangeClass::Increase => "increase",
            ChangeClass::Indeterminate => "indeterminate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteChange {
    pub site_id: String,
    pub current: f64,
    pub future: SiteHazard,
    /// `(future - current) / current`; `None` when current is below the floor.
    pub rel_change: Option<f64>,
    pub class: ChangeClass,
}

/// Classify a relative change; `|change| <= band` counts as no change.
pub fn classify_change(current: f64, future: f64, band: f64, h_floor: f64) -> (Option<f64>, ChangeClass) {
    if !(current >= h_floor) {
        return (None, ChangeClass::Indeterminate);
    }
    let rel = (future - current) / current;
    let class = if rel.abs() <= band {
        ChangeClass::NoChange
    } else if rel > 0.0 {
        ChangeClass::Increase
    } else {
        ChangeClass::Decrease
    };
    (Some(rel), class)
}

/// Per-site change from `current` to `future`. Both surfaces must share
/// `q`, return period and site set.
pub fn scenario_change(current: &HazardSurface, future: &HazardSurface, band: f64, h_floor: f64) -> Result<Vec<SiteChange>> {
    if !(band >= 0.0) || !(h_floor > 0.0) {
        return Err(HazardError::InvalidParams("band must be >= 0 and h_floor > 0".into()));
    }
    if current.q != future.q || current.return_period != future.return_period {
        return Err(HazardError::Metadata(format!(
            "current surface is (q={}, P={}), future is (q={}, P={})",
            current.q, current.return_period, future.q, future.return_period
        )));
    }
    let cur: BTreeMap<&str, f64> = current.sites.iter().map(|s| (s.site_id.as_str(), s.h)).collect();
    let fut: BTreeSet<&str> = future.sites.iter().map(|s| s.site_id.as_str()).collect();
    if cur.len() != fut.len() || !cur.keys().all(|k| fut.contains(k)) {
        return Err(HazardError::Metadata("current and future surfaces cover different sites".into()));
    }
    let mut out: Vec<SiteChange> = future
        .sites
        .iter()
        .map(|f| {
            let c = cur[f.site_id.as_str()];
            let (rel_change, class) = classify_change(c, f.h, band, h_floor);
            SiteChange {
                site_id: f.site_id.clone(),
                current: c,
                future: f.clone(),
                rel_change,
                class,
            }
        })
        .collect();
    out.sort_by(|a, b| a.site_id.cmp(&b.site_id));
    Ok(out)
}

// ---------------------------------------------------------------------------
// Hazard-area table
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaCell {
    pub site_id: String,
    pub h: f64,
    pub area: f64,
    /// 0-based rank bins, low to high.
    pub hazard_bin: usize,
    pub area_bin: usize,
    /// `"<hazard_bin+1>-<area_bin+1>"`.
    pub code: String,
}

/// Bin of each value among `k` equal-count rank bins: `floor(k * r / n)`
/// where `r` counts strictly smaller values, so ties share a bin and any
/// increasing relabelling leaves bins unchanged.
pub fn rank_bins(values: &[f64], k: usize) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = values.len();
    values
        .iter()
        .map(|v| {
            let r = sorted.partition_point(|x| x < v);
            (k * r / n).min(k - 1)
        })
        .collect()
}

/// Hazard crossed with slope-unit area, `bins x bins` classes.
pub fn hazard_area_table(surface: &HazardSurface, areas: &BTreeMap<String, f64>, bins: usize) -> Result<Vec<AreaCell>> {
    if bins == 0 {
        return Err(HazardError::InvalidParams("bins must be >= 1".into()));
    }
    let missing: Vec<String> = surface
        .sites
        .iter()
        .filter(|s| !areas.contains_key(&s.site_id))
        .map(|s| format!("{}: no area", s.site_id))
        .collect();
    if !missing.is_empty() {
        return Err(HazardError::MissingSites(missing));
    }
    let area: Vec<f64> = surface.sites.iter().map(|s| areas[&s.site_id]).collect();
    if let Some(a) = area.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
        return Err(HazardError::Domain(format!("site areas must be positive, got {a}")));
    }
    let h: Vec<f64> = surface.sites.iter().map(|s| s.h).collect();
    let hb = rank_bins(&h, bins);
    let ab = rank_bins(&area, bins);
    Ok(surface
        .sites
        .iter()
        .enumerate()
        .map(|(i, s)| AreaCell {
            site_id: s.site_id.clone(),
            h: s.h,
            area: area[i],
            hazard_bin: hb[i],
            area_bin: ab[i],
            code: format!("{}-{}", hb[i] + 1, ab[i] + 1),
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

const SURFACE_HEADER: [&str; 8] = ["site_id", "q", "return_period", "scenario", "p", "i_q", "h", "hazard_class"];

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn surface_row(surface: &HazardSurface, s: &SiteHazard, cuts: &ClassCuts) -> Vec<String> {
    vec![
        s.site_id.clone(),
        fmt_f64(surface.q),
        surface.return_period.to_string(),
        surface.scenario.to_string(),
        fmt_f64(s.p),
        fmt_f64(s.i_q),
        fmt_f64(s.h),
        cuts.classify(s.h).label().to_string(),
    ]
}

/// Long-format table of any number of surfaces.
pub fn write_surfaces_csv<W: Write>(w: W, surfaces: &[HazardSurface], cuts: &ClassCuts) -> Result<()> {
    let mut out = writer(w);
    out.write_record(SURFACE_HEADER)?;
    for surface in surfaces {
        for s in &surface.sites {
            out.write_record(surface_row(surface, s, cuts))?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a long-format surface table, grouping rows by (q, P, scenario)
/// in first-appearance order.
pub fn read_surfaces_csv<R: Read>(reader: R) -> Result<Vec<HazardSurface>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(SURFACE_HEADER.iter().copied()) {
        return Err(HazardError::Schema(format!(
            "expected header {}, found {}",
            SURFACE_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut surfaces: Vec<HazardSurface> = Vec::new();
    let mut bad = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed = (|| -> std::result::Result<(f64, u32, Scenario, SiteHazard), String> {
            let num = |k: usize| -> std::result::Result<f64, String> {
                let v: f64 = rec[k].parse().map_err(|_| format!("{} is not a number", SURFACE_HEADER[k]))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(format!("{} must lie in [0,1], got {v}", SURFACE_HEADER[k]));
                }
                Ok(v)
            };
            Ok((
                num(1)?,
                rec[2].parse().map_err(|_| "return_period is not a whole number".to_string())?,
                rec[3].parse().map_err(|e: HazardError| e.to_string())?,
                SiteHazard {
                    site_id: rec[0].to_string(),
                    p: num(4)?,
                    i_q: num(5)?,
                    h: num(6)?,
                },
            ))
        })();
        match parsed {
            Ok((q, p, scenario, site)) => {
                match surfaces
                    .iter_mut()
                    .find(|s| s.q == q && s.return_period == p && s.scenario == scenario)
                {
                    Some(s) => s.sites.push(site),
                    None => surfaces.push(HazardSurface {
                        q,
                        return_period: p,
                        scenario,
                        sites: vec![site],
                    }),
                }
            }
            Err(reason) => bad.push(Violation { row: i + 1, reason }),
        }
    }
    if !bad.is_empty() {
        return Err(HazardError::Validation(bad));
    }
    for s in &mut surfaces {
        s.sites.sort_by(|a, b| a.site_id.cmp(&b.site_id));
        if s.sites.windows(2).any(|w| w[0].site_id == w[1].site_id) {
            return Err(HazardError::Metadata(format!(
                "duplicate site in surface (q={}, P={}, {})",
                s.q, s.return_period, s.scenario
            )));
        }
    }
    Ok(surfaces)
}

pub fn write_changes_csv<W: Write>(
    w: W,
    future: &HazardSurface,
    changes: &[SiteChange],
    cuts: &ClassCuts,
) -> Result<()> {
    let mut out = writer(w);
    let mut header: Vec<&str> = SURFACE_HEADER.to_vec();
    header.extend(["h_current", "rel_change", "change_class"]);
    out.write_record(&header)?;
    for c in changes {
        let mut row = surface_row(future, &c.future, cuts);
        row.push(fmt_f64(c.current));
        row.push(c.rel_change.map(fmt_f64).unwrap_or_default());
        row.push(c.class.label().to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_area_table_csv<W: Write>(w: W, cells: &[AreaCell]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["site_id", "h", "area", "hazard_bin", "area_bin", "code"])?;
    for c in cells {
        out.write_record([
            c.site_id.clone(),
            fmt_f64(c.h),
            fmt_f64(c.area),
            c.hazard_bin.to_string(),
            c.area_bin.to_string(),
            c.code.clone(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Copies a GeoJSON feature collection, adding the surface's hazard
/// properties to each feature whose `site_key` property names a site.
/// Features without a matching site keep their geometry and get null
/// hazard properties.
pub fn geojson_with_hazard(collection: &Value, surface: &HazardSurface, site_key: &str, cuts: &ClassCuts) -> Result<Value> {
    let features = collection
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| HazardError::Schema("GeoJSON input is not a FeatureCollection".into()))?;
    let by_site: BTreeMap<&str, &SiteHazard> = surface.sites.iter().map(|s| (s.site_id.as_str(), s)).collect();
    let mut out_features = Vec::with_capacity(features.len());
    for f in features {
        let mut f = f.clone();
        let id = f
            .get("properties")
            .and_then(|p| p.get(site_key))
            .and_then(|v| v.as_str().map(str::to_string).or_else(|| v.as_i64().map(|i| i.to_string())));
        let site = id.as_deref().and_then(|i| by_site.get(i));
        let props = f
            .as_object_mut()
            .ok_or_else(|| HazardError::Schema("GeoJSON feature is not an object".into()))?
            .entry("properties")
            .or_insert_with(|| Value::Object(Map::new()));
        if let Value::Object(m) = props {
            m.insert("q".into(), surface.q.into());
            m.insert("return_period".into(), surface.return_period.into());
            m.insert("scenario".into(), surface.scenario.to_string().into());
            match site {
                Some(s) => {
                    m.insert("p".into(), s.p.into());
                    m.insert("i_q".into(), s.i_q.into());
                    m.insert("h".into(), s.h.into());
                    m.insert("hazard_class".into(), cuts.classify(s.h).label().into());
                }
                None => {
                    for k in ["p", "i_q", "h", "hazard_class"] {
                        m.insert(k.into(), Value::Null);
                    }
                }
            }
        }
        out_features.push(f);
    }
    let mut out = collection.clone();
    out["features"] = Value::Array(out_features);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn surface(q: f64, p: u32, hs: &[(&str, f64)]) -> HazardSurface {
        HazardSurface {
            q,
            return_period: p,
            scenario: Scenario::Historical,
            sites: hs
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
    fn threshold_examples() {
        assert_eq!(severity_threshold(&[0.4, 0.1, 0.3, 0.2], 0.5).unwrap().a_q, 0.25);
        assert_eq!(severity_threshold(&[0.3], 0.5).unwrap().a_q, 0.3);
        assert!(severity_threshold(&[], 0.5).is_err());
        assert!(severity_threshold(&[0.0, 0.2], 0.5).is_err());
    }

    #[test]
    fn intensity_examples() {
        let p = EgpdParams::new(2.0, 0.01, 0.3).unwrap();
        let a = egpd::quantile(0.95, &p).unwrap();
        let t = SeverityThreshold { q: 0.5, a_q: a, n_positive: 1 };
        assert!((intensity(0.01, 2.0, 0.3, &t).unwrap() - 0.05).abs() < 1e-10);
        let t = SeverityThreshold { q: 0.5, a_q: 1.0, n_positive: 1 };
        assert!((intensity(1.0, 1.0, 1.0, &t).unwrap() - 0.5).abs() < 1e-15);
        let t = SeverityThreshold { q: 0.5, a_q: 0.01, n_positive: 1 };
        assert!(intensity(1e-8, 2.0, 0.3, &t).unwrap() < 1e-12);
    }

    #[test]
    fn hazard_is_the_product() {
        let c = HazardComponents::new(0.5, 0.4);
        assert_eq!(c.h, 0.2);
        assert_eq!(HazardComponents::new(0.9, 0.0).h, 0.0);
    }

    #[test]
    fn classes() {
        let c = ClassCuts::default();
        assert_eq!(c.classify(0.0), HazardClass::None);
        assert_eq!(c.classify(0.01), HazardClass::VeryLow);
        assert_eq!(c.classify(0.07), HazardClass::Low);
        assert_eq!(c.classify(0.2), HazardClass::Moderate);
        assert_eq!(c.classify(0.3), HazardClass::High);
        assert_eq!(c.classify(1.0), HazardClass::VeryHigh);
        assert!(ClassCuts([0.1, 0.05, 0.2, 0.3, 0.4]).validate().is_err());
    }

    #[test]
    fn change_examples() {
        let b = NO_CHANGE_BAND;
        let (r, c) = classify_change(0.10, 0.25, b, H_FLOOR);
        assert!((r.unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(c, ChangeClass::Increase);
        assert_eq!(classify_change(0.10, 0.11, b, H_FLOOR).1, ChangeClass::NoChange);
        assert_eq!(classify_change(0.10, 0.07, b, H_FLOOR).1, ChangeClass::Decrease);
        assert_eq!(classify_change(0.10, 0.10, b, H_FLOOR), (Some(0.0), ChangeClass::NoChange));
        assert_eq!(classify_change(1e-9, 0.5, b, H_FLOOR), (None, ChangeClass::Indeterminate));
    }

    #[test]
    fn scenario_change_checks_metadata() {
        let a = surface(0.5, 10, &[("A", 0.1), ("B", 0.2)]);
        let b = surface(0.95, 10, &[("A", 0.1), ("B", 0.2)]);
        assert!(matches!(scenario_change(&a, &b, 0.2, H_FLOOR), Err(HazardError::Metadata(_))));
        let c = surface(0.5, 10, &[("A", 0.1)]);
        assert!(scenario_change(&a, &c, 0.2, H_FLOOR).is_err());
        let same = scenario_change(&a, &a, 0.2, H_FLOOR).unwrap();
        assert!(same.iter().all(|c| c.class == ChangeClass::NoChange));
    }

    #[test]
    fn rank_bins_are_rank_invariant() {
        let v = [5.0, 1.0, 3.0, 3.0, 9.0, 2.0];
        let b = rank_bins(&v, 3);
        let t: Vec<f64> = v.iter().map(|x: &f64| x.ln() * 7.0 + 1.0).collect();
        assert_eq!(rank_bins(&t, 3), b);
        assert_eq!(b[2], b[3]);
        assert_eq!(b, vec![2, 0, 1, 1, 2, 0]);
    }

    #[test]
    fn surface_csv_round_trip() {
        let s = vec![surface(0.5, 10, &[("A", 0.1), ("B", 0.2)]), surface(0.95, 5, &[("A", 0.01)])];
        let mut buf = Vec::new();
        write_surfaces_csv(&mut buf, &s, &ClassCuts::default()).unwrap();
        assert_eq!(read_surfaces_csv(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn geojson_mirrors_features() {
        let gj: Value = serde_json::json!({
            "type": "FeatureCollection",
            "features": [
                {"type": "Feature", "geometry": {"type": "Point", "coordinates": [85.3, 27.7]}, "properties": {"su_id": "A"}},
                {"type": "Feature", "geometry": null, "properties": {"su_id": "Z"}}
            ]
        });
        let s = surface(0.5, 10, &[("A", 0.3)]);
        let out = geojson_with_hazard(&gj, &s, "su_id", &ClassCuts::default()).unwrap();
        assert_eq!(out["features"][0]["geometry"], gj["features"][0]["geometry"]);
        assert_eq!(out["features"][0]["properties"]["h"], 0.3);
        assert_eq!(out["features"][0]["properties"]["hazard_class"], "high");
        assert!(out["features"][1]["properties"]["h"].is_null());
    }
}
