//! Per-site trigger frequency models, return levels and analogue years.
//!
//! Each site's yearly precipitation summary follows an eGPD with its own
//! scale and shapes shared across sites. Return levels are eGPD quantiles.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ascent::{self, AscentOptions};
use crate::data::{fmt_f64, PrecipRow};
use crate::egpd::{self, EgpdParams};
use crate::error::{HazardError, Result, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerVariable {
    AnnualMax,
    AnnualMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerFrequencyModel {
    pub kappa: f64,
    pub xi: f64,
    /// Per-site scale, keyed by site id.
    pub sigma: BTreeMap<String, f64>,
    pub variable: TriggerVariable,
    /// Observations per year.
    pub n_y: u32,
}

impl TriggerFrequencyModel {
    pub fn params(&self, site: &str) -> Result<EgpdParams> {
        let sigma = *self
            .sigma
            .get(site)
            .ok_or_else(|| HazardError::UnknownSite(site.to_string()))?;
        EgpdParams::new(self.kappa, sigma, self.xi)
    }

    pub fn sites(&self) -> impl Iterator<Item = &str> {
        self.sigma.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyFit {
    pub model: TriggerFrequencyModel,
    /// Pooled negative log-likelihood after each completed phase.
    pub nll_trace: Vec<f64>,
    pub alternations: usize,
    /// The shared upper-tail shape ran down to [`XI_FLOOR`] and was held
    /// there while the other parameters were fitted.
    pub xi_at_floor: bool,
}

pub const MIN_YEARS: usize = 5;

/// Smallest upper-tail shape a frequency fit may return. Light-tailed
/// series drive the likelihood towards xi -> 0, where it flattens out; the
/// fit then holds xi here, which is close to the exponential-tail limit.
pub const XI_FLOOR: f64 = 1e-4;
const MAX_ALTERNATIONS: usize = 2000;
/// Past this the shared kappa is running off to infinity: with few years the
/// likelihood can keep rising along kappa without a finite maximum.
const KAPPA_CEIL: f64 = 1e6;

/// Checks one site's series is fittable: at least five values, all finite
/// and positive, not all equal.
pub fn check_series(values: &[f64]) -> Result<()> {
    if values.len() < MIN_YEARS {
        return Err(HazardError::Degenerate(format!(
            "{} yearly values, at least {MIN_YEARS} required",
            values.len()
        )));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(HazardError::Domain(format!("yearly values must be positive, got {v}")));
    }
    if values.iter().all(|v| *v == values[0]) {
        return Err(HazardError::Degenerate(format!(
            "constant series ({}); the likelihood has no maximum",
            values[0]
        )));
    }
    Ok(())
}

fn site_loglik(values: &[f64], p: &EgpdParams) -> (f64, [f64; 3]) {
    let mut v = 0.0;
    let mut g = [0.0; 3];
    for &x in values {
        let (lp, d) = egpd::logpdf_grad(x, p);
        v += lp;
        for k in 0..3 {
            g[k] += d[k];
        }
    }
    (v, g)
}

fn phase_error(phase: &str, site: Option<&str>, e: HazardError) -> HazardError {
    let place = site.map(|s| format!(" for site {s}")).unwrap_or_default();
    match e {
        HazardError::Convergence {
            iterations,
            grad_norm,
            params,
        } => HazardError::Degenerate(format!(
            "{phase} phase{place} failed to converge after {iterations} iterations \
             (gradient norm {grad_norm:e}, log-parameters {params:?})"
        )),
        HazardError::Boundary(m) => HazardError::Boundary(format!("{phase} phase{place}: {m}")),
        other => other,
    }
}

/// Alternating maximum likelihood: per-site log scales with shapes fixed
/// (sites in parallel), then the shared log shapes with scales fixed, until
/// the pooled likelihood stops improving. Each phase is a monotone ascent,
/// so the pooled negative log-likelihood never increases; the one exception
/// is the single step that pins xi to [`XI_FLOOR`].
pub fn fit_frequency(series: &BTreeMap<String, Vec<f64>>, variable: TriggerVariable) -> Result<FrequencyFit> {
    if series.is_empty() {
        return Err(HazardError::Degenerate("no sites to fit".into()));
    }
    for (site, v) in series {
        check_series(v).map_err(|e| HazardError::Degenerate(format!("site {site}: {e}")))?;
    }
    let sites: Vec<(&String, &Vec<f64>)> = series.iter().collect();
    let total: usize = sites.iter().map(|(_, v)| v.len()).sum();

    // Start from one eGPD fitted to every site's series divided by its mean:
    // a scale fitted under badly wrong shapes can pull the shape phase
    // towards xi -> 0, where the log-xi gradient vanishes.
    let means: Vec<f64> = sites
        .iter()
        .map(|(_, v)| v.iter().sum::<f64>() / v.len() as f64)
        .collect();
    let normalised: Vec<f64> = sites
        .iter()
        .zip(&means)
        .flat_map(|((_, v), m)| v.iter().map(move |x| x / m))
        .collect();
    let (start, mut xi_at_floor) = match egpd::fit_mle(&normalised, &EgpdParams::new(1.0, 0.9, 0.1)?) {
        Ok(f) if f.params.xi > XI_FLOOR => (f.params, false),
        Ok(_) | Err(HazardError::Boundary(_)) => (EgpdParams::new(1.0, 1.0, XI_FLOOR)?, true),
        Err(e) => return Err(phase_error("initial pooled", None, e)),
    };
    let mut log_kappa = start.kappa.ln();
    let mut log_xi = start.xi.ln();
    let mut log_sigma: Vec<f64> = means.iter().map(|m| (start.sigma * m).ln()).collect();

    let pooled = |lk: f64, lx: f64, ls: &[f64]| -> f64 {
        sites
            .iter()
            .zip(ls)
            .map(|((_, v), s)| -site_loglik(v, &EgpdParams::from_log(&[lk, *s, lx])).0)
            .sum()
    };
    let mut trace = vec![pooled(log_kappa, log_xi, &log_sigma)];
    let inner = AscentOptions {
        grad_tol: 1e-9,
        ..AscentOptions::default()
    };

    let mut alternations = 0;
    loop {
        if alternations == MAX_ALTERNATIONS {
            return Err(HazardError::Convergence {
                iterations: alternations,
                grad_norm: f64::NAN,
                params: [vec![log_kappa, log_xi], log_sigma].concat(),
            });
        }
        alternations += 1;

        // scales, one site at a time
        let updated: Vec<Result<f64>> = sites
            .par_iter()
            .zip(log_sigma.par_iter())
            .map(|((site, v), &ls0)| {
                let n = v.len() as f64;
                let f = |x: &[f64]| {
                    let (val, g) = site_loglik(v, &EgpdParams::from_log(&[log_kappa, x[0], log_xi]));
                    (val / n, vec![g[1] / n])
                };
                ascent::maximize(f, &[ls0], inner)
                    .map(|r| r.x[0])
                    .map_err(|e| phase_error("scale", Some(site), e))
            })
            .collect();
        log_sigma = updated.into_iter().collect::<Result<_>>()?;
        trace.push(pooled(log_kappa, log_xi, &log_sigma));

        // shared shapes
        let n = total as f64;
        let f = |x: &[f64]| {
            let mut val = 0.0;
            let mut g = [0.0; 2];
            for ((_, v), &ls) in sites.iter().zip(&log_sigma) {
                let (sv, sg) = site_loglik(v, &EgpdParams::from_log(&[x[0], ls, x[1]]));
                val += sv;
                g[0] += sg[0];
                g[1] += sg[2];
            }
            (val / n, vec![g[0] / n, g[1] / n])
        };
        let kappa_only = |x: &[f64]| {
            let (v, g) = f(&[x[0], XI_FLOOR.ln()]);
            (v, vec![g[0]])
        };
        if !xi_at_floor {
            match ascent::maximize(f, &[log_kappa, log_xi], inner) {
                Ok(r) if r.x[1] > XI_FLOOR.ln() => {
                    log_kappa = r.x[0];
                    log_xi = r.x[1];
                }
                Ok(_) | Err(HazardError::Boundary(_)) => xi_at_floor = true,
                Err(e) => return Err(phase_error("shape", None, e)),
            }
        }
        if xi_at_floor {
            let r = ascent::maximize(kappa_only, &[log_kappa], inner).map_err(|e| phase_error("shape", None, e))?;
            log_kappa = r.x[0];
            log_xi = XI_FLOOR.ln();
        }
        if log_kappa > KAPPA_CEIL.ln() {
            return Err(HazardError::Degenerate(format!(
                "shared kappa exceeded {KAPPA_CEIL:e} after {alternations} alternations: \
                 the likelihood has no finite maximum for these series (too few years?)"
            )));
        }
        let after = pooled(log_kappa, log_xi, &log_sigma);
        let before = trace[trace.len() - 2];
        trace.push(after);

        // joint stationarity: the shape gradient is ~0 after its phase, so
        // check what remains on the scales
        let scale_grad = sites
            .iter()
            .zip(&log_sigma)
            .map(|((_, v), &ls)| {
                let (_, g) = site_loglik(v, &EgpdParams::from_log(&[log_kappa, ls, log_xi]));
                (g[1] / v.len() as f64).abs()
            })
            .fold(0.0, f64::max);
        if scale_grad < 1e-8 || (before - after).abs() <= 1e-13 * after.abs().max(1.0) {
            break;
        }
    }

    let sigma = sites
        .iter()
        .zip(&log_sigma)
        .map(|((s, _), ls)| ((*s).clone(), ls.exp()))
        .collect();
    Ok(FrequencyFit {
        model: TriggerFrequencyModel {
            kappa: log_kappa.exp(),
            xi: log_xi.exp(),
            sigma,
            variable,
            n_y: 1,
        },
        nll_trace: trace,
        alternations,
        xi_at_floor,
    })
}

/// Level expected to be exceeded once in `period` years: the eGPD quantile
/// at `1 - 1/(period * n_y)`.
pub fn return_level(model: &TriggerFrequencyModel, site: &str, period: f64) -> Result<f64> {
    let p = model.params(site)?;
    let exceed = 1.0 / (period * model.n_y as f64);
    if !(exceed > 0.0 && exceed < 1.0) {
        return Err(HazardError::Domain(format!(
            "return period {period} with {} observations per year gives quantile level {} outside (0,1)",
            model.n_y,
            1.0 - exceed
        )));
    }
    Ok(egpd::quantile_from_log((-exceed).ln_1p(), &p))
}

/// Study-area precipitation summary for one year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YearSummary {
    pub year: i32,
    pub mean: f64,
    pub max: f64,
    pub sd: f64,
}

/// Year whose `(mean, max)` is Euclidean-closest to the target; ties go to
/// the later year. Returns the year and its standard deviation.
pub fn analogue_year(observed: &[YearSummary], target_mean: f64, target_max: f64) -> Result<(i32, f64)> {
    let mut best: Option<(f64, &YearSummary)> = None;
    for y in observed {
        let d = (y.mean - target_mean).hypot(y.max - target_max);
        let take = match best {
            None => true,
            Some((bd, by)) => d < bd || (d == bd && y.year > by.year),
        };
        if take {
            best = Some((d, y));
        }
    }
    best.map(|(_, y)| (y.year, y.sd))
        .ok_or_else(|| HazardError::Degenerate("no observed years for analogue selection".into()))
}

/// Site averages of each year's mean, max and standard deviation.
pub fn yearly_summaries(rows: &[PrecipRow]) -> Vec<YearSummary> {
    let mut acc: BTreeMap<i32, ([f64; 3], usize)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry(r.year).or_insert(([0.0; 3], 0));
        e.0[0] += r.precip_mean;
        e.0[1] += r.precip_max;
        e.0[2] += r.precip_sd;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(year, (s, n))| {
            let n = n as f64;
            YearSummary {
                year,
                mean: s[0] / n,
                max: s[1] / n,
                sd: s[2] / n,
            }
        })
        .collect()
}

/// Yearly series per site for one trigger variable, in year order.
pub fn series_by_site(rows: &[PrecipRow], variable: TriggerVariable) -> BTreeMap<String, Vec<f64>> {
    let mut by_site: BTreeMap<String, Vec<(i32, f64)>> = BTreeMap::new();
    for r in rows {
        let v = match variable {
            TriggerVariable::AnnualMax => r.precip_max,
            TriggerVariable::AnnualMean => r.precip_mean,
        };
        by_site.entry(r.site_id.clone()).or_default().push((r.year, v));
    }
    by_site
        .into_iter()
        .map(|(s, mut v)| {
            v.sort_by_key(|(y, _)| *y);
            (s, v.into_iter().map(|(_, x)| x).collect())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnLevelSet {
    pub site_id: String,
    pub return_period: u32,
    pub rl_max: f64,
    pub rl_mean: f64,
    pub analogue_year: i32,
    pub analogue_sd: f64,
}

impl ReturnLevelSet {
    /// A maximum return level below the mean one points to a poor fit.
    pub fn max_below_mean(&self) -> bool {
        self.rl_max < self.rl_mean
    }
}

/// One set per (site, period), sites in id order and periods ascending.
/// The analogue year for each period is chosen once, against the site
/// averages of the two return levels.
pub fn build_return_level_sets(
    max_model: &TriggerFrequencyModel,
    mean_model: &TriggerFrequencyModel,
    observed: &[YearSummary],
    periods: &[u32],
) -> Result<Vec<ReturnLevelSet>> {
    let only_max: Vec<String> = max_model
        .sites()
        .filter(|s| !mean_model.sigma.contains_key(*s))
        .map(str::to_string)
        .collect();
    let only_mean: Vec<String> = mean_model
        .sites()
        .filter(|s| !max_model.sigma.contains_key(*s))
        .map(str::to_string)
        .collect();
    if !only_max.is_empty() || !only_mean.is_empty() {
        return Err(HazardError::MissingSites([only_max, only_mean].concat()));
    }
    let mut periods = periods.to_vec();
    periods.sort_unstable();
    periods.dedup();

    let sites: Vec<&str> = max_model.sites().collect();
    let mut per_period = Vec::with_capacity(periods.len());
    for &p in &periods {
        let mut levels = Vec::with_capacity(sites.len());
        for s in &sites {
            levels.push((return_level(max_model, s, p as f64)?, return_level(mean_model, s, p as f64)?));
        }
        let n = levels.len().max(1) as f64;
        let target_max = levels.iter().map(|l| l.0).sum::<f64>() / n;
        let target_mean = levels.iter().map(|l| l.1).sum::<f64>() / n;
        let analogue = if sites.is_empty() {
            (0, 0.0)
        } else {
            analogue_year(observed, target_mean, target_max)?
        };
        per_period.push((levels, analogue));
    }
    let mut out = Vec::with_capacity(sites.len() * periods.len());
    for (i, s) in sites.iter().enumerate() {
        for (k, &p) in periods.iter().enumerate() {
            let (levels, (year, sd)) = &per_period[k];
            out.push(ReturnLevelSet {
                site_id: s.to_string(),
                return_period: p,
                rl_max: levels[i].0,
                rl_mean: levels[i].1,
                analogue_year: *year,
                analogue_sd: *sd,
            });
        }
    }
    Ok(out)
}

const PRECIP_HEADER: [&str; 5] = ["site_id", "year", "precip_mean", "precip_max", "precip_sd"];
const RL_HEADER: [&str; 6] = ["site_id", "return_period", "rl_mean", "rl_max", "analogue_year", "analogue_sd"];

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    if found.iter().ne(expected.iter().copied()) {
        return Err(HazardError::Schema(format!(
            "expected header {}, found {}",
            expected.join(","),
            found.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

/// Reads `site_id, year, precip_mean, precip_max, precip_sd`, collecting
/// every bad row before failing.
pub fn read_precip_csv<R: Read>(reader: R) -> Result<Vec<PrecipRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    check_header(rdr.headers()?, &PRECIP_HEADER)?;
    let mut rows = Vec::new();
    let mut bad = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let parsed = (|| -> std::result::Result<PrecipRow, String> {
            let num = |k: usize| -> std::result::Result<f64, String> {
                let v: f64 = rec[k].parse().map_err(|_| format!("{} is not a number", PRECIP_HEADER[k]))?;
                if !v.is_finite() || v < 0.0 {
                    return Err(format!("{} must be finite and >= 0, got {v}", PRECIP_HEADER[k]));
                }
                Ok(v)
            };
            Ok(PrecipRow {
                site_id: rec[0].to_string(),
                year: rec[1].parse().map_err(|_| "year is not an integer".to_string())?,
                precip_mean: num(2)?,
                precip_max: num(3)?,
                precip_sd: num(4)?,
            })
        })();
        match parsed {
            Ok(r) => {
                if !seen.insert((r.site_id.clone(), r.year)) {
                    bad.push(Violation {
                        row,
                        reason: format!("duplicate (site_id, year) = ({}, {})", r.site_id, r.year),
                    });
                } else {
                    rows.push(r);
                }
            }
            Err(reason) => bad.push(Violation { row, reason }),
        }
    }
    if !bad.is_empty() {
        return Err(HazardError::Validation(bad));
    }
    Ok(rows)
}

pub fn write_precip_csv<W: Write>(w: W, rows: &[PrecipRow]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    out.write_record(PRECIP_HEADER)?;
    for r in rows {
        out.write_record([
            r.site_id.clone(),
            r.year.to_string(),
            fmt_f64(r.precip_mean),
            fmt_f64(r.precip_max),
            fmt_f64(r.precip_sd),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_return_levels_csv<W: Write>(w: W, sets: &[ReturnLevelSet]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    out.write_record(RL_HEADER)?;
    for s in sets {
        out.write_record([
            s.site_id.clone(),
            s.return_period.to_string(),
            fmt_f64(s.rl_mean),
            fmt_f64(s.rl_max),
            s.analogue_year.to_string(),
            fmt_f64(s.analogue_sd),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_return_levels_csv<R: Read>(reader: R) -> Result<Vec<ReturnLevelSet>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    check_header(rdr.headers()?, &RL_HEADER)?;
    let mut out = Vec::new();
    let mut bad = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed = (|| -> std::result::Result<ReturnLevelSet, String> {
            let num = |k: usize| -> std::result::Result<f64, String> {
                rec[k]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| format!("{} is not a finite number", RL_HEADER[k]))
            };
            Ok(ReturnLevelSet {
                site_id: rec[0].to_string(),
                return_period: rec[1].parse().map_err(|_| "return_period is not a whole number".to_string())?,
                rl_mean: num(2)?,
                rl_max: num(3)?,
                analogue_year: rec[4].parse().map_err(|_| "analogue_year is not an integer".to_string())?,
                analogue_sd: num(5)?,
            })
        })();
        match parsed {
            Ok(s) => out.push(s),
            Err(reason) => bad.push(Violation { row: i + 1, reason }),
        }
    }
    if !bad.is_empty() {
        return Err(HazardError::Validation(bad));
    }
    Ok(out)
}
