//! Classification and probabilistic diagnostics: ROC/AUC, CRPS and
//! probability-integral-transform Q-Q data.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SuYearRecord;
use crate::egpd::{self, EgpdParams};
use crate::error::{HazardError, Result};
use crate::model::RegressionModel;
use crate::quad;

// ---------------------------------------------------------------------------
// ROC / AUC
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)` from (0,0) to (1,1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// AUC as the Mann-Whitney statistic over `n_pos * n_neg` (ties count one
/// half), plus the ROC curve swept over the distinct scores.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(HazardError::Shape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(HazardError::Domain("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(HazardError::Degenerate(
            "AUC needs at least one positive and one negative label".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    // descending sweep; each group of tied scores moves the curve diagonally
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut concordant = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut gp, mut gn) = (0usize, 0usize);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                gp += 1;
            } else {
                gn += 1;
            }
            i += 1;
        }
        // positives in this group beat every negative below it; ties count half
        concordant += gn as f64 * tp as f64 + 0.5 * gn as f64 * gp as f64;
        tp += gp;
        fp += gn;
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(RocCurve {
        points,
        auc: concordant / (n_pos as f64 * n_neg as f64),
    })
}

// ---------------------------------------------------------------------------
// CRPS
// ---------------------------------------------------------------------------

/// A forecast distribution on `[0, inf)` the CRPS integral can be taken over.
pub trait Forecast {
    fn cdf(&self, x: f64) -> f64;

    /// Upper integration limit and a bound on `int_T^inf (1 - F)^2`.
    fn upper_limit(&self, tol: f64) -> (f64, f64);

    /// Points where the CDF has a kink or jump.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

impl Forecast for EgpdParams {
    fn cdf(&self, x: f64) -> f64 {
        egpd::cdf_unchecked(x, self)
    }

    /// Starts where `1 - F < 1e-10` and doubles until the analytic tail bound
    /// `max(kappa,1)^2 sigma / (2 - xi) (1 + xi T / sigma)^(1 - 2/xi)` (from
    /// `1 - F <= max(kappa,1) (1 + xi x / sigma)^(-1/xi)`) drops under `tol`.
    fn upper_limit(&self, tol: f64) -> (f64, f64) {
        let bound = |t: f64| {
            if self.xi >= 2.0 {
                return f64::INFINITY;
            }
            let k = self.kappa.max(1.0);
            k * k * self.sigma / (2.0 - self.xi) * (1.0 + self.xi * t / self.sigma).powf(1.0 - 2.0 / self.xi)
        };
        let mut t = egpd::quantile_from_log((-1e-10f64).ln_1p(), self);
        let mut b = bound(t);
        let mut guard = 0;
        while b > tol && guard < 200 {
            t *= 2.0;
            b = bound(t);
            guard += 1;
        }
        (t, b)
    }
}

/// Uniform on `[lo, hi]`.
#[derive(Debug, Clone, Copy)]
pub struct UniformForecast {
    pub lo: f64,
    pub hi: f64,
}

impl Forecast for UniformForecast {
    fn cdf(&self, x: f64) -> f64 {
        ((x - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }
    fn upper_limit(&self, _tol: f64) -> (f64, f64) {
        (self.hi, 0.0)
    }
    fn breakpoints(&self) -> Vec<f64> {
        vec![self.lo, self.hi]
    }
}

/// All mass at one point.
#[derive(Debug, Clone, Copy)]
pub struct PointMass(pub f64);

impl Forecast for PointMass {
    fn cdf(&self, x: f64) -> f64 {
        if x >= self.0 {
            1.0
        } else {
            0.0
        }
    }
    fn upper_limit(&self, _tol: f64) -> (f64, f64) {
        (self.0, 0.0)
    }
    fn breakpoints(&self) -> Vec<f64> {
        vec![self.0]
    }
}

pub const CRPS_TOLERANCE: f64 = 1e-7;

/// `int_0^inf (F(x) - 1{obs <= x})^2 dx` by adaptive Gauss-Kronrod, split at
/// the observation and the forecast's breakpoints, truncated at the
/// forecast's upper limit. Total absolute error stays under 1e-7.
pub fn crps<F: Forecast + ?Sized>(forecast: &F, observation: f64) -> Result<f64> {
    if !(observation >= 0.0) || !observation.is_finite() {
        return Err(HazardError::Domain(format!(
            "observation must be finite and >= 0, got {observation}"
        )));
    }
    let tail_budget = CRPS_TOLERANCE / 10.0;
    let (upper, tail) = forecast.upper_limit(tail_budget);
    if tail > tail_budget {
        return Err(HazardError::Quadrature {
            achieved: tail,
            requested: CRPS_TOLERANCE,
        });
    }
    let upper = upper.max(observation);
    let mut cuts = vec![0.0, observation, upper];
    cuts.extend(forecast.breakpoints().into_iter().filter(|b| *b > 0.0 && *b < upper));
    // geometric cuts keep heavy tails from starving the adaptive scheme
    let mut g = observation.max(upper * 1e-12).max(f64::MIN_POSITIVE);
    while g < upper {
        cuts.push(g);
        g *= 4.0;
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let pieces = (cuts.len() - 1) as f64;
    let piece_tol = (CRPS_TOLERANCE - tail_budget) / pieces / 2.0;
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let above = a >= observation;
        let r = quad::integrate(
            |x| {
                let f = forecast.cdf(x);
                if above {
                    (1.0 - f) * (1.0 - f)
                } else {
                    f * f
                }
            },
            a,
            b,
            piece_tol,
            4000,
        )?;
        total += r.value;
    }
    Ok(total)
}

/// Summation in a fixed binary-tree order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrpsSummary {
    pub total: f64,
    /// `None` when there are no positive records.
    pub mean: Option<f64>,
    pub count: usize,
}

/// CRPS of the model's per-record eGPD against each positive record's area
/// density. Records without a landslide are skipped.
pub fn dataset_crps(model: &RegressionModel, records: &[SuYearRecord]) -> Result<CrpsSummary> {
    let positives: Vec<&SuYearRecord> = records.iter().filter(|r| r.landslide).collect();
    if positives.is_empty() {
        return Ok(CrpsSummary {
            total: 0.0,
            mean: None,
            count: 0,
        });
    }
    let outs = model.predict(positives.iter().map(|r| r.features.as_slice()))?;
    let sigmas: Vec<f64> = outs.iter().map(|o| o.sigma).collect();
    let obs: Vec<f64> = positives.iter().map(|r| r.area_density).collect();
    crps_many(model.kappa(), model.xi(), &sigmas, &obs).map_err(|(i, e)| {
        HazardError::Domain(format!(
            "CRPS failed for record ({}, {}): {e}",
            positives[i].su_id, positives[i].year
        ))
    })
}

/// CRPS for aligned `(sigma, observation)` pairs sharing `kappa`, `xi`.
/// Errors carry the failing index.
pub fn crps_many(
    kappa: f64,
    xi: f64,
    sigmas: &[f64],
    observations: &[f64],
) -> std::result::Result<CrpsSummary, (usize, HazardError)> {
    let values: Vec<std::result::Result<f64, (usize, HazardError)>> = sigmas
        .par_iter()
        .zip(observations.par_iter())
        .enumerate()
        .map(|(i, (&s, &a))| {
            let p = EgpdParams::new(kappa, s, xi).map_err(|e| (i, e))?;
            crps(&p, a).map_err(|e| (i, e))
        })
        .collect();
    let values: Vec<f64> = values.into_iter().collect::<std::result::Result<_, _>>()?;
    let total = pairwise_sum(&values);
    Ok(CrpsSummary {
        total,
        mean: if values.is_empty() {
            None
        } else {
            Some(total / values.len() as f64)
        },
        count: values.len(),
    })
}

// ---------------------------------------------------------------------------
// Q-Q
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QqPoint {
    pub level: f64,
    /// Empirical `level`-quantile of the PIT values `F_i(a_i)`.
    pub pit_empirical: f64,
    /// Pooled model quantile at the empirical PIT quantile.
    pub empirical_quantile: f64,
    /// Pooled model quantile at `level`.
    pub model_quantile: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QqData {
    pub points: Vec<QqPoint>,
    pub count: usize,
}

impl QqData {
    /// Largest distance of a PIT point from the 45-degree line.
    pub fn max_pit_deviation(&self) -> f64 {
        self.points
            .iter()
            .fold(0.0, |m, p| m.max((p.pit_empirical - p.level).abs()))
    }
}

/// Asymptotic 95% Kolmogorov-Smirnov half-width for `n` samples.
pub fn ks_band_95(n: usize) -> f64 {
    1.358 / (n as f64).sqrt()
}

/// Empirical quantile with linear interpolation between order statistics
/// at position `1 + (n - 1) q`. `sorted` must be ascending and nonempty.
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Level-`u` quantile of the equal-weight mixture of eGPDs.
fn mixture_quantile(params: &[EgpdParams], u: f64) -> f64 {
    let mix = |x: f64| params.iter().map(|p| egpd::cdf_unchecked(x, p)).sum::<f64>() / params.len() as f64;
    let mut lo = params
        .iter()
        .map(|p| egpd::quantile_from_log(u.ln(), p))
        .fold(f64::INFINITY, f64::min);
    let mut hi = params
        .iter()
        .map(|p| egpd::quantile_from_log(u.ln(), p))
        .fold(0.0, f64::max);
    // the mixture quantile lies between the smallest and largest component quantiles
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mix(mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// PIT-pooled Q-Q data. Each observation is mapped to `u_i = F_i(a_i)`;
/// the empirical quantiles of `u` are compared with the uniform reference
/// and expressed in area-density units through the pooled (mixture) model
/// quantile function.
pub fn qq_from_params(params: &[EgpdParams], observations: &[f64], grid: &[f64]) -> Result<QqData> {
    if params.len() != observations.len() {
        return Err(HazardError::Shape("params and observations differ in length".into()));
    }
    if observations.is_empty() {
        return Err(HazardError::Degenerate("Q-Q data needs at least one observation".into()));
    }
    if let Some(g) = grid.iter().find(|g| !(**g > 0.0 && **g < 1.0)) {
        return Err(HazardError::Domain(format!("Q-Q grid level {g} outside (0,1)")));
    }
    let mut pit: Vec<f64> = params
        .iter()
        .zip(observations)
        .map(|(p, a)| egpd::cdf_unchecked(*a, p))
        .collect();
    pit.sort_by(f64::total_cmp);
    let mut levels = grid.to_vec();
    levels.sort_by(f64::total_cmp);
    let points = levels
        .iter()
        .map(|&g| {
            let pe = if pit.len() == 1 {
                pit[0]
            } else {
                empirical_quantile(&pit, g)
            };
            let pe_clamped = pe.clamp(1e-15, 1.0 - 1e-15);
            QqPoint {
                level: g,
                pit_empirical: pe,
                empirical_quantile: mixture_quantile(params, pe_clamped),
                model_quantile: mixture_quantile(params, g),
            }
        })
        .collect();
    Ok(QqData {
        points,
        count: observations.len(),
    })
}

pub fn qq_data(model: &RegressionModel, records: &[SuYearRecord], grid: &[f64]) -> Result<QqData> {
    let positives: Vec<&SuYearRecord> = records.iter().filter(|r| r.landslide).collect();
    if positives.is_empty() {
        return Err(HazardError::Degenerate("no positive records for Q-Q data".into()));
    }
    let outs = model.predict(positives.iter().map(|r| r.features.as_slice()))?;
    let params: Vec<EgpdParams> = outs.iter().map(|o| model.egpd(o.sigma)).collect();
    let obs: Vec<f64> = positives.iter().map(|r| r.area_density).collect();
    qq_from_params(&params, &obs, grid)
}

/// Levels 0.01, 0.02, ..., 0.99.
pub fn default_qq_grid() -> Vec<f64> {
    (1..100).map(|i| i as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub auc: Option<f64>,
    pub roc: Vec<(f64, f64)>,
    pub crps_total: f64,
    pub crps_mean: Option<f64>,
    pub qq: Vec<QqPoint>,
    pub n_records: usize,
    pub n_positive: usize,
    pub n_negative: usize,
    pub kappa: f64,
    pub xi: f64,
}

/// Full diagnostic report on `records`.
pub fn evaluate(model: &RegressionModel, records: &[SuYearRecord], grid: &[f64]) -> Result<EvaluationReport> {
    let outs = model.predict(records.iter().map(|r| r.features.as_slice()))?;
    let scores: Vec<f64> = outs.iter().map(|o| o.p).collect();
    let labels: Vec<bool> = records.iter().map(|r| r.landslide).collect();
    let n_pos = labels.iter().filter(|l| **l).count();
    let roc = if n_pos > 0 && n_pos < labels.len() {
        Some(auc(&scores, &labels)?)
    } else {
        None
    };
    let crps = dataset_crps(model, records)?;
    let qq = if n_pos > 0 {
        qq_data(model, records, grid)?.points
    } else {
        Vec::new()
    };
    Ok(EvaluationReport {
        auc: roc.as_ref().map(|r| r.auc),
        roc: roc.map(|r| r.points).unwrap_or_default(),
        crps_total: crps.total,
        crps_mean: crps.mean,
        qq,
        n_records: records.len(),
        n_positive: n_pos,
        n_negative: records.len() - n_pos,
        kappa: model.kappa(),
        xi: model.xi(),
    })
}
