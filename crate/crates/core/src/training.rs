//! Joint loss, reverse-mode gradients, Adam and the seeded training loop.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, Split, Standardizer, SuYearRecord};
use crate::egpd::{self, EgpdParams};
use crate::error::{HazardError, Result};
use crate::evaluation;
use crate::model::RegressionModel;
use crate::network::{Gradients, HeadOutputs, NetworkParameters, NetworkShape};
use crate::seed;

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub gamma: f64,
    pub class_weight_positive: f64,
    pub class_weight_negative: f64,
    pub batch_size: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            class_weight_positive: 0.9,
            class_weight_negative: 0.1,
            batch_size: 2048,
        }
    }
}

impl LossConfig {
    pub fn new(gamma: f64) -> Result<Self> {
        let c = Self {
            gamma,
            ..Self::default()
        };
        c.validate()?;
        Ok(c)
    }

    /// `0 < gamma < 1`, positive class weights, nonzero batch size.
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(HazardError::InvalidParams(format!(
                "gamma must lie in (0,1), got {}",
                self.gamma
            )));
        }
        self.check_weights()?;
        if self.batch_size == 0 {
            return Err(HazardError::InvalidParams("batch size must be >= 1".into()));
        }
        Ok(())
    }

    fn check_weights(&self) -> Result<()> {
        let ok = |w: f64| w > 0.0 && w.is_finite();
        if !ok(self.class_weight_positive) || !ok(self.class_weight_negative) {
            return Err(HazardError::InvalidParams(format!(
                "class weights must be positive, got {} and {}",
                self.class_weight_positive, self.class_weight_negative
            )));
        }
        Ok(())
    }

    /// Looser check used by the loss itself: the closed interval is allowed
    /// so the two components can be isolated.
    fn check_for_loss(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(HazardError::InvalidParams(format!(
                "gamma must lie in [0,1], got {}",
                self.gamma
            )));
        }
        self.check_weights()
    }
}

/// The two loss components before mixing by `gamma`, both batch sums.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    /// Class-weighted binary cross-entropy.
    pub bce: f64,
    /// Negative eGPD log-density over the records with a landslide.
    pub egpd_nll: f64,
}

impl LossTerms {
    pub fn combine(&self, gamma: f64) -> f64 {
        let mut total = gamma * self.bce;
        // keep an exact zero when the size component is switched off
        if gamma < 1.0 {
            total += (1.0 - gamma) * self.egpd_nll;
        }
        total
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn check_alignment(batch: &[SuYearRecord], outputs: &[HeadOutputs]) -> Result<()> {
    if batch.len() != outputs.len() {
        return Err(HazardError::Shape(format!(
            "{} records but {} outputs",
            batch.len(),
            outputs.len()
        )));
    }
    for (i, r) in batch.iter().enumerate() {
        if r.landslide && !(r.area_density > 0.0) {
            return Err(HazardError::Inconsistent {
                index: i,
                reason: format!("landslide with area density {}", r.area_density),
            });
        }
        if !r.landslide && r.area_density != 0.0 {
            return Err(HazardError::Inconsistent {
                index: i,
                reason: format!("no landslide but area density {}", r.area_density),
            });
        }
    }
    Ok(())
}

/// Both loss components for a batch. Cross-entropy is evaluated from the
/// logit, so probabilities near 0 or 1 stay finite.
pub fn loss_terms(
    batch: &[SuYearRecord],
    outputs: &[HeadOutputs],
    kappa: f64,
    xi: f64,
    config: &LossConfig,
) -> Result<LossTerms> {
    check_alignment(batch, outputs)?;
    config.check_for_loss()?;
    let mut t = LossTerms::default();
    for (r, o) in batch.iter().zip(outputs) {
        if r.landslide {
            t.bce += config.class_weight_positive * softplus(-o.logit);
            let p = EgpdParams::new(kappa, o.sigma, xi)?;
            t.egpd_nll -= egpd::logpdf(r.area_density, &p)?;
        } else {
            t.bce += config.class_weight_negative * softplus(o.logit);
        }
    }
    Ok(t)
}

/// `gamma * BCE + (1 - gamma) * eGPD NLL`, summed over the batch.
pub fn joint_loss(
    batch: &[SuYearRecord],
    outputs: &[HeadOutputs],
    kappa: f64,
    xi: f64,
    config: &LossConfig,
) -> Result<f64> {
    Ok(loss_terms(batch, outputs, kappa, xi, config)?.combine(config.gamma))
}

/// Loss and its derivatives with respect to each head output and the two
/// global shape parameters (in log space).
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGradients {
    pub loss: f64,
    pub d_logit: Vec<f64>,
    pub d_sigma: Vec<f64>,
    pub d_log_kappa: f64,
    pub d_log_xi: f64,
}

pub fn output_gradients(
    batch: &[SuYearRecord],
    outputs: &[HeadOutputs],
    kappa: f64,
    xi: f64,
    config: &LossConfig,
) -> Result<OutputGradients> {
    check_alignment(batch, outputs)?;
    config.check_for_loss()?;
    let g = config.gamma;
    let (w1, w0) = (config.class_weight_positive, config.class_weight_negative);
    let mut terms = LossTerms::default();
    let mut out = OutputGradients {
        loss: 0.0,
        d_logit: vec![0.0; batch.len()],
        d_sigma: vec![0.0; batch.len()],
        d_log_kappa: 0.0,
        d_log_xi: 0.0,
    };
    for (i, (r, o)) in batch.iter().zip(outputs).enumerate() {
        let p = crate::network::sigmoid(o.logit);
        if r.landslide {
            terms.bce += w1 * softplus(-o.logit);
            out.d_logit[i] = -g * w1 * (1.0 - p);
            let params = EgpdParams::new(kappa, o.sigma, xi)?;
            let (lp, d) = egpd::logpdf_grad(r.area_density, &params);
            terms.egpd_nll -= lp;
            out.d_sigma[i] = -(1.0 - g) * d[1] / o.sigma;
            out.d_log_kappa -= (1.0 - g) * d[0];
            out.d_log_xi -= (1.0 - g) * d[2];
        } else {
            terms.bce += w0 * softplus(o.logit);
            out.d_logit[i] = g * w0 * p;
        }
    }
    out.loss = terms.combine(g);
    Ok(out)
}

/// Records with `area_density` expressed in units of `scale`.
fn rescaled(batch: &[&SuYearRecord], scale: f64) -> Vec<SuYearRecord> {
    batch
        .iter()
        .map(|r| SuYearRecord {
            area_density: r.area_density / scale,
            ..(*r).clone()
        })
        .collect()
}

/// Training-mode loss of `model` on `batch`, in area-density units.
/// Updates batch-norm running statistics like any training pass.
pub fn train_mode_loss(
    batch: &[SuYearRecord],
    model: &mut RegressionModel,
    config: &LossConfig,
    dropout_seed: u64,
) -> Result<f64> {
    let x = model.design(batch.iter().map(|r| r.features.as_slice()))?;
    let (outs, _) = model.network.forward_train(&x, dropout_seed)?;
    let outs: Vec<HeadOutputs> = outs.into_iter().map(|o| model.to_data_units(o)).collect();
    joint_loss(batch, &outs, model.kappa(), model.xi(), config)
}

/// Batch loss and exact reverse-mode gradient with respect to every
/// trainable parameter, through a training-mode forward pass.
pub fn gradient(
    batch: &[SuYearRecord],
    model: &mut RegressionModel,
    config: &LossConfig,
    dropout_seed: u64,
) -> Result<(f64, Gradients)> {
    let refs: Vec<&SuYearRecord> = batch.iter().collect();
    gradient_refs(&refs, model, config, dropout_seed)
}

fn gradient_refs(
    batch: &[&SuYearRecord],
    model: &mut RegressionModel,
    config: &LossConfig,
    dropout_seed: u64,
) -> Result<(f64, Gradients)> {
    let x = model.design(batch.iter().map(|r| r.features.as_slice()))?;
    let (outs, tape) = model.network.forward_train(&x, dropout_seed)?;
    // Work in standardised-response units: the scale derivative is unchanged
    // and the loss differs from the data-unit loss by a constant.
    let scale = model.response_scale;
    let local = rescaled(batch, scale);
    let og = output_gradients(&local, &outs, model.kappa(), model.xi(), config)?;
    let n_pos = batch.iter().filter(|r| r.landslide).count() as f64;
    let loss = og.loss + (1.0 - config.gamma) * n_pos * scale.ln();
    let grads = model
        .network
        .backward(&tape, &og.d_logit, &og.d_sigma, og.d_log_kappa, og.d_log_xi);
    check_gradients(&model.network, &grads)?;
    Ok((loss, grads))
}

fn check_gradients(params: &NetworkParameters, grads: &Gradients) -> Result<()> {
    for ((name, _), g) in params.trainable().iter().zip(&grads.tensors) {
        if let Some(k) = g.iter().position(|v| !v.is_finite()) {
            return Err(HazardError::NonFiniteGradient {
                path: format!("{name}[{k}]"),
            });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub learning_rate_initial: f64,
    pub decay_factor: f64,
    pub decay_every: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(params: &NetworkParameters, learning_rate: f64, decay_factor: f64, decay_every: u64) -> Self {
        let zeros = Gradients::zeros_like(params).tensors;
        Self {
            step: 0,
            learning_rate_initial: learning_rate,
            decay_factor,
            decay_every: decay_every.max(1),
            first_moment: zeros.clone(),
            second_moment: zeros,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// Staircase schedule `lr0 * decay^floor(step / decay_every)`.
    pub fn effective_lr(&self) -> f64 {
        self.learning_rate_initial * self.decay_factor.powf((self.step / self.decay_every) as f64)
    }
}

/// One bias-corrected Adam update; the learning rate is taken from the
/// schedule at the current step, then the step is incremented.
pub fn adam_step(params: &mut NetworkParameters, grad: &Gradients, state: &mut OptimizerState) -> Result<()> {
    let lr = state.effective_lr();
    let mut tensors = params.trainable_mut();
    let shapes_ok = tensors.len() == grad.tensors.len()
        && tensors.len() == state.first_moment.len()
        && tensors
            .iter()
            .zip(&grad.tensors)
            .zip(&state.first_moment)
            .all(|((p, g), m)| p.len() == g.len() && p.len() == m.len());
    if !shapes_ok {
        return Err(HazardError::Shape("gradient and optimizer state do not match parameters".into()));
    }
    let t = (state.step + 1) as f64;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powf(t);
    let c2 = 1.0 - b2.powf(t);
    for (k, p) in tensors.iter_mut().enumerate() {
        let g = &grad.tensors[k];
        let m = &mut state.first_moment[k];
        let v = &mut state.second_moment[k];
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            p[j] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    state.step += 1;
    Ok(())
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Full run configuration; doubles as the JSON run-config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub class_weight_positive: f64,
    pub class_weight_negative: f64,
    pub learning_rate: f64,
    pub decay_factor: f64,
    pub decay_every: u64,
    pub dropout_rate: f64,
    pub bn_momentum: f64,
    pub blocks: usize,
    pub width: usize,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    /// Validation AUC/CRPS are computed every this many epochs (and at the
    /// last one); other trace rows leave them empty.
    pub metrics_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 100,
            batch_size: 2048,
            gamma: 0.5,
            class_weight_positive: 0.9,
            class_weight_negative: 0.1,
            learning_rate: 1e-3,
            decay_factor: 0.95,
            decay_every: 50_000,
            dropout_rate: crate::network::DEFAULT_DROPOUT,
            bn_momentum: crate::network::DEFAULT_BN_MOMENTUM,
            blocks: crate::network::DEFAULT_BLOCKS,
            width: crate::network::DEFAULT_WIDTH,
            train_fraction: 0.7,
            validation_fraction: 0.3,
            metrics_every: 1,
        }
    }
}

impl TrainConfig {
    /// Settings for the synthetic quick-start run: 200 epochs of batch 256
    /// (a 20 000-record dataset gives ~38 Adam steps per epoch), with
    /// validation AUC/CRPS every 10 epochs.
    pub fn quick_start() -> Self {
        Self {
            epochs: 200,
            batch_size: 256,
            metrics_every: 10,
            ..Self::default()
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            gamma: self.gamma,
            class_weight_positive: self.class_weight_positive,
            class_weight_negative: self.class_weight_negative,
            batch_size: self.batch_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss().validate()?;
        let frac = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(HazardError::InvalidParams(format!("{name} must lie in (0,1), got {v}")))
            }
        };
        frac("train_fraction", self.train_fraction)?;
        frac("validation_fraction", self.validation_fraction)?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(HazardError::InvalidParams("learning_rate must be positive".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(HazardError::InvalidParams("decay_factor must lie in (0,1]".into()));
        }
        if self.decay_every == 0 || self.metrics_every == 0 {
            return Err(HazardError::InvalidParams("decay_every and metrics_every must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(HazardError::InvalidParams("dropout_rate must lie in [0,1)".into()));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(HazardError::InvalidParams("bn_momentum must lie in [0,1)".into()));
        }
        if self.width == 0 {
            return Err(HazardError::InvalidParams("width must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training-mode loss per record over the epoch's batches.
    pub train_loss: f64,
    /// Mean inference-mode loss per record on the epoch's validation subset.
    pub val_loss: f64,
    pub val_auc: Option<f64>,
    pub val_crps: Option<f64>,
}

pub fn write_trace_csv<W: Write>(w: W, trace: &[EpochStats]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "train_loss", "val_loss", "val_auc", "val_crps"])?;
    let opt = |v: Option<f64>| v.map(data::fmt_f64).unwrap_or_default();
    for s in trace {
        out.write_record([
            s.epoch.to_string(),
            data::fmt_f64(s.train_loss),
            data::fmt_f64(s.val_loss),
            opt(s.val_auc),
            opt(s.val_crps),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RegressionModel,
    pub trace: Vec<EpochStats>,
    pub split: Split,
    /// Epoch whose parameters were kept; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
}

/// Untrained model for `dataset` restricted to the `train` indices:
/// standardiser and response scale fitted there, seeded initialisation.
pub fn initial_model(dataset: &Dataset, train: &[usize], config: &TrainConfig) -> Result<RegressionModel> {
    let width = dataset.schema.len();
    let standardizer = if train.is_empty() {
        Standardizer::identity(width)
    } else {
        Standardizer::fit(train.iter().map(|&i| &dataset.records[i]), width)
    };
    let areas: Vec<f64> = train
        .iter()
        .map(|&i| &dataset.records[i])
        .filter(|r| r.landslide)
        .map(|r| r.area_density)
        .collect();
    let response_scale = if areas.is_empty() {
        1.0
    } else {
        areas.iter().sum::<f64>() / areas.len() as f64
    };
    let shape = NetworkShape {
        input_width: width,
        blocks: config.blocks,
        width: config.width,
    };
    let network = NetworkParameters::init(
        shape,
        config.dropout_rate,
        config.bn_momentum,
        seed::derive(config.seed, "init"),
    )?;
    Ok(RegressionModel {
        schema: dataset.schema.clone(),
        standardizer,
        response_scale,
        network,
    })
}

/// Inference-mode mean loss per record.
fn inference_loss(model: &RegressionModel, records: &[&SuYearRecord], loss: &LossConfig) -> Result<(f64, Vec<HeadOutputs>)> {
    let outs = model.predict(records.iter().map(|r| r.features.as_slice()))?;
    let owned: Vec<SuYearRecord> = records.iter().map(|r| (*r).clone()).collect();
    let l = joint_loss(&owned, &outs, model.kappa(), model.xi(), loss)?;
    Ok((l / records.len().max(1) as f64, outs))
}

fn validation_metrics(
    model: &RegressionModel,
    records: &[&SuYearRecord],
    outs: &[HeadOutputs],
) -> Result<(Option<f64>, Option<f64>)> {
    let scores: Vec<f64> = outs.iter().map(|o| o.p).collect();
    let labels: Vec<bool> = records.iter().map(|r| r.landslide).collect();
    let auc = match evaluation::auc(&scores, &labels) {
        Ok(r) => Some(r.auc),
        Err(HazardError::Degenerate(_)) => None,
        Err(e) => return Err(e),
    };
    let (sig, obs): (Vec<f64>, Vec<f64>) = records
        .iter()
        .zip(outs)
        .filter(|(r, _)| r.landslide)
        .map(|(r, o)| (o.sigma, r.area_density))
        .unzip();
    let crps = evaluation::crps_many(model.kappa(), model.xi(), &sig, &obs)
        .map_err(|(_, e)| e)?
        .mean;
    Ok((auc, crps))
}

fn diverged(e: HazardError, epoch: usize, trace: &[EpochStats]) -> HazardError {
    match e {
        HazardError::NonFiniteActivation { .. } | HazardError::NonFiniteGradient { .. } => HazardError::Divergence {
            epoch,
            trace: trace.to_vec(),
        },
        other => other,
    }
}

/// Seeded training run.
///
/// Splits records into train/test, then in each epoch holds out a freshly
/// drawn validation subset of the training portion, runs Adam over seeded
/// random batches of the rest, and keeps the parameters with the lowest
/// validation loss seen so far.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.records.is_empty() {
        return Err(HazardError::Degenerate("cannot train on an empty dataset".into()));
    }
    let split = data::split(dataset.records.len(), config.train_fraction, seed::derive(config.seed, "split"))?;
    let mut model = initial_model(dataset, &split.train, config)?;
    let loss_cfg = config.loss();
    let mut state = OptimizerState::new(&model.network, config.learning_rate, config.decay_factor, config.decay_every);
    let mut trace = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, NetworkParameters)> = None;

    let n_train = split.train.len();
    let n_val = ((n_train as f64) * config.validation_fraction).round() as usize;
    if config.epochs > 0 && (n_val == 0 || n_val >= n_train) {
        return Err(HazardError::Degenerate(format!(
            "training portion of {n_train} records is too small for a validation subset"
        )));
    }

    for epoch in 0..config.epochs {
        let mut idx = split.train.clone();
        idx.shuffle(&mut seed::rng(seed::derive_indexed(config.seed, "validation", epoch as u64)));
        let (val_idx, fit_idx) = idx.split_at(n_val);
        let mut order = fit_idx.to_vec();
        order.shuffle(&mut seed::rng(seed::derive_indexed(config.seed, "batches", epoch as u64)));
        let epoch_dropout = seed::derive_indexed(config.seed, "dropout", epoch as u64);

        let mut total = 0.0;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&SuYearRecord> = chunk.iter().map(|&i| &dataset.records[i]).collect();
            let dropout_seed = seed::derive_indexed(epoch_dropout, "batch", bi as u64);
            let (loss, grads) = gradient_refs(&batch, &mut model, &loss_cfg, dropout_seed)
                .map_err(|e| diverged(e, epoch, &trace))?;
            if !loss.is_finite() {
                return Err(HazardError::Divergence {
                    epoch,
                    trace: trace.clone(),
                });
            }
            total += loss;
            adam_step(&mut model.network, &grads, &mut state)?;
        }

        let val: Vec<&SuYearRecord> = val_idx.iter().map(|&i| &dataset.records[i]).collect();
        let (val_loss, outs) = inference_loss(&model, &val, &loss_cfg).map_err(|e| diverged(e, epoch, &trace))?;
        if !val_loss.is_finite() {
            return Err(HazardError::Divergence {
                epoch,
                trace: trace.clone(),
            });
        }
        let last = epoch + 1 == config.epochs;
        let (val_auc, val_crps) = if last || (epoch + 1) % config.metrics_every == 0 {
            validation_metrics(&model, &val, &outs)?
        } else {
            (None, None)
        };
        trace.push(EpochStats {
            epoch,
            train_loss: total / fit_idx.len() as f64,
            val_loss,
            val_auc,
            val_crps,
        });
        if best.as_ref().is_none_or(|(l, _, _)| val_loss < *l) {
            best = Some((val_loss, epoch, model.network.clone()));
        }
    }

    let best_epoch = best.map(|(_, e, params)| {
        model.network = params;
        e
    });
    Ok(TrainOutcome {
        model,
        trace,
        split,
        best_epoch,
    })
}

// ---------------------------------------------------------------------------
// Gamma sweep
// ---------------------------------------------------------------------------

/// `0.30, 0.35, ..., 0.70`.
pub fn default_gamma_grid() -> Vec<f64> {
    (0..9).map(|i| (30 + 5 * i) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaPoint {
    pub gamma: f64,
    /// Held-out AUC of the model trained with this gamma.
    pub auc: Option<f64>,
    /// Held-out mean CRPS over records with a landslide.
    pub crps: Option<f64>,
    pub best_epoch: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaReport {
    pub best_gamma: f64,
    pub points: Vec<GammaPoint>,
}

/// Lower CRPS wins; equal CRPS falls back to higher AUC.
fn better(a: &GammaPoint, b: &GammaPoint) -> bool {
    let (Some(ca), Some(cb)) = (a.crps, b.crps) else {
        return a.crps.is_some();
    };
    if ca != cb {
        return ca < cb;
    }
    a.auc.unwrap_or(f64::NEG_INFINITY) > b.auc.unwrap_or(f64::NEG_INFINITY)
}

/// Trains one model per grid value with otherwise identical settings and
/// scores each on its held-out split. A failing grid point is recorded and
/// the sweep continues.
pub fn tune_gamma(dataset: &Dataset, base: &TrainConfig, grid: &[f64]) -> Result<GammaReport> {
    if grid.is_empty() {
        return Err(HazardError::InvalidParams("gamma grid is empty".into()));
    }
    if let Some(g) = grid.iter().find(|g| !(**g > 0.0 && **g < 1.0)) {
        return Err(HazardError::InvalidParams(format!("gamma grid value {g} outside (0,1)")));
    }
    let mut points = Vec::with_capacity(grid.len());
    for &gamma in grid {
        let cfg = TrainConfig {
            gamma,
            ..base.clone()
        };
        let scored = train(dataset, &cfg).and_then(|out| {
            let test: Vec<SuYearRecord> = out.split.test.iter().map(|&i| dataset.records[i].clone()).collect();
            let rep = evaluation::evaluate(&out.model, &test, &[0.5])?;
            Ok((rep, out.best_epoch))
        });
        points.push(match scored {
            Ok((rep, best_epoch)) => GammaPoint {
                gamma,
                auc: rep.auc,
                crps: rep.crps_mean,
                best_epoch,
                error: None,
            },
            Err(e) => GammaPoint {
                gamma,
                auc: None,
                crps: None,
                best_epoch: None,
                error: Some(e.to_string()),
            },
        });
    }
    let scored: Vec<&GammaPoint> = points.iter().filter(|p| p.error.is_none()).collect();
    let Some(first) = scored.first() else {
        return Err(HazardError::Degenerate("every gamma grid point failed to train".into()));
    };
    let mut best = *first;
    for p in &scored[1..] {
        if better(p, best) {
            best = p;
        }
    }
    Ok(GammaReport {
        best_gamma: best.gamma,
        points,
    })
}
