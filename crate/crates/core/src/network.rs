//! Shared feed-forward network with a susceptibility head and a scale head.
//!
//! Each block is, in order: dense -> dropout (training only) -> batch
//! normalisation -> ReLU. The susceptibility head is a dense unit followed by
//! a sigmoid; the scale head is a dense unit followed by a ReLU floored at
//! [`SIGMA_FLOOR`]. The eGPD shapes are two global scalars stored as logs.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{HazardError, Result};
use crate::linalg::{matmul, matmul_nt, matmul_tn, Matrix};
use crate::seed;

pub const DEFAULT_BLOCKS: usize = 16;
pub const DEFAULT_WIDTH: usize = 64;
pub const DEFAULT_DROPOUT: f64 = 0.2;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.99;
pub const BN_EPSILON: f64 = 1e-3;
/// Lower bound of the scale head, in standardised-response units.
pub const SIGMA_FLOOR: f64 = 1e-6;
/// Initial scale-head bias; keeps every record on the live side of the ReLU.
pub const SIGMA_BIAS_INIT: f64 = 1.0;
/// Scale-head weights start at this fraction of the He standard deviation.
pub const SIGMA_HEAD_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub input_width: usize,
    pub blocks: usize,
    pub width: usize,
}

impl NetworkShape {
    pub fn standard(input_width: usize) -> Self {
        Self {
            input_width,
            blocks: DEFAULT_BLOCKS,
            width: DEFAULT_WIDTH,
        }
    }

    /// Trainable scalar count: dense weights and biases, batch-norm scale and
    /// shift, both heads, and the two global shapes.
    pub fn parameter_count(&self) -> usize {
        let (d, w, b) = (self.input_width, self.width, self.blocks);
        if b == 0 {
            return 2 * (d + 1) + 2;
        }
        (d * w + 3 * w) + (b - 1) * (w * w + 3 * w) + 2 * (w + 1) + 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `inputs x outputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn he<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (2.0 / inputs as f64).sqrt()).expect("valid sd");
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| normal.sample(rng)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], rows: usize, out: &mut [f64]) {
        matmul(x, &self.weights, rows, self.inputs, self.outputs, out);
        for r in 0..rows {
            for (o, b) in out[r * self.outputs..(r + 1) * self.outputs].iter_mut().zip(&self.bias) {
                *o += b;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn identity(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub dense: Dense,
    pub dropout_rate: f64,
    pub bn: BatchNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParameters {
    pub shape: NetworkShape,
    pub blocks: Vec<Block>,
    pub head_p: Dense,
    pub head_sigma: Dense,
    pub log_kappa: f64,
    pub log_xi: f64,
    pub bn_momentum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadOutputs {
    pub logit: f64,
    pub p: f64,
    pub sigma: f64,
}

impl HeadOutputs {
    pub fn from_logit(logit: f64, sigma: f64) -> Self {
        Self {
            logit,
            // open interval even where the logistic rounds to 0 or 1
            p: sigmoid(logit).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0),
            sigma,
        }
    }

    pub fn from_probability(p: f64, sigma: f64) -> Self {
        Self {
            logit: p.ln() - (-p).ln_1p(),
            p,
            sigma,
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

/// Cached intermediates of one training-mode forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    rows: usize,
    /// Input to each block (block 0 gets the standardised features).
    inputs: Vec<Vec<f64>>,
    masks: Vec<Vec<f64>>,
    xhat: Vec<Vec<f64>>,
    inv_std: Vec<Vec<f64>>,
    /// Pre-ReLU batch-norm output.
    normed: Vec<Vec<f64>>,
    last: Vec<f64>,
    sigma_raw: Vec<f64>,
}

/// Gradient with the same layout as [`NetworkParameters::trainable`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParameters) -> Self {
        Self {
            tensors: params.trainable().iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn inf_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .fold(0.0_f64, |m, g| m.max(g.abs()))
    }
}

impl NetworkParameters {
    /// He-normal dense weights, zero biases, identity batch norm,
    /// `kappa = xi = 0.5`. The scale-head bias starts at
    /// [`SIGMA_BIAS_INIT`].
    pub fn init(shape: NetworkShape, dropout_rate: f64, bn_momentum: f64, seed: u64) -> Result<Self> {
        if shape.input_width == 0 || shape.width == 0 {
            return Err(HazardError::Shape("input width and block width must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(HazardError::InvalidParams(format!(
                "dropout rate must lie in [0,1), got {dropout_rate}"
            )));
        }
        let mut rng = seed::rng(seed);
        let mut blocks = Vec::with_capacity(shape.blocks);
        let mut fan_in = shape.input_width;
        for _ in 0..shape.blocks {
            blocks.push(Block {
                dense: Dense::he(fan_in, shape.width, &mut rng),
                dropout_rate,
                bn: BatchNorm::identity(shape.width),
            });
            fan_in = shape.width;
        }
        let head_p = Dense::he(fan_in, 1, &mut rng);
        let mut head_sigma = Dense::he(fan_in, 1, &mut rng);
        head_sigma.weights.iter_mut().for_each(|w| *w *= SIGMA_HEAD_INIT_SCALE);
        head_sigma.bias[0] = SIGMA_BIAS_INIT;
        Ok(Self {
            shape,
            blocks,
            head_p,
            head_sigma,
            log_kappa: 0.5_f64.ln(),
            log_xi: 0.5_f64.ln(),
            bn_momentum,
        })
    }

    /// All-zero dense layers and identity batch norm.
    pub fn zeroed(shape: NetworkShape) -> Self {
        let mut fan_in = shape.input_width;
        let blocks = (0..shape.blocks)
            .map(|_| {
                let b = Block {
                    dense: Dense::zeros(fan_in, shape.width),
                    dropout_rate: 0.0,
                    bn: BatchNorm::identity(shape.width),
                };
                fan_in = shape.width;
                b
            })
            .collect();
        Self {
            shape,
            blocks,
            head_p: Dense::zeros(fan_in, 1),
            head_sigma: Dense::zeros(fan_in, 1),
            log_kappa: 0.5_f64.ln(),
            log_xi: 0.5_f64.ln(),
            bn_momentum: DEFAULT_BN_MOMENTUM,
        }
    }

    pub fn kappa(&self) -> f64 {
        self.log_kappa.exp()
    }

    pub fn xi(&self) -> f64 {
        self.log_xi.exp()
    }

    pub fn dropout_rate(&self) -> f64 {
        self.blocks.first().map_or(0.0, |b| b.dropout_rate)
    }

    /// Named trainable tensors in a fixed order.
    pub fn trainable(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("blocks[{i}].dense.weights"), &b.dense.weights));
            out.push((format!("blocks[{i}].dense.bias"), &b.dense.bias));
            out.push((format!("blocks[{i}].bn.gamma"), &b.bn.gamma));
            out.push((format!("blocks[{i}].bn.beta"), &b.bn.beta));
        }
        out.push(("head_p.weights".into(), &self.head_p.weights));
        out.push(("head_p.bias".into(), &self.head_p.bias));
        out.push(("head_sigma.weights".into(), &self.head_sigma.weights));
        out.push(("head_sigma.bias".into(), &self.head_sigma.bias));
        out.push(("log_kappa".into(), std::slice::from_ref(&self.log_kappa)));
        out.push(("log_xi".into(), std::slice::from_ref(&self.log_xi)));
        out
    }

    /// Mutable view in the order of [`Self::trainable`].
    pub fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for b in self.blocks.iter_mut() {
            out.push(&mut b.dense.weights);
            out.push(&mut b.dense.bias);
            out.push(&mut b.bn.gamma);
            out.push(&mut b.bn.beta);
        }
        out.push(&mut self.head_p.weights);
        out.push(&mut self.head_p.bias);
        out.push(&mut self.head_sigma.weights);
        out.push(&mut self.head_sigma.bias);
        out.push(std::slice::from_mut(&mut self.log_kappa));
        out.push(std::slice::from_mut(&mut self.log_xi));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable().iter().map(|(_, t)| t.len()).sum()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols != self.shape.input_width {
            return Err(HazardError::Shape(format!(
                "expected {} features, got {}",
                self.shape.input_width, x.cols
            )));
        }
        if x.rows == 0 {
            return Err(HazardError::Shape("empty batch".into()));
        }
        Ok(())
    }

    /// Raw head values `(logit, unfloored sigma)` from the last hidden layer.
    fn heads(&self, h: &[f64], rows: usize) -> (Vec<f64>, Vec<f64>) {
        let mut logit = vec![0.0; rows];
        let mut sraw = vec![0.0; rows];
        self.head_p.apply(h, rows, &mut logit);
        self.head_sigma.apply(h, rows, &mut sraw);
        (logit, sraw)
    }

    /// Inference-mode forward pass with running batch-norm statistics.
    /// Returned sigmas are in standardised-response units.
    pub fn forward_inference(&self, x: &Matrix) -> Result<Vec<HeadOutputs>> {
        self.check_input(x)?;
        let rows = x.rows;
        let w = self.shape.width;
        let mut h = x.data.clone();
        let mut z = vec![0.0; rows * w];
        for (bi, block) in self.blocks.iter().enumerate() {
            block.dense.apply(&h, rows, &mut z);
            let bn = &block.bn;
            let scale: Vec<f64> = (0..w)
                .map(|j| bn.gamma[j] / (bn.running_var[j] + BN_EPSILON).sqrt())
                .collect();
            for r in 0..rows {
                for j in 0..w {
                    let v = (z[r * w + j] - bn.running_mean[j]) * scale[j] + bn.beta[j];
                    z[r * w + j] = v.max(0.0);
                }
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(HazardError::NonFiniteActivation { block: bi });
            }
            std::mem::swap(&mut h, &mut z);
            z.resize(rows * w, 0.0);
        }
        let (logit, sraw) = self.heads(&h, rows);
        let out: Vec<HeadOutputs> = logit
            .iter()
            .zip(&sraw)
            .map(|(&l, &s)| HeadOutputs::from_logit(l, s.max(SIGMA_FLOOR)))
            .collect();
        if out.iter().any(|o| !o.logit.is_finite() || !o.sigma.is_finite()) {
            return Err(HazardError::NonFiniteActivation { block: self.blocks.len() });
        }
        Ok(out)
    }

    /// Training-mode forward pass: dropout drawn from `dropout_seed`, batch
    /// statistics for normalisation, running statistics updated in place.
    pub fn forward_train(&mut self, x: &Matrix, dropout_seed: u64) -> Result<(Vec<HeadOutputs>, Tape)> {
        self.check_input(x)?;
        let rows = x.rows;
        let w = self.shape.width;
        let n = rows as f64;
        let momentum = self.bn_momentum;
        let mut tape = Tape {
            rows,
            inputs: Vec::with_capacity(self.blocks.len()),
            masks: Vec::with_capacity(self.blocks.len()),
            xhat: Vec::with_capacity(self.blocks.len()),
            inv_std: Vec::with_capacity(self.blocks.len()),
            normed: Vec::with_capacity(self.blocks.len()),
            last: Vec::new(),
            sigma_raw: Vec::new(),
        };
        let mut h = x.data.clone();
        for (bi, block) in self.blocks.iter_mut().enumerate() {
            let mut z = vec![0.0; rows * w];
            block.dense.apply(&h, rows, &mut z);

            let rate = block.dropout_rate;
            let mut mask = vec![1.0; rows * w];
            if rate > 0.0 {
                let mut rng = seed::rng(seed::derive_indexed(dropout_seed, "dropout", bi as u64));
                let keep = 1.0 / (1.0 - rate);
                for m in mask.iter_mut() {
                    let u: f64 = rng.random();
                    *m = if u < rate { 0.0 } else { keep };
                }
                for (v, m) in z.iter_mut().zip(&mask) {
                    *v *= m;
                }
            }

            let mut mean = vec![0.0; w];
            for r in 0..rows {
                for j in 0..w {
                    mean[j] += z[r * w + j];
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut var = vec![0.0; w];
            for r in 0..rows {
                for j in 0..w {
                    let d = z[r * w + j] - mean[j];
                    var[j] += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= n);
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();

            let bn = &mut block.bn;
            let mut xhat = vec![0.0; rows * w];
            let mut normed = vec![0.0; rows * w];
            let mut out = vec![0.0; rows * w];
            for r in 0..rows {
                for j in 0..w {
                    let k = r * w + j;
                    let xh = (z[k] - mean[j]) * inv_std[j];
                    xhat[k] = xh;
                    let y = bn.gamma[j] * xh + bn.beta[j];
                    normed[k] = y;
                    out[k] = y.max(0.0);
                }
            }
            let unbias = if rows > 1 { n / (n - 1.0) } else { 1.0 };
            for j in 0..w {
                bn.running_mean[j] = momentum * bn.running_mean[j] + (1.0 - momentum) * mean[j];
                bn.running_var[j] = momentum * bn.running_var[j] + (1.0 - momentum) * var[j] * unbias;
            }
            if out.iter().any(|v| !v.is_finite()) {
                return Err(HazardError::NonFiniteActivation { block: bi });
            }
            tape.inputs.push(std::mem::replace(&mut h, out));
            tape.masks.push(mask);
            tape.xhat.push(xhat);
            tape.inv_std.push(inv_std);
            tape.normed.push(normed);
        }
        let (logit, sraw) = self.heads(&h, rows);
        let outputs: Vec<HeadOutputs> = logit
            .iter()
            .zip(&sraw)
            .map(|(&l, &s)| HeadOutputs::from_logit(l, s.max(SIGMA_FLOOR)))
            .collect();
        if outputs.iter().any(|o| !o.logit.is_finite() || !o.sigma.is_finite()) {
            return Err(HazardError::NonFiniteActivation { block: self.blocks.len() });
        }
        tape.last = h;
        tape.sigma_raw = sraw;
        Ok((outputs, tape))
    }

    /// Forward pass in either mode.
    pub fn forward(&mut self, x: &Matrix, mode: Mode, dropout_seed: u64) -> Result<Vec<HeadOutputs>> {
        match mode {
            Mode::Inference => self.forward_inference(x),
            Mode::Train => Ok(self.forward_train(x, dropout_seed)?.0),
        }
    }

    /// Reverse pass through a training-mode tape.
    ///
    /// `d_logit[r]` and `d_sigma[r]` are loss derivatives with respect to the
    /// susceptibility logit and the floored scale of row `r`; `d_log_kappa`
    /// and `d_log_xi` are passed through to the global shapes.
    pub fn backward(
        &self,
        tape: &Tape,
        d_logit: &[f64],
        d_sigma: &[f64],
        d_log_kappa: f64,
        d_log_xi: f64,
    ) -> Gradients {
        let rows = tape.rows;
        let w = self.shape.width;
        let n = rows as f64;
        let last_width = self.head_p.inputs;
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(4 * self.blocks.len() + 6);

        // floored ReLU on the scale head passes gradient only above the floor
        let d_sraw: Vec<f64> = d_sigma
            .iter()
            .zip(&tape.sigma_raw)
            .map(|(d, s)| if *s > SIGMA_FLOOR { *d } else { 0.0 })
            .collect();

        let mut head_grads = Vec::with_capacity(4);
        let mut dh = vec![0.0; rows * last_width];
        for (head, d) in [(&self.head_p, d_logit), (&self.head_sigma, d_sraw.as_slice())] {
            let mut dw = vec![0.0; last_width];
            matmul_tn(&tape.last, d, rows, last_width, 1, &mut dw);
            let db = vec![d.iter().sum::<f64>()];
            for r in 0..rows {
                for j in 0..last_width {
                    dh[r * last_width + j] += d[r] * head.weights[j];
                }
            }
            head_grads.push(dw);
            head_grads.push(db);
        }

        let mut block_grads: Vec<[Vec<f64>; 4]> = Vec::with_capacity(self.blocks.len());
        for bi in (0..self.blocks.len()).rev() {
            let block = &self.blocks[bi];
            let normed = &tape.normed[bi];
            let xhat = &tape.xhat[bi];
            let inv_std = &tape.inv_std[bi];
            let mask = &tape.masks[bi];

            let mut dy = dh;
            for (d, y) in dy.iter_mut().zip(normed) {
                if *y <= 0.0 {
                    *d = 0.0;
                }
            }
            let mut dgamma = vec![0.0; w];
            let mut dbeta = vec![0.0; w];
            for r in 0..rows {
                for j in 0..w {
                    let k = r * w + j;
                    dgamma[j] += dy[k] * xhat[k];
                    dbeta[j] += dy[k];
                }
            }
            // batch-norm backward with biased batch variance
            let mut sum_dx = vec![0.0; w];
            let mut sum_dx_x = vec![0.0; w];
            for r in 0..rows {
                for j in 0..w {
                    let k = r * w + j;
                    let dxh = dy[k] * block.bn.gamma[j];
                    sum_dx[j] += dxh;
                    sum_dx_x[j] += dxh * xhat[k];
                }
            }
            let mut dz = vec![0.0; rows * w];
            for r in 0..rows {
                for j in 0..w {
                    let k = r * w + j;
                    let dxh = dy[k] * block.bn.gamma[j];
                    let dd = inv_std[j] / n * (n * dxh - sum_dx[j] - xhat[k] * sum_dx_x[j]);
                    dz[k] = dd * mask[k];
                }
            }
            let fan_in = block.dense.inputs;
            let mut dw = vec![0.0; fan_in * w];
            matmul_tn(&tape.inputs[bi], &dz, rows, fan_in, w, &mut dw);
            let mut db = vec![0.0; w];
            for r in 0..rows {
                for j in 0..w {
                    db[j] += dz[r * w + j];
                }
            }
            let mut dx = vec![0.0; rows * fan_in];
            if bi > 0 {
                matmul_nt(&dz, &block.dense.weights, rows, w, fan_in, &mut dx);
            }
            dh = dx;
            block_grads.push([dw, db, dgamma, dbeta]);
        }
        block_grads.reverse();
        for [dw, db, dg, dbt] in block_grads {
            grads.push(dw);
            grads.push(db);
            grads.push(dg);
            grads.push(dbt);
        }
        grads.extend(head_grads);
        grads.push(vec![d_log_kappa]);
        grads.push(vec![d_log_xi]);
        Gradients { tensors: grads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_input(rows: usize, cols: usize, seed_: u64) -> Matrix {
        let mut rng = seed::rng(seed_);
        let normal = Normal::new(0.0, 1.0).unwrap();
        Matrix {
            rows,
            cols,
            data: (0..rows * cols).map(|_| normal.sample(&mut rng)).collect(),
        }
    }

    #[test]
    fn zero_network_gives_half() {
        let params = NetworkParameters::zeroed(NetworkShape::standard(7));
        let out = params.forward_inference(&toy_input(10, 7, 1)).unwrap();
        assert!(out.iter().all(|o| o.p == 0.5));
        assert!(out.iter().all(|o| o.sigma == SIGMA_FLOOR));
    }

    #[test]
    fn init_is_seeded_and_has_expected_defaults() {
        let shape = NetworkShape::standard(5);
        let a = NetworkParameters::init(shape, 0.2, 0.99, 9).unwrap();
        let b = NetworkParameters::init(shape, 0.2, 0.99, 9).unwrap();
        assert_eq!(a, b);
        assert!((a.kappa() - 0.5).abs() < 1e-15);
        assert!((a.xi() - 0.5).abs() < 1e-15);
        assert_eq!(a.blocks.len(), 16);
        assert!(a.blocks.iter().all(|b| b.dense.outputs == 64));
        for block in &a.blocks[1..] {
            let ws = &block.dense.weights;
            let m = ws.iter().sum::<f64>() / ws.len() as f64;
            let v = ws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / ws.len() as f64;
            assert!((v / (2.0 / 64.0) - 1.0).abs() < 0.2, "variance {v}");
        }
    }

    #[test]
    fn parameter_count_matches_formula() {
        for (d, b, w) in [(11, 16, 64), (3, 2, 4), (1, 1, 1)] {
            let shape = NetworkShape {
                input_width: d,
                blocks: b,
                width: w,
            };
            let p = NetworkParameters::init(shape, 0.2, 0.99, 0).unwrap();
            let expected = d * w + w + 2 * w + (b - 1) * (w * w + w + 2 * w) + 2 * (w + 1) + 2;
            assert_eq!(p.parameter_count(), expected);
            assert_eq!(shape.parameter_count(), expected);
        }
    }

    #[test]
    fn inference_is_pure_and_batch_invariant() {
        let mut params = NetworkParameters::init(NetworkShape::standard(6), 0.2, 0.99, 3).unwrap();
        // move running statistics away from identity
        let x = toy_input(100, 6, 4);
        params.forward_train(&x, 11).unwrap();
        let before = params.clone();
        let batch = params.forward_inference(&x).unwrap();
        let again = params.forward_inference(&x).unwrap();
        assert_eq!(batch, again);
        assert_eq!(params, before);
        for r in [0, 37, 99] {
            let single = params.forward_inference(&x.select_rows(&[r])).unwrap();
            assert!((single[0].p - batch[r].p).abs() < 1e-12);
            assert!((single[0].sigma - batch[r].sigma).abs() < 1e-12);
        }
    }

    #[test]
    fn train_mode_is_seeded() {
        let params = NetworkParameters::init(NetworkShape::standard(4), 0.2, 0.99, 3).unwrap();
        let x = toy_input(32, 4, 5);
        let (mut a, mut b) = (params.clone(), params.clone());
        let oa = a.forward_train(&x, 77).unwrap().0;
        let ob = b.forward_train(&x, 77).unwrap().0;
        assert_eq!(oa, ob);
        assert_eq!(a, b);
        let mut c = params.clone();
        assert_ne!(c.forward_train(&x, 78).unwrap().0, oa);
    }

    #[test]
    fn dropout_zero_fraction_matches_rate() {
        let shape = NetworkShape {
            input_width: 3,
            blocks: 1,
            width: 1000,
        };
        let mut params = NetworkParameters::init(shape, 0.2, 0.99, 1).unwrap();
        let x = toy_input(100, 3, 2);
        let (_, tape) = params.forward_train(&x, 5).unwrap();
        let mask = &tape.masks[0];
        assert_eq!(mask.len(), 100_000);
        let zeros = mask.iter().filter(|m| **m == 0.0).count() as f64 / mask.len() as f64;
        assert!((zeros - 0.2).abs() < 0.01, "{zeros}");
        assert!(mask.iter().all(|m| *m == 0.0 || (*m - 1.25).abs() < 1e-15));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let params = NetworkParameters::init(NetworkShape::standard(4), 0.2, 0.99, 3).unwrap();
        assert!(matches!(
            params.forward_inference(&toy_input(2, 5, 0)),
            Err(HazardError::Shape(_))
        ));
        assert!(matches!(
            params.forward_inference(&Matrix::zeros(0, 4)),
            Err(HazardError::Shape(_))
        ));
    }

    #[test]
    fn head_outputs_are_in_range() {
        let params = NetworkParameters::init(NetworkShape::standard(4), 0.2, 0.99, 3).unwrap();
        let mut x = toy_input(50, 4, 8);
        x.data.iter_mut().for_each(|v| *v *= 100.0);
        for o in params.forward_inference(&x).unwrap() {
            assert!(o.p > 0.0 && o.p < 1.0);
            assert!(o.sigma >= SIGMA_FLOOR);
        }
    }
}
