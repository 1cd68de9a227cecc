//! Trained regression model and its JSON artifact.
//!
//! The network sees standardised covariates and emits its scale in
//! standardised-response units; `response_scale` (the mean positive area
//! density of the training split) converts it back to area-density units.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{FeatureKind, FeatureRole, FeatureSchema, FeatureSpec, Standardizer};
use crate::egpd::EgpdParams;
use crate::error::{HazardError, Result};
use crate::linalg::Matrix;
use crate::network::{
    BatchNorm, Block, Dense, HeadOutputs, NetworkParameters, NetworkShape, BN_EPSILON, SIGMA_FLOOR,
};

pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionModel {
    pub schema: FeatureSchema,
    pub standardizer: Standardizer,
    pub response_scale: f64,
    pub network: NetworkParameters,
}

impl RegressionModel {
    pub fn kappa(&self) -> f64 {
        self.network.kappa()
    }

    pub fn xi(&self) -> f64 {
        self.network.xi()
    }

    /// Smallest scale the model can emit, in area-density units.
    pub fn sigma_floor(&self) -> f64 {
        SIGMA_FLOOR * self.response_scale
    }

    pub fn egpd(&self, sigma: f64) -> EgpdParams {
        EgpdParams {
            kappa: self.kappa(),
            sigma,
            xi: self.xi(),
        }
    }

    /// Standardised design matrix for raw feature rows.
    pub fn design<'a, I>(&self, rows: I) -> Result<Matrix>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let width = self.schema.len();
        let mut data = Vec::new();
        let mut n = 0;
        for r in rows {
            if r.len() != width {
                return Err(HazardError::Shape(format!(
                    "record has {} covariates, model schema has {width}",
                    r.len()
                )));
            }
            let start = data.len();
            data.resize(start + width, 0.0);
            self.standardizer.apply_into(r, &mut data[start..]);
            n += 1;
        }
        Ok(Matrix {
            rows: n,
            cols: width,
            data,
        })
    }

    pub fn to_data_units(&self, o: HeadOutputs) -> HeadOutputs {
        HeadOutputs {
            sigma: o.sigma * self.response_scale,
            ..o
        }
    }

    /// Inference-mode predictions with sigma in area-density units.
    pub fn predict<'a, I>(&self, rows: I) -> Result<Vec<HeadOutputs>>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let x = self.design(rows)?;
        if x.rows == 0 {
            return Ok(Vec::new());
        }
        Ok(self
            .network
            .forward_inference(&x)?
            .into_iter()
            .map(|o| self.to_data_units(o))
            .collect())
    }

    pub fn predict_record(&self, features: &[f64]) -> Result<HeadOutputs> {
        Ok(self.predict(std::iter::once(features))?[0])
    }

    pub fn to_artifact(&self) -> ModelArtifact {
        let n = &self.network;
        ModelArtifact {
            schema_version: ARTIFACT_SCHEMA_VERSION,
            features: self
                .schema
                .features
                .iter()
                .enumerate()
                .map(|(j, f)| ArtifactFeature {
                    name: f.name.clone(),
                    kind: f.kind,
                    encoding: f.encoding.clone(),
                    role: f.role,
                    mean: self.standardizer.means[j],
                    sd: self.standardizer.sds[j],
                })
                .collect(),
            response_scale: self.response_scale,
            blocks: n.blocks.len(),
            width: n.shape.width,
            dropout_rate: n.dropout_rate(),
            bn_momentum: n.bn_momentum,
            bn_epsilon: BN_EPSILON,
            sigma_floor: SIGMA_FLOOR,
            layers: n
                .blocks
                .iter()
                .map(|b| ArtifactBlock {
                    weights: rows_of(&b.dense),
                    bias: b.dense.bias.clone(),
                    bn_gamma: b.bn.gamma.clone(),
                    bn_beta: b.bn.beta.clone(),
                    bn_running_mean: b.bn.running_mean.clone(),
                    bn_running_var: b.bn.running_var.clone(),
                })
                .collect(),
            head_p: ArtifactDense {
                weights: rows_of(&n.head_p),
                bias: n.head_p.bias.clone(),
            },
            head_sigma: ArtifactDense {
                weights: rows_of(&n.head_sigma),
                bias: n.head_sigma.bias.clone(),
            },
            log_kappa: n.log_kappa,
            log_xi: n.log_xi,
        }
    }

    pub fn from_artifact(a: &ModelArtifact) -> Result<Self> {
        if a.schema_version != ARTIFACT_SCHEMA_VERSION {
            return Err(HazardError::Schema(format!(
                "unsupported artifact schema version {}",
                a.schema_version
            )));
        }
        let schema = FeatureSchema {
            features: a
                .features
                .iter()
                .map(|f| FeatureSpec {
                    name: f.name.clone(),
                    kind: f.kind,
                    encoding: f.encoding.clone(),
                    role: f.role,
                })
                .collect(),
        };
        schema.validate()?;
        let shape = NetworkShape {
            input_width: schema.len(),
            blocks: a.blocks,
            width: a.width,
        };
        if a.layers.len() != a.blocks {
            return Err(HazardError::Shape(format!(
                "artifact declares {} blocks but stores {}",
                a.blocks,
                a.layers.len()
            )));
        }
        let mut fan_in = shape.input_width;
        let mut blocks = Vec::with_capacity(a.blocks);
        for (i, l) in a.layers.iter().enumerate() {
            let dense = dense_from(&l.weights, &l.bias, fan_in, a.width, &format!("block {i}"))?;
            for (name, v) in [
                ("bn_gamma", &l.bn_gamma),
                ("bn_beta", &l.bn_beta),
                ("bn_running_mean", &l.bn_running_mean),
                ("bn_running_var", &l.bn_running_var),
            ] {
                if v.len() != a.width {
                    return Err(HazardError::Shape(format!("block {i}: {name} has length {}", v.len())));
                }
            }
            if l.bn_running_var.iter().any(|v| *v < 0.0) {
                return Err(HazardError::InvalidParams(format!("block {i}: negative running variance")));
            }
            blocks.push(Block {
                dense,
                dropout_rate: a.dropout_rate,
                bn: BatchNorm {
                    gamma: l.bn_gamma.clone(),
                    beta: l.bn_beta.clone(),
                    running_mean: l.bn_running_mean.clone(),
                    running_var: l.bn_running_var.clone(),
                },
            });
            fan_in = a.width;
        }
        let network = NetworkParameters {
            shape,
            blocks,
            head_p: dense_from(&a.head_p.weights, &a.head_p.bias, fan_in, 1, "head_p")?,
            head_sigma: dense_from(&a.head_sigma.weights, &a.head_sigma.bias, fan_in, 1, "head_sigma")?,
            log_kappa: a.log_kappa,
            log_xi: a.log_xi,
            bn_momentum: a.bn_momentum,
        };
        Ok(Self {
            schema,
            standardizer: Standardizer {
                means: a.features.iter().map(|f| f.mean).collect(),
                sds: a.features.iter().map(|f| f.sd).collect(),
            },
            response_scale: a.response_scale,
            network,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_artifact())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let a: ModelArtifact = serde_json::from_str(text)?;
        Self::from_artifact(&a)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Positions of the three precipitation drivers in the schema.
    pub fn driver_positions(&self) -> Result<[usize; 3]> {
        let pos = |r| {
            self.schema
                .position(r)
                .ok_or_else(|| HazardError::Schema(format!("model schema has no {r:?} feature")))
        };
        Ok([
            pos(FeatureRole::PrecipMax)?,
            pos(FeatureRole::PrecipMean)?,
            pos(FeatureRole::PrecipSd)?,
        ])
    }
}

fn rows_of(d: &Dense) -> Vec<Vec<f64>> {
    d.weights.chunks(d.outputs).map(|c| c.to_vec()).collect()
}

fn dense_from(rows: &[Vec<f64>], bias: &[f64], inputs: usize, outputs: usize, what: &str) -> Result<Dense> {
    if rows.len() != inputs || rows.iter().any(|r| r.len() != outputs) || bias.len() != outputs {
        return Err(HazardError::Shape(format!(
            "{what}: expected {inputs}x{outputs} weights and {outputs} biases"
        )));
    }
    Ok(Dense {
        inputs,
        outputs,
        weights: rows.iter().flatten().copied().collect(),
        bias: bias.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactFeature {
    pub name: String,
    pub kind: FeatureKind,
    pub encoding: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<FeatureRole>,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactBlock {
    /// Row-major, one row per input unit.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub bn_gamma: Vec<f64>,
    pub bn_beta: Vec<f64>,
    pub bn_running_mean: Vec<f64>,
    pub bn_running_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactDense {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

/// On-disk model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub schema_version: u32,
    pub features: Vec<ArtifactFeature>,
    pub response_scale: f64,
    pub blocks: usize,
    pub width: usize,
    pub dropout_rate: f64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub sigma_floor: f64,
    pub layers: Vec<ArtifactBlock>,
    pub head_p: ArtifactDense,
    pub head_sigma: ArtifactDense,
    pub log_kappa: f64,
    pub log_xi: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{simulate, GeneratorSpec};

    fn model() -> RegressionModel {
        let (ds, _) = simulate(30, 3, &GeneratorSpec::quick_start(), 4).unwrap();
        let mut net = NetworkParameters::init(NetworkShape::standard(ds.schema.len()), 0.2, 0.99, 8).unwrap();
        let st = Standardizer::fit(&ds.records, ds.schema.len());
        let m = RegressionModel {
            schema: ds.schema.clone(),
            standardizer: st,
            response_scale: 0.0123,
            network: net.clone(),
        };
        let x = m.design(ds.records.iter().map(|r| r.features.as_slice())).unwrap();
        net.forward_train(&x, 3).unwrap();
        RegressionModel { network: net, ..m }
    }

    #[test]
    fn artifact_round_trip_is_bit_exact() {
        let m = model();
        let text = m.to_json().unwrap();
        let back = RegressionModel::from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn predict_record_agrees_with_batch() {
        let m = model();
        let (ds, _) = simulate(10, 2, &GeneratorSpec::quick_start(), 6).unwrap();
        let batch = m.predict(ds.records.iter().map(|r| r.features.as_slice())).unwrap();
        for (r, b) in ds.records.iter().zip(&batch) {
            let single = m.predict_record(&r.features).unwrap();
            assert!((single.p - b.p).abs() < 1e-12);
            assert!((single.sigma - b.sigma).abs() < 1e-12);
            assert!(single.sigma >= m.sigma_floor());
        }
    }

    #[test]
    fn rejects_wrong_width() {
        let m = model();
        assert!(matches!(m.predict_record(&[1.0, 2.0]), Err(HazardError::Shape(_))));
    }
}
