//! Versioned JSON checkpoints.
//!
//! Every document carries `schema_version`; loading anything other than
//! [`SCHEMA_VERSION`] fails before the body is interpreted.

use std::path::Path;

use geowarp_core::diffnet::{Layer, MlpModel, Mode, Norm};
use geowarp_core::gae::{Decoder, Encoder, GaeModel, LossWeights, Standardizer};
use geowarp_core::offmanifold::{Discriminator, GpScorer, Scorer};
use geowarp_core::transport::FlowField;
use geowarp_core::Matrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{read_json, write_json};

pub const SCHEMA_VERSION: u64 = 1;

fn nested(m: &Matrix) -> Vec<Vec<f64>> {
    m.to_rows()
}

fn unnested(rows: &[Vec<f64>], what: &str) -> geowarp_core::Result<Matrix> {
    if rows.is_empty() {
        return Err(geowarp_core::Error::Shape(format!("{what} has no rows")));
    }
    Matrix::from_rows(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpFlags {
    pub dropout_rate: f64,
    pub spectral_norm: bool,
    pub spectral_norm_warm: bool,
    pub normalization: bool,
    pub mode: Mode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    /// out x in, row-major.
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub spectral_u: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub schema_version: u64,
    pub layer_dims: Vec<usize>,
    /// Hidden activation; the output layer is linear.
    pub activation: String,
    pub flags: MlpFlags,
    pub weights: Vec<LayerWeights>,
    /// Per layer; `null` where the layer has no normalization.
    pub normalization: Vec<Option<NormStats>>,
}

impl MlpCheckpoint {
    pub fn from_model(m: &MlpModel) -> Self {
        MlpCheckpoint {
            schema_version: SCHEMA_VERSION,
            layer_dims: m.layer_dims.clone(),
            activation: "relu".to_string(),
            flags: MlpFlags {
                dropout_rate: m.dropout_rate,
                spectral_norm: m.spectral_norm_enabled,
                spectral_norm_warm: m.sn_warm,
                normalization: m.layers.iter().any(|l| l.norm.is_some()),
                mode: m.mode,
            },
            weights: m
                .layers
                .iter()
                .map(|l| LayerWeights { weight: nested(&l.weight), bias: l.bias.data().to_vec(), spectral_u: l.sn_u.clone() })
                .collect(),
            normalization: m
                .layers
                .iter()
                .map(|l| {
                    l.norm.as_ref().map(|n| NormStats {
                        gamma: n.gamma.data().to_vec(),
                        beta: n.beta.data().to_vec(),
                        running_mean: n.running_mean.clone(),
                        running_var: n.running_var.clone(),
                    })
                })
                .collect(),
        }
    }

    pub fn to_model(&self) -> geowarp_core::Result<MlpModel> {
        if self.activation != "relu" {
            return Err(geowarp_core::Error::Contract(format!("unsupported activation {:?}", self.activation)));
        }
        if self.normalization.len() != self.weights.len() {
            return Err(geowarp_core::Error::Shape("one normalization entry per layer required".to_string()));
        }
        let layers = self
            .weights
            .iter()
            .zip(&self.normalization)
            .map(|(w, n)| {
                Ok(Layer {
                    weight: unnested(&w.weight, "layer weight")?,
                    bias: Matrix::row_vector(&w.bias),
                    norm: n.as_ref().map(|n| Norm {
                        gamma: Matrix::row_vector(&n.gamma),
                        beta: Matrix::row_vector(&n.beta),
                        running_mean: n.running_mean.clone(),
                        running_var: n.running_var.clone(),
                    }),
                    sn_u: w.spectral_u.clone(),
                })
            })
            .collect::<geowarp_core::Result<Vec<_>>>()?;
        let model = MlpModel {
            layer_dims: self.layer_dims.clone(),
            layers,
            dropout_rate: self.flags.dropout_rate,
            spectral_norm_enabled: self.flags.spectral_norm,
            sn_warm: self.flags.spectral_norm_warm,
            mode: self.flags.mode,
        };
        model.validate()?;
        Ok(model)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizedNet {
    pub standardizer: Standardizer,
    pub net: MlpCheckpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaeCheckpoint {
    pub schema_version: u64,
    pub d_latent: usize,
    pub loss_weights: LossWeights,
    pub encoder: StandardizedNet,
    pub decoder: StandardizedNet,
}

impl GaeCheckpoint {
    pub fn from_model(m: &GaeModel) -> Self {
        GaeCheckpoint {
            schema_version: SCHEMA_VERSION,
            d_latent: m.d_latent,
            loss_weights: m.weights,
            encoder: StandardizedNet {
                standardizer: m.encoder.standardizer.clone(),
                net: MlpCheckpoint::from_model(&m.encoder.net),
            },
            decoder: StandardizedNet {
                standardizer: m.decoder.standardizer.clone(),
                net: MlpCheckpoint::from_model(&m.decoder.net),
            },
        }
    }

    pub fn to_model(&self) -> geowarp_core::Result<GaeModel> {
        let m = GaeModel {
            encoder: Encoder { standardizer: self.encoder.standardizer.clone(), net: self.encoder.net.to_model()? },
            decoder: Decoder { standardizer: self.decoder.standardizer.clone(), net: self.decoder.net.to_model()? },
            d_latent: self.d_latent,
            weights: self.loss_weights,
        };
        m.validate()?;
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ScorerBody {
    Discriminator { net: MlpCheckpoint, mean_on_data: f64 },
    Gp { sigma: f64, sigma_n: f64, inducing: Vec<Vec<f64>>, solve: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorerCheckpoint {
    pub schema_version: u64,
    #[serde(flatten)]
    pub body: ScorerBody,
}

impl ScorerCheckpoint {
    pub fn from_scorer(s: &Scorer) -> Self {
        let body = match s {
            Scorer::Discriminator(d) => {
                ScorerBody::Discriminator { net: MlpCheckpoint::from_model(&d.net), mean_on_data: d.mean_on_data }
            }
            Scorer::Gp(g) => ScorerBody::Gp {
                sigma: g.sigma,
                sigma_n: g.sigma_n,
                inducing: nested(&g.inducing),
                solve: nested(&g.solve),
            },
        };
        ScorerCheckpoint { schema_version: SCHEMA_VERSION, body }
    }

    pub fn to_scorer(&self) -> geowarp_core::Result<Scorer> {
        Ok(match &self.body {
            ScorerBody::Discriminator { net, mean_on_data } => {
                Scorer::Discriminator(Discriminator { net: net.to_model()?, mean_on_data: *mean_on_data })
            }
            ScorerBody::Gp { sigma, sigma_n, inducing, solve } => {
                let g = GpScorer {
                    sigma: *sigma,
                    sigma_n: *sigma_n,
                    inducing: unnested(inducing, "inducing points")?,
                    solve: unnested(solve, "solve")?,
                };
                let m = g.inducing.rows();
                if g.solve.shape() != (m, m) || g.sigma.is_nan() || g.sigma <= 0.0 {
                    return Err(geowarp_core::Error::Shape("GP solve must be m x m with positive sigma".to_string()));
                }
                Scorer::Gp(g)
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportCheckpoint {
    pub schema_version: u64,
    pub field: MlpCheckpoint,
    pub bump: MlpCheckpoint,
    pub n_segments: usize,
}

impl TransportCheckpoint {
    pub fn new(field: &FlowField, bump: &MlpModel, n_segments: usize) -> Self {
        TransportCheckpoint {
            schema_version: SCHEMA_VERSION,
            field: MlpCheckpoint::from_model(&field.net),
            bump: MlpCheckpoint::from_model(bump),
            n_segments,
        }
    }

    pub fn field(&self) -> geowarp_core::Result<FlowField> {
        FlowField::from_net(self.field.to_model()?)
    }
}

/// Loads a checkpoint after checking its `schema_version`.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let value: serde_json::Value = read_json(path)?;
    let found = value.get("schema_version").and_then(|v| v.as_u64());
    match found {
        Some(SCHEMA_VERSION) => {}
        Some(found) => return Err(Error::SchemaVersion { path: path.to_path_buf(), found, expected: SCHEMA_VERSION }),
        None => {
            return Err(Error::Format { path: path.to_path_buf(), msg: "missing integer schema_version".to_string() })
        }
    }
    serde_json::from_value(value).map_err(|source| Error::Json { path: path.to_path_buf(), source })
}

pub fn save<T: Serialize>(path: &Path, checkpoint: &T) -> Result<()> {
    write_json(path, checkpoint)
}

pub fn load_gae(path: &Path) -> Result<GaeModel> {
    let ck: GaeCheckpoint = load(path)?;
    Ok(ck.to_model()?)
}

pub fn load_scorer(path: &Path) -> Result<Scorer> {
    let ck: ScorerCheckpoint = load(path)?;
    Ok(ck.to_scorer()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use geowarp_core::diffnet::MlpConfig;
    use geowarp_core::gae::GaeConfig;
    use geowarp_core::rng;

    #[test]
    fn gae_round_trip_is_exact() {
        let cfg = GaeConfig { hidden: vec![8, 4], ..GaeConfig::default() };
        let mut m = GaeModel::new(3, &cfg, Standardizer::identity(3)).unwrap();
        m.set_mode(Mode::Eval);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gae.json");
        save(&path, &GaeCheckpoint::from_model(&m)).unwrap();
        assert_eq!(load_gae(&path).unwrap(), m);
    }

    #[test]
    fn scorer_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let net = MlpModel::new(&MlpConfig::with_hidden(3, &[5], 1).spectral_norm(true), &mut rng::seeded(1))
            .unwrap()
            .eval_mode();
        let disc = Scorer::Discriminator(Discriminator { net, mean_on_data: 0.25 });
        save(&path, &ScorerCheckpoint::from_scorer(&disc)).unwrap();
        assert_eq!(load_scorer(&path).unwrap(), disc);

        let z = Matrix::from_rows(&[[0.0, 0.0, 1.0], [0.5, 0.1, 0.8], [1.0, 0.0, 0.0]]).unwrap();
        let gp = Scorer::Gp(GpScorer::new(z, 0.7, 1e-2).unwrap());
        save(&path, &ScorerCheckpoint::from_scorer(&gp)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"type\": \"gp\"") && text.contains("\"schema_version\": 1"));
        assert_eq!(load_scorer(&path).unwrap(), gp);
    }

    #[test]
    fn wrong_schema_version_is_explicit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("old.json");
        std::fs::write(&path, r#"{"schema_version": 2, "type": "gp"}"#).unwrap();
        assert!(matches!(load_scorer(&path), Err(Error::SchemaVersion { found: 2, expected: 1, .. })));
        std::fs::write(&path, r#"{"type": "gp"}"#).unwrap();
        assert!(matches!(load_scorer(&path), Err(Error::Format { .. })));
    }
}
