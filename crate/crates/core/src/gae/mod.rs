//! Distance-matching autoencoder.
//!
//! The encoder is trained so that latent Euclidean distances reproduce
//! supplied manifold distances, locally weighted by `exp(-zeta * d)`, with a
//! reconstruction term keeping the decoder usable.

use serde::{Deserialize, Serialize};

use crate::diffnet::{AdamW, DiffMap, MlpConfig, MlpModel, Mode, OptimizerState, Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::manifolds::{DistanceMatrix, PointCloud};
use crate::prelude::*;
use crate::rng;

/// Per-coordinate affine standardization of network inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer { mean: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    /// Zero mean, unit variance per coordinate; constant coordinates keep
    /// unit scale.
    pub fn fit(points: &Matrix) -> Self {
        let mean = points.column_means();
        let n = points.rows().max(1) as f64;
        let mut var = vec![0.0; points.cols()];
        for r in points.row_iter() {
            for ((s, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (x - m) * (x - m);
            }
        }
        let scale = var.iter().map(|v| if *v / n > 1e-24 { (v / n).sqrt() } else { 1.0 }).collect();
        Standardizer { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for i in 0..out.rows() {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    fn record(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let neg = tape.constant(Matrix::row_vector(&self.mean.iter().map(|m| -m).collect::<Vec<_>>()));
        let inv = tape.constant(Matrix::row_vector(&self.scale.iter().map(|s| 1.0 / s).collect::<Vec<_>>()));
        let c = tape.add_row(x, neg)?;
        tape.mul_row(c, inv)
    }

    fn record_inverse(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let scale = tape.constant(Matrix::row_vector(&self.scale));
        let mean = tape.constant(Matrix::row_vector(&self.mean));
        let s = tape.mul_row(z, scale)?;
        tape.add_row(s, mean)
    }
}

/// Standardization followed by the encoder network: the map `f`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub standardizer: Standardizer,
    pub net: MlpModel,
}

impl DiffMap for Encoder {
    fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.net.output_dim()
    }

    fn check_eval(&self) -> Result<()> {
        self.net.check_eval()
    }

    fn record(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.check_eval()?;
        let s = self.standardizer.record(tape, x)?;
        DiffMap::record(&self.net, tape, s)
    }
}

/// Decoder network followed by de-standardization: the map `h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decoder {
    pub standardizer: Standardizer,
    pub net: MlpModel,
}

impl DiffMap for Decoder {
    fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.net.output_dim()
    }

    fn check_eval(&self) -> Result<()> {
        self.net.check_eval()
    }

    fn record(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        self.check_eval()?;
        let y = DiffMap::record(&self.net, tape, z)?;
        self.standardizer.record_inverse(tape, y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub zeta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda1: 77.4, lambda2: 0.32, zeta: 0.5 }
    }
}

impl LossWeights {
    /// Both weights non-negative and not both zero; `zeta >= 0`. A zero
    /// weight is allowed so single-term ablations can be trained.
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda1 >= 0.0
            && self.lambda2 >= 0.0
            && self.lambda1 + self.lambda2 > 0.0
            && self.zeta >= 0.0
            && self.lambda1.is_finite()
            && self.lambda2.is_finite()
            && self.zeta.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::contract("loss weights must be finite, non-negative and not both zero"))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaeModel {
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub d_latent: usize,
    pub weights: LossWeights,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaeConfig {
    pub d_latent: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub zeta: f64,
    pub patience: usize,
    pub seed: u64,
    /// Fraction of points used for training; the rest validate.
    pub split: f64,
    pub dropout: f64,
    pub normalization: bool,
}

impl Default for GaeConfig {
    fn default() -> Self {
        GaeConfig {
            d_latent: 2,
            hidden: vec![256, 128, 64],
            epochs: 200,
            batch_size: 256,
            lr: 1e-3,
            weight_decay: 1e-4,
            lambda1: 77.4,
            lambda2: 0.32,
            zeta: 0.5,
            patience: 50,
            seed: 0,
            split: 0.9,
            dropout: 0.2,
            normalization: true,
        }
    }
}

impl GaeConfig {
    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { lambda1: self.lambda1, lambda2: self.lambda2, zeta: self.zeta }
    }
}

/// One row of the training history.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_total: f64,
    pub val_total: f64,
    pub train_dist: f64,
    pub train_recon: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub dist: f64,
    pub recon: f64,
}

/// Weighted stress of latent pair distances; returns a 1 x 1 variable.
pub fn record_loss_dist(tape: &mut Tape, z: Var, d: &DistanceMatrix, zeta: f64) -> Result<Var> {
    let n = tape.value(z).rows();
    if d.len() != n {
        return Err(Error::shape(format!("distance block is {} x {} for a batch of {n}", d.len(), d.len())));
    }
    let mut ii = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    let mut jj = Vec::with_capacity(ii.capacity());
    let mut target = Vec::with_capacity(ii.capacity());
    for i in 0..n {
        for j in i + 1..n {
            let dij = d.get(i, j);
            if !(dij >= 0.0) {
                return Err(Error::contract(format!("negative or NaN distance at ({i}, {j})")));
            }
            ii.push(i);
            jj.push(j);
            target.push(dij);
        }
    }
    if target.is_empty() {
        return Ok(tape.constant(Matrix::scalar(0.0)));
    }
    let weights: Vec<f64> = target.iter().map(|t| (-zeta * t).exp() / n as f64).collect();
    let p = target.len();
    let zi = tape.select_rows(z, ii)?;
    let zj = tape.select_rows(z, jj)?;
    let diff = tape.sub(zi, zj)?;
    let sq = tape.square(diff);
    let d2 = tape.row_sum(sq);
    let dist = tape.sqrt(d2);
    let neg_t: Vec<f64> = target.iter().map(|t| -t).collect();
    let resid = tape.add_const(dist, Matrix::from_vec(p, 1, neg_t))?;
    let r2 = tape.square(resid);
    let w = tape.mul_const(r2, Matrix::from_vec(p, 1, weights))?;
    Ok(tape.sum(w))
}

/// Mean over rows of the squared reconstruction error.
pub fn record_loss_recon(tape: &mut Tape, x: Var, xhat: Var) -> Result<Var> {
    let n = tape.value(x).rows().max(1);
    let diff = tape.sub(x, xhat)?;
    let sq = tape.square(diff);
    let s = tape.sum(sq);
    Ok(tape.scale(s, 1.0 / n as f64))
}

impl GaeModel {
    pub fn new(input_dim: usize, config: &GaeConfig, standardizer: Standardizer) -> Result<Self> {
        config.loss_weights().validate()?;
        if config.d_latent == 0 {
            return Err(Error::contract("d_latent must be positive"));
        }
        if standardizer.dim() != input_dim {
            return Err(Error::InputDim { expected: input_dim, got: standardizer.dim() });
        }
        let mut r = rng::stream(config.seed, 0xE1C0);
        let enc_cfg = MlpConfig::with_hidden(input_dim, &config.hidden, config.d_latent)
            .dropout(config.dropout)
            .normalization(config.normalization);
        let hidden_rev: Vec<usize> = config.hidden.iter().rev().copied().collect();
        let dec_cfg = MlpConfig::with_hidden(config.d_latent, &hidden_rev, input_dim)
            .dropout(config.dropout)
            .normalization(config.normalization);
        Ok(GaeModel {
            encoder: Encoder { standardizer: standardizer.clone(), net: MlpModel::new(&enc_cfg, &mut r)? },
            decoder: Decoder { standardizer, net: MlpModel::new(&dec_cfg, &mut r)? },
            d_latent: config.d_latent,
            weights: config.loss_weights(),
        })
    }

    /// Assembles a model from existing networks (no standardization).
    pub fn from_parts(encoder: MlpModel, decoder: MlpModel, weights: LossWeights) -> Result<Self> {
        weights.validate()?;
        if encoder.output_dim() != decoder.input_dim() {
            return Err(Error::shape("encoder output and decoder input widths differ"));
        }
        if encoder.input_dim() != decoder.output_dim() {
            return Err(Error::shape("decoder must map back to the input dimension"));
        }
        let d = encoder.input_dim();
        Ok(GaeModel {
            d_latent: encoder.output_dim(),
            encoder: Encoder { standardizer: Standardizer::identity(d), net: encoder },
            decoder: Decoder { standardizer: Standardizer::identity(d), net: decoder },
            weights,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.encoder.net.set_mode(mode);
        self.decoder.net.set_mode(mode);
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.encoder.net.validate()?;
        self.decoder.net.validate()?;
        if self.encoder.output_dim() != self.d_latent || self.decoder.input_dim() != self.d_latent {
            return Err(Error::shape("encoder output / decoder input must equal d_latent"));
        }
        Ok(())
    }

    /// Latent codes (eval semantics).
    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(Error::InputDim { expected: self.input_dim(), got: x.cols() });
        }
        self.encoder.net.predict(&self.encoder.standardizer.apply(x))
    }

    /// Reconstructions (eval semantics).
    pub fn decode(&self, z: &Matrix) -> Result<Matrix> {
        let mut frozen = self.decoder.clone();
        frozen.net.set_mode(Mode::Eval);
        frozen.eval_batch(z)
    }

    /// The three losses on a batch, eval semantics.
    pub fn losses(&self, batch: &PointCloud, d: &DistanceMatrix) -> Result<LossParts> {
        let mut frozen = self.clone();
        frozen.set_mode(Mode::Eval);
        let mut tape = Tape::new();
        let x = tape.constant(batch.points.clone());
        let z = frozen.encoder.record(&mut tape, x)?;
        let xhat = frozen.decoder.record(&mut tape, z)?;
        let ld = record_loss_dist(&mut tape, z, d, self.weights.zeta)?;
        let lr = record_loss_recon(&mut tape, x, xhat)?;
        let (dist, recon) = (tape.value(ld).item(), tape.value(lr).item());
        Ok(LossParts { total: self.weights.lambda1 * dist + self.weights.lambda2 * recon, dist, recon })
    }
}

pub fn loss_recon(model: &GaeModel, batch: &PointCloud) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InsufficientData("empty batch".to_string()));
    }
    let z = model.encode(&batch.points)?;
    let xhat = model.decode(&z)?;
    let n = batch.len() as f64;
    Ok(batch.points.sub(&xhat).data().iter().map(|v| v * v).sum::<f64>() / n)
}

pub fn loss_dist(model: &GaeModel, batch: &PointCloud, d: &DistanceMatrix) -> Result<f64> {
    let z = model.encode(&batch.points)?;
    let mut tape = Tape::new();
    let zv = tape.constant(z);
    let l = record_loss_dist(&mut tape, zv, d, model.weights.zeta)?;
    Ok(tape.value(l).item())
}

pub fn loss_total(model: &GaeModel, batch: &PointCloud, d: &DistanceMatrix) -> Result<f64> {
    Ok(model.losses(batch, d)?.total)
}

/// Result of [`train_gae`]: best-validation model plus per-epoch history.
#[derive(Clone, Debug)]
pub struct TrainedGae {
    pub model: GaeModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

fn train_step(
    model: &mut GaeModel,
    opt: &mut OptimizerState,
    x: &Matrix,
    d: &DistanceMatrix,
    rng: &mut rng::SeededRng,
) -> Result<LossParts> {
    let mut tape = Tape::new();
    let enc_vars = model.encoder.net.bind(&mut tape);
    let dec_vars = model.decoder.net.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let xs = model.encoder.standardizer.record(&mut tape, xv)?;
    let enc = model.encoder.net.record(&mut tape, xs, &enc_vars, rng)?;
    let dec = model.decoder.net.record(&mut tape, enc.output, &dec_vars, rng)?;
    let xhat = model.decoder.standardizer.record_inverse(&mut tape, dec.output)?;
    let w = model.weights;
    let ld = record_loss_dist(&mut tape, enc.output, d, w.zeta)?;
    let lr = record_loss_recon(&mut tape, xv, xhat)?;
    let a = tape.scale(ld, w.lambda1);
    let b = tape.scale(lr, w.lambda2);
    let total = tape.add(a, b)?;
    let parts =
        LossParts { total: tape.value(total).item(), dist: tape.value(ld).item(), recon: tape.value(lr).item() };
    let grads = tape.backward(total)?;
    let all: Vec<Matrix> = enc_vars.0.iter().chain(dec_vars.0.iter()).map(|v| grads.wrt(*v)).collect();
    {
        let mut params = model.encoder.net.params_mut();
        params.extend(model.decoder.net.params_mut());
        opt.step(&mut params, &all)?;
    }
    model.encoder.net.update_running_stats(&enc.batch_stats);
    model.decoder.net.update_running_stats(&dec.batch_stats);
    Ok(parts)
}

fn gae_params(model: &GaeModel) -> Vec<&Matrix> {
    let mut p = model.encoder.net.params();
    p.extend(model.decoder.net.params());
    p
}

/// Minibatch AdamW training with early stopping on the validation total.
pub fn train_gae(data: &PointCloud, d: &DistanceMatrix, config: &GaeConfig) -> Result<TrainedGae> {
    let n = data.len();
    if d.len() != n {
        return Err(Error::shape(format!("{n} points but a {} x {} distance matrix", d.len(), d.len())));
    }
    if n < 4 {
        return Err(Error::InsufficientData("need at least 4 points".to_string()));
    }
    if config.batch_size < 2 || config.epochs == 0 {
        return Err(Error::contract("batch_size >= 2 and epochs >= 1 required"));
    }
    if !(config.split > 0.0 && config.split < 1.0) {
        return Err(Error::contract("split must lie in (0, 1)"));
    }
    let mut split_rng = rng::stream(config.seed, 0x5011);
    let perm = rng::permutation(&mut split_rng, n);
    let n_train = ((n as f64 * config.split).round() as usize).clamp(2, n - 2);
    let (train_idx, val_idx) = perm.split_at(n_train);
    let train = data.select(train_idx);
    let val = data.select(val_idx);
    let d_val = d.subset(val_idx);

    let mut model = GaeModel::new(data.dim(), config, Standardizer::fit(&train.points))?;
    let mut opt = OptimizerState::new(AdamW::with_lr(config.lr, config.weight_decay), &gae_params(&model));
    let mut best = (f64::INFINITY, model.clone(), 0usize);
    let mut history = Vec::with_capacity(config.epochs);
    let mut since_best = 0;

    for epoch in 0..config.epochs {
        model.set_mode(Mode::Train);
        let mut erng = rng::stream(config.seed, 1 + epoch as u64);
        let order = rng::permutation(&mut erng, n_train);
        let (mut tot, mut dist, mut rec, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let global: Vec<usize> = chunk.iter().map(|&i| train_idx[i]).collect();
            let x = data.points.select_rows(&global);
            let parts = train_step(&mut model, &mut opt, &x, &d.subset(&global), &mut erng)?;
            if !parts.total.is_finite() {
                return Err(Error::Diverged {
                    stage: "gae epoch".to_string(),
                    index: epoch,
                    detail: "non-finite training loss".to_string(),
                });
            }
            tot += parts.total;
            dist += parts.dist;
            rec += parts.recon;
            batches += 1;
        }
        model.set_mode(Mode::Eval);
        let v = model.losses(&val, &d_val)?;
        if !v.total.is_finite() {
            return Err(Error::Diverged {
                stage: "gae epoch".to_string(),
                index: epoch,
                detail: "non-finite validation loss".to_string(),
            });
        }
        let b = batches.max(1) as f64;
        history.push(EpochRecord {
            epoch,
            train_total: tot / b,
            val_total: v.total,
            train_dist: dist / b,
            train_recon: rec / b,
        });
        if v.total < best.0 {
            best = (v.total, model.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    let mut out = best.1;
    out.set_mode(Mode::Eval);
    Ok(TrainedGae { model: out, history, best_epoch: best.2 })
}
