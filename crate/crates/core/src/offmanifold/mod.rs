//! Deviation scorers `s(x)`: near zero on the data manifold and growing away
//! from it. Two realizations (a Lipschitz discriminator and a Gaussian-process
//! posterior variance) plus the extended encoder `x -> (f(x), beta s(x))`.

mod gp;

pub use gp::{GpConfig, GpScorer};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffnet::{AdamW, DiffMap, MlpConfig, MlpModel, Mode, OptimizerState, Tape, Var};
use crate::error::{Error, Result};
use crate::gae::Encoder;
use crate::linalg::{self, Matrix};
use crate::manifolds::{default_negative_variance, negative_sample, PointCloud};
use crate::prelude::*;
use crate::rng;

/// `E[w(neg)] - E[w(data)] + Var(w(data))`, population variance.
pub fn discriminator_loss(w_data: &[f64], w_neg: &[f64]) -> Result<f64> {
    if w_data.is_empty() || w_neg.is_empty() {
        return Err(Error::contract("discriminator loss needs non-empty batches"));
    }
    let (mean_d, std_d) = linalg::mean_std(w_data);
    let mean_n = w_neg.iter().sum::<f64>() / w_neg.len() as f64;
    Ok(mean_n - mean_d + std_d * std_d)
}

fn record_discriminator_loss(tape: &mut Tape, w_data: Var, w_neg: Var) -> Result<Var> {
    let mn = tape.mean(w_neg);
    let md = tape.mean(w_data);
    let neg_md = tape.neg(md);
    let centered = tape.add_scalar(w_data, neg_md)?;
    let sq = tape.square(centered);
    let var = tape.mean(sq);
    let gap = tape.sub(mn, md)?;
    tape.add(gap, var)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip: f64,
    /// Negative-sample noise variance; `(diameter / 4)^2` when absent.
    pub c: Option<f64>,
    pub split: f64,
    pub seed: u64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            hidden: vec![256, 128, 64],
            epochs: 100,
            patience: 50,
            batch_size: 256,
            lr: 1e-3,
            weight_decay: 1e-4,
            clip: 0.5,
            c: None,
            split: 0.9,
            seed: 0,
        }
    }
}

/// Critic `w` with `s(x) = mean_on_data - w(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub net: MlpModel,
    /// Mean critic value over the training data.
    pub mean_on_data: f64,
}

impl Discriminator {
    pub fn critic(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self.net.eval_batch(x)?.into_vec())
    }
}

impl DiffMap for Discriminator {
    fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn check_eval(&self) -> Result<()> {
        self.net.check_eval()
    }

    fn record(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = DiffMap::record(&self.net, tape, x)?;
        let neg = tape.neg(w);
        Ok(tape.shift(neg, self.mean_on_data))
    }
}

/// Unscaled scores `mean_on_data - w(x)` for every row.
pub fn score_discriminator(disc: &Discriminator, x: &Matrix) -> Result<Vec<f64>> {
    Ok(disc.critic(x)?.into_iter().map(|w| disc.mean_on_data - w).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedDiscriminator {
    pub discriminator: Discriminator,
    pub history: Vec<DiscriminatorEpoch>,
    pub best_epoch: usize,
}

fn diverged(epoch: usize, what: &str) -> Error {
    Error::Diverged { stage: "discriminator epoch".to_string(), index: epoch, detail: what.to_string() }
}

/// Trains the critic against fresh Gaussian negatives every epoch. After each
/// AdamW step all parameters are clipped and every layer is spectrally
/// normalized. Early stopping watches the loss on a held-out split with
/// fixed negatives.
pub fn train_discriminator(data: &PointCloud, config: &DiscriminatorConfig) -> Result<TrainedDiscriminator> {
    let n = data.len();
    if n < 4 {
        return Err(Error::InsufficientData("need at least 4 points".to_string()));
    }
    let c = config.c.unwrap_or_else(|| default_negative_variance(data));
    if !(c > 0.0) {
        return Err(Error::contract("negative-sample variance must be positive"));
    }
    if config.batch_size < 2 || config.epochs == 0 || !(config.split > 0.0 && config.split < 1.0) {
        return Err(Error::contract("batch_size >= 2, epochs >= 1 and split in (0, 1) required"));
    }
    let mut split_rng = rng::stream(config.seed, 0xd15c);
    let perm = rng::permutation(&mut split_rng, n);
    let n_train = ((n as f64 * config.split).round() as usize).clamp(2, n - 2);
    let train = data.select(&perm[..n_train]);
    let val = data.select(&perm[n_train..]);
    let val_neg = negative_sample(&val, c, config.seed ^ 0x7a1)?;

    let cfg = MlpConfig::with_hidden(data.dim(), &config.hidden, 1).spectral_norm(true);
    let mut net = MlpModel::new(&cfg, &mut rng::stream(config.seed, 0x1417))?;
    net.clip_weights(config.clip);
    net.spectral_normalize();
    net.set_mode(Mode::Eval);
    let mut opt = OptimizerState::new(AdamW::with_lr(config.lr, config.weight_decay), &net.params());

    let val_loss = |net: &MlpModel| -> Result<f64> {
        discriminator_loss(&net.eval_batch(&val.points)?.into_vec(), &net.eval_batch(&val_neg.points)?.into_vec())
    };
    let mut best = (val_loss(&net)?, net.clone(), 0usize);
    let mut history = Vec::with_capacity(config.epochs);
    let mut since_best = 0;

    for epoch in 0..config.epochs {
        let mut erng = rng::stream(config.seed, 1 + epoch as u64);
        let neg = negative_sample(&train, c, erng.random::<u64>())?;
        let order = rng::permutation(&mut erng, n_train);
        let (mut total, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let mut tape = Tape::new();
            let vars = net.bind(&mut tape);
            let xd = tape.constant(train.points.select_rows(chunk));
            let xn = tape.constant(neg.points.select_rows(chunk));
            let wd = net.record(&mut tape, xd, &vars, &mut erng)?.output;
            let wn = net.record(&mut tape, xn, &vars, &mut erng)?.output;
            let loss = record_discriminator_loss(&mut tape, wd, wn)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(diverged(epoch, "non-finite training loss"));
            }
            let grads = tape.backward(loss)?;
            let g: Vec<Matrix> = vars.0.iter().map(|v| grads.wrt(*v)).collect();
            opt.step(&mut net.params_mut(), &g)?;
            net.clip_weights(config.clip);
            net.spectral_normalize();
            total += value;
            batches += 1;
        }
        let v = val_loss(&net)?;
        if !v.is_finite() {
            return Err(diverged(epoch, "non-finite validation loss"));
        }
        history.push(DiscriminatorEpoch { epoch, train_loss: total / batches.max(1) as f64, val_loss: v });
        if v < best.0 {
            best = (v, net.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    let net = best.1;
    let w = net.eval_batch(&train.points)?;
    let mean_on_data = w.mean();
    Ok(TrainedDiscriminator { discriminator: Discriminator { net, mean_on_data }, history, best_epoch: best.2 })
}

/// Either scorer, for configuration-driven pipelines and checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Scorer {
    Discriminator(Discriminator),
    Gp(GpScorer),
}

impl DiffMap for Scorer {
    fn input_dim(&self) -> usize {
        match self {
            Scorer::Discriminator(d) => d.input_dim(),
            Scorer::Gp(g) => g.input_dim(),
        }
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn check_eval(&self) -> Result<()> {
        match self {
            Scorer::Discriminator(d) => d.check_eval(),
            Scorer::Gp(_) => Ok(()),
        }
    }

    fn record(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Scorer::Discriminator(d) => d.record(tape, x),
            Scorer::Gp(g) => g.record(tape, x),
        }
    }
}

/// Scores of every row of `x` under a scalar map.
pub fn scores<S: DiffMap + ?Sized>(scorer: &S, x: &Matrix) -> Result<Vec<f64>> {
    if scorer.output_dim() != 1 {
        return Err(Error::contract("a scorer has one output"));
    }
    Ok(scorer.eval_batch(x)?.into_vec())
}

/// The `q`-quantile of the scores over `data` (the generation filter uses
/// the 0.9 quantile of the training data).
pub fn score_quantile<S: DiffMap + ?Sized>(scorer: &S, data: &Matrix, q: f64) -> Result<f64> {
    if data.rows() == 0 {
        return Err(Error::InsufficientData("no points to score".to_string()));
    }
    Ok(linalg::quantile(&scores(scorer, data)?, q))
}

/// `x -> (f(x), beta s(x))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarpedEncoder<E = Encoder, S = Scorer> {
    pub encoder: E,
    pub scorer: S,
    pub beta: f64,
}

impl<E: DiffMap, S: DiffMap> WarpedEncoder<E, S> {
    pub fn new(encoder: E, scorer: S, beta: f64) -> Result<Self> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::contract("beta must be finite and non-negative"));
        }
        if scorer.output_dim() != 1 || scorer.input_dim() != encoder.input_dim() {
            return Err(Error::shape("scorer must map the encoder's input space to a scalar"));
        }
        Ok(WarpedEncoder { encoder, scorer, beta })
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn extended_encode(&self, x: &Matrix) -> Result<Matrix> {
        self.eval_batch(x)
    }
}

impl<E: DiffMap, S: DiffMap> DiffMap for WarpedEncoder<E, S> {
    fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.encoder.output_dim() + 1
    }

    fn check_eval(&self) -> Result<()> {
        self.encoder.check_eval()?;
        self.scorer.check_eval()
    }

    fn record(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let z = self.encoder.record(tape, x)?;
        let s = self.scorer.record(tape, x)?;
        let bs = tape.scale(s, self.beta);
        tape.concat_cols(&[z, bs])
    }
}
