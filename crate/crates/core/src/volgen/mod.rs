//! Volume-guided generation: unadjusted Langevin dynamics on
//! `lambda s(x) - log f_vol(x)`, followed by a score filter.

use serde::{Deserialize, Serialize};

use crate::diffnet::{scalar_gradients, DiffMap};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::manifolds::{ManifoldKind, PointCloud};
use crate::offmanifold::score_quantile;
use crate::prelude::*;
use crate::riemann::{log_volume_gradients, smoothed_log_volume_gradients};
use crate::rng::{self, SeededRng};

/// Acceptance fractions below this are flagged in the diagnostics.
pub const LOW_ACCEPTANCE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Chains start at random data points.
    FromData,
    /// Chains start at the data mean plus per-coordinate data-scaled noise.
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub lambda: f64,
    /// Step size; `1e-3 * diameter^2 / D` when absent.
    pub eta: Option<f64>,
    pub n_steps: usize,
    /// Filter threshold; the 0.9 quantile of the training scores when absent.
    pub epsilon: Option<f64>,
    pub n_samples: usize,
    pub seed: u64,
    pub init: Init,
    /// Intrinsic dimension used for the volume element.
    pub intrinsic_dim: usize,
    /// Finite-difference step of the log-volume gradient; `0.05 * diameter`
    /// when absent. See [`smoothed_log_volume_gradients`].
    pub volume_step: Option<f64>,
    /// Steps between recorded mean-score values.
    pub checkpoint_every: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            lambda: 10.0,
            eta: None,
            n_steps: 2000,
            epsilon: None,
            n_samples: 1000,
            seed: 0,
            init: Init::FromData,
            intrinsic_dim: 2,
            volume_step: None,
            checkpoint_every: 100,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::contract("lambda must be positive"));
        }
        if [self.eta, self.epsilon, self.volume_step].iter().any(|v| v.is_some_and(|e| !(e > 0.0))) {
            return Err(Error::contract("eta, epsilon and volume_step must be positive"));
        }
        if self.n_steps == 0 || self.n_samples == 0 || self.intrinsic_dim == 0 {
            return Err(Error::contract("n_steps, n_samples and intrinsic_dim must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub acceptance_fraction: f64,
    /// `(step, mean score over all chains)`; step 0 is the initial state.
    pub mean_s_per_checkpoint: Vec<(usize, f64)>,
    pub eta: f64,
    pub epsilon: f64,
    pub warning: Option<String>,
}

#[derive(Clone, Debug)]
pub struct Generated {
    /// Final states that pass the filter `s < epsilon`.
    pub samples: PointCloud,
    /// Every final state and its score, before filtering.
    pub final_states: Matrix,
    pub final_scores: Vec<f64>,
    pub diagnostics: Diagnostics,
}

/// `x - eta * grad + sqrt(2 eta) * xi` with the noise given explicitly.
pub fn langevin_step(x: &[f64], grad: &[f64], eta: f64, xi: &[f64]) -> Result<Vec<f64>> {
    if !(eta > 0.0) {
        return Err(Error::contract("step size must be positive"));
    }
    if grad.len() != x.len() || xi.len() != x.len() {
        return Err(Error::shape("state, gradient and noise lengths differ"));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("Langevin gradient".to_string()));
    }
    let c = (2.0 * eta).sqrt();
    Ok(x.iter().zip(grad).zip(xi).map(|((x, g), n)| x - eta * g + c * n).collect())
}

/// Axis-aligned box with reflecting walls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflectingBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ReflectingBox {
    pub fn reflect(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lo).zip(&self.hi) {
            let w = hi - lo;
            // fold onto [0, 2w), then mirror the upper half
            let mut t = (*v - lo) % (2.0 * w);
            if t < 0.0 {
                t += 2.0 * w;
            }
            *v = lo + if t > w { 2.0 * w - t } else { t };
        }
    }
}

/// Runs independent ULA chains. `grad` maps the current states to
/// `(scores, target gradients)`; each chain draws noise from its own seeded
/// stream, so results do not depend on how chains are batched.
pub fn run_ula<F>(
    init: &Matrix,
    mut grad: F,
    eta: f64,
    n_steps: usize,
    seed: u64,
    walls: Option<&ReflectingBox>,
    checkpoint_every: usize,
) -> Result<(Matrix, Vec<(usize, f64)>)>
where
    F: FnMut(&Matrix) -> Result<(Vec<f64>, Matrix)>,
{
    if !(eta > 0.0) {
        return Err(Error::contract("step size must be positive"));
    }
    let (n, dim) = init.shape();
    let mut streams: Vec<SeededRng> = (0..n as u64).map(|i| rng::stream(seed, i)).collect();
    let mut x = init.clone();
    let mut trace = Vec::new();
    let c = (2.0 * eta).sqrt();
    for step in 0..n_steps {
        let (s, g) = grad(&x)?;
        if g.shape() != (n, dim) {
            return Err(Error::shape("gradient batch has the wrong shape"));
        }
        if !g.is_finite() {
            return Err(Error::Diverged {
                stage: "langevin step".to_string(),
                index: step,
                detail: "non-finite target gradient".to_string(),
            });
        }
        if checkpoint_every > 0 && step % checkpoint_every == 0 && !s.is_empty() {
            trace.push((step, s.iter().sum::<f64>() / s.len() as f64));
        }
        for (i, r) in streams.iter_mut().enumerate() {
            let row = x.row_mut(i);
            for (v, gv) in row.iter_mut().zip(g.row(i)) {
                *v += -eta * gv + c * rng::normal(r);
            }
            if let Some(b) = walls {
                b.reflect(row);
            }
        }
    }
    let (s, _) = grad(&x)?;
    if !s.is_empty() {
        trace.push((n_steps, s.iter().sum::<f64>() / s.len() as f64));
    }
    Ok((x, trace))
}

/// Chains are processed in blocks of this many rows to bound tape memory.
const BLOCK: usize = 512;

/// Scores and `grad(lambda s - log f_vol)` for every row. `volume_step`
/// selects the smoothed log-volume gradient; `None` uses a step near
/// machine resolution.
pub fn target_gradient<E, S>(
    encoder: &E,
    scorer: &S,
    x: &Matrix,
    lambda: f64,
    d: usize,
    volume_step: Option<f64>,
) -> Result<(Vec<f64>, Matrix)>
where
    E: DiffMap + ?Sized,
    S: DiffMap + ?Sized,
{
    let mut scores = Vec::with_capacity(x.rows());
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for start in (0..x.rows()).step_by(BLOCK) {
        let idx: Vec<usize> = (start..(start + BLOCK).min(x.rows())).collect();
        let xb = x.select_rows(&idx);
        let (s, gs) = scalar_gradients(scorer, &xb)?;
        let gv = match volume_step {
            Some(h) => smoothed_log_volume_gradients(encoder, &xb, d, h)?,
            None => log_volume_gradients(encoder, &xb, d)?,
        };
        for (k, &i) in idx.iter().enumerate() {
            for j in 0..x.cols() {
                out[(i, j)] = lambda * gs[(k, j)] - gv[(k, j)];
            }
        }
        scores.extend(s);
    }
    Ok((scores, out))
}

fn initial_states(data: &PointCloud, config: &GenerationConfig) -> Matrix {
    let mut r = rng::stream(config.seed, u64::MAX);
    let (n, dim) = (config.n_samples, data.dim());
    match config.init {
        Init::FromData => {
            let idx: Vec<usize> = (0..n).map(|_| rand::Rng::random_range(&mut r, 0..data.len())).collect();
            data.points.select_rows(&idx)
        }
        Init::Gaussian => {
            let mean = data.points.column_means();
            let sd: Vec<f64> = (0..dim).map(|j| linalg::mean_std(&data.points.column(j)).1).collect();
            let mut x = Matrix::zeros(n, dim);
            for i in 0..n {
                for j in 0..dim {
                    x[(i, j)] = mean[j] + sd[j] * rng::normal(&mut r);
                }
            }
            x
        }
    }
}

pub fn default_step_size(data: &PointCloud) -> f64 {
    let d = data.diameter();
    1e-3 * d * d / data.dim() as f64
}

/// Langevin chains on `lambda s(x) - log f_vol(x)` started from the data,
/// then filtered by `s < epsilon`.
pub fn generate<E, S>(encoder: &E, scorer: &S, data: &PointCloud, config: &GenerationConfig) -> Result<Generated>
where
    E: DiffMap + ?Sized,
    S: DiffMap + ?Sized,
{
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientData("no training data".to_string()));
    }
    if encoder.input_dim() != data.dim() || scorer.input_dim() != data.dim() {
        return Err(Error::InputDim { expected: data.dim(), got: encoder.input_dim() });
    }
    encoder.check_eval()?;
    scorer.check_eval()?;
    let eta = config.eta.unwrap_or_else(|| default_step_size(data));
    let epsilon = match config.epsilon {
        Some(e) => e,
        None => score_quantile(scorer, &data.points, 0.9)?,
    };
    let init = initial_states(data, config);
    let (lambda, d) = (config.lambda, config.intrinsic_dim);
    let h = config.volume_step.unwrap_or_else(|| 0.05 * data.diameter());
    let (x, trace) = run_ula(
        &init,
        |x| target_gradient(encoder, scorer, x, lambda, d, Some(h)),
        eta,
        config.n_steps,
        config.seed,
        None,
        config.checkpoint_every,
    )?;
    let final_scores = scorer.eval_batch(&x)?.into_vec();
    let keep: Vec<usize> = (0..x.rows()).filter(|&i| final_scores[i] < epsilon).collect();
    let acceptance_fraction = keep.len() as f64 / x.rows() as f64;
    let warning = (acceptance_fraction < LOW_ACCEPTANCE)
        .then(|| format!("only {:.1}% of chains pass the score filter", 100.0 * acceptance_fraction));
    let samples = PointCloud {
        points: x.select_rows(&keep),
        params: None,
        kind: ManifoldKind::None,
        noise_sigma: 0.0,
        rotation: data.rotation.clone(),
    };
    Ok(Generated {
        samples,
        final_states: x,
        final_scores,
        diagnostics: Diagnostics { acceptance_fraction, mean_s_per_checkpoint: trace, eta, epsilon, warning },
    })
}
