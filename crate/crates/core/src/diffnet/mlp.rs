//! Feed-forward ReLU networks.
//!
//! Hidden layer: linear -> [normalization] -> ReLU -> [dropout].
//! Output layer: linear only.
//!
//! Normalization uses batch statistics in train mode and frozen running
//! statistics in eval mode, so an eval-mode network is a fixed smooth-a.e.
//! map whose Jacobian is well defined.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{column_stats, Tape, Var};
use super::DiffMap;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::prelude::*;
use crate::rng;

pub const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
const SN_WARMUP_ITERS: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Affine normalization with running statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Norm {
    pub gamma: Matrix,
    pub beta: Matrix,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl Norm {
    fn new(width: usize) -> Self {
        Norm {
            gamma: Matrix::filled(1, width, 1.0),
            beta: Matrix::zeros(1, width),
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// out x in
    pub weight: Matrix,
    /// 1 x out
    pub bias: Matrix,
    pub norm: Option<Norm>,
    /// Persisted left singular vector estimate for spectral normalization.
    pub sn_u: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub layer_dims: Vec<usize>,
    pub dropout: f64,
    pub normalization: bool,
    pub spectral_norm: bool,
}

impl MlpConfig {
    pub fn new(layer_dims: Vec<usize>) -> Self {
        MlpConfig { layer_dims, dropout: 0.0, normalization: false, spectral_norm: false }
    }

    /// `input -> hidden... -> output`
    pub fn with_hidden(input: usize, hidden: &[usize], output: usize) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        Self::new(dims)
    }

    pub fn dropout(mut self, p: f64) -> Self {
        self.dropout = p;
        self
    }

    pub fn normalization(mut self, on: bool) -> Self {
        self.normalization = on;
        self
    }

    pub fn spectral_norm(mut self, on: bool) -> Self {
        self.spectral_norm = on;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layer_dims: Vec<usize>,
    pub layers: Vec<Layer>,
    pub dropout_rate: f64,
    pub spectral_norm_enabled: bool,
    pub sn_warm: bool,
    pub mode: Mode,
}

/// Tape handles of the parameters, in [`MlpModel::params`] order.
#[derive(Clone, Debug)]
pub struct MlpVars(pub Vec<Var>);

/// Output of a recorded forward pass plus the batch statistics it used.
#[derive(Clone, Debug)]
pub struct Recorded {
    pub output: Var,
    /// Per layer: (mean, population variance) of the pre-normalization batch.
    pub batch_stats: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl MlpModel {
    /// He-uniform hidden layers, Glorot-uniform output layer, zero biases.
    pub fn new<R: Rng + ?Sized>(config: &MlpConfig, rng: &mut R) -> Result<Self> {
        let dims = &config.layer_dims;
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::contract("layer_dims needs at least two positive widths"));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::contract("dropout rate must lie in [0, 1)"));
        }
        let n_layers = dims.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let hidden = l + 1 < n_layers;
            let limit = if hidden {
                (6.0 / fan_in as f64).sqrt()
            } else {
                (6.0 / (fan_in + fan_out) as f64).sqrt()
            };
            let data = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
            let sn_u = config.spectral_norm.then(|| {
                let mut u = rng::normal_vec(rng, fan_out);
                normalize_in_place(&mut u);
                u
            });
            layers.push(Layer {
                weight: Matrix::from_vec(fan_out, fan_in, data),
                bias: Matrix::zeros(1, fan_out),
                norm: (hidden && config.normalization).then(|| Norm::new(fan_out)),
                sn_u,
            });
        }
        Ok(MlpModel {
            layer_dims: dims.clone(),
            layers,
            dropout_rate: config.dropout,
            spectral_norm_enabled: config.spectral_norm,
            sn_warm: false,
            mode: Mode::Train,
        })
    }

    /// Builds a network from explicit (weight, bias) pairs without
    /// normalization, dropout or spectral normalization.
    pub fn from_weights(weights: Vec<(Matrix, Vec<f64>)>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::contract("at least one layer required"));
        }
        let mut dims = vec![weights[0].0.cols()];
        let mut layers = Vec::new();
        for (w, b) in weights {
            if w.cols() != *dims.last().unwrap() || b.len() != w.rows() {
                return Err(Error::shape("layer shapes are inconsistent"));
            }
            dims.push(w.rows());
            layers.push(Layer { weight: w, bias: Matrix::row_vector(&b), norm: None, sn_u: None });
        }
        Ok(MlpModel {
            layer_dims: dims,
            layers,
            dropout_rate: 0.0,
            spectral_norm_enabled: false,
            sn_warm: false,
            mode: Mode::Eval,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn eval_mode(mut self) -> Self {
        self.mode = Mode::Eval;
        self
    }

    /// Checks weight shapes against `layer_dims`.
    pub fn validate(&self) -> Result<()> {
        if self.layers.len() + 1 != self.layer_dims.len() {
            return Err(Error::shape("layer count does not match layer_dims"));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let want = (self.layer_dims[l + 1], self.layer_dims[l]);
            if layer.weight.shape() != want || layer.bias.shape() != (1, want.0) {
                return Err(Error::shape(format!("layer {l} weight/bias shape does not match layer_dims")));
            }
            if let Some(n) = &layer.norm {
                if n.gamma.cols() != want.0 || n.running_mean.len() != want.0 || n.running_var.len() != want.0 {
                    return Err(Error::shape(format!("layer {l} normalization width mismatch")));
                }
            }
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.push(&layer.weight);
            out.push(&layer.bias);
            if let Some(n) = &layer.norm {
                out.push(&n.gamma);
                out.push(&n.beta);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
            if let Some(n) = &mut layer.norm {
                out.push(&mut n.gamma);
                out.push(&mut n.beta);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Registers every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> MlpVars {
        MlpVars(self.params().into_iter().map(|p| tape.leaf(p.clone())).collect())
    }

    /// Binds parameters as constants, for input derivatives only.
    pub fn bind_frozen(&self, tape: &mut Tape) -> MlpVars {
        MlpVars(self.params().into_iter().map(|p| tape.constant(p.clone())).collect())
    }

    /// Records a forward pass. Train mode draws dropout masks from `rng` and
    /// normalizes with batch statistics; eval mode ignores `rng`.
    pub fn record<R: Rng + ?Sized>(&self, tape: &mut Tape, x: Var, vars: &MlpVars, rng: &mut R) -> Result<Recorded> {
        if tape.value(x).cols() != self.input_dim() {
            return Err(Error::InputDim { expected: self.input_dim(), got: tape.value(x).cols() });
        }
        let mut p = vars.0.iter().copied();
        let mut h = x;
        let mut batch_stats = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (w, b) = (p.next().unwrap(), p.next().unwrap());
            h = tape.linear(h, w, b)?;
            let mut stats = None;
            if let Some(norm) = &layer.norm {
                let (gamma, beta) = (p.next().unwrap(), p.next().unwrap());
                let z = match self.mode {
                    Mode::Train => {
                        let hv = tape.value(h);
                        let (mean, inv_std) = column_stats(hv, 0.0);
                        let var = inv_std.iter().map(|s| if s.is_finite() { 1.0 / (s * s) } else { 0.0 }).collect();
                        stats = Some((mean, var));
                        tape.batch_norm(h, BN_EPS)
                    }
                    Mode::Eval => {
                        let neg_mean = tape.constant(Matrix::row_vector(
                            &norm.running_mean.iter().map(|m| -m).collect::<Vec<_>>(),
                        ));
                        let inv = tape.constant(Matrix::row_vector(
                            &norm.running_var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect::<Vec<_>>(),
                        ));
                        let c = tape.add_row(h, neg_mean)?;
                        tape.mul_row(c, inv)?
                    }
                };
                let scaled = tape.mul_row(z, gamma)?;
                h = tape.add_row(scaled, beta)?;
            }
            batch_stats.push(stats);
            if l < last {
                h = tape.relu(h);
                if self.mode == Mode::Train && self.dropout_rate > 0.0 {
                    let (r, c) = tape.value(h).shape();
                    let keep = 1.0 - self.dropout_rate;
                    let mask: Vec<f64> = (0..r * c)
                        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    h = tape.mul_const(h, Matrix::from_vec(r, c, mask))?;
                }
            }
        }
        Ok(Recorded { output: h, batch_stats })
    }

    /// Mode-dependent batch forward pass.
    pub fn forward_batch<R: Rng + ?Sized>(&self, x: &Matrix, rng: &mut R) -> Result<Matrix> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let rec = self.record(&mut tape, xv, &vars, rng)?;
        Ok(tape.value(rec.output).clone())
    }

    /// Mode-dependent forward pass of one input vector.
    pub fn forward<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        Ok(self.forward_batch(&Matrix::row_vector(x), rng)?.into_vec())
    }

    /// Eval-semantics forward pass regardless of the current mode.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        let frozen = self.frozen_view();
        frozen.forward_batch(x, &mut rng::seeded(0))
    }

    fn frozen_view(&self) -> MlpModel {
        // cheap relative to a forward pass; keeps a single code path
        let mut m = self.clone();
        m.mode = Mode::Eval;
        m
    }

    /// Exponential moving average update of the running statistics.
    pub fn update_running_stats(&mut self, stats: &[Option<(Vec<f64>, Vec<f64>)>]) {
        for (layer, st) in self.layers.iter_mut().zip(stats) {
            if let (Some(norm), Some((mean, var))) = (&mut layer.norm, st) {
                for j in 0..mean.len() {
                    norm.running_mean[j] = (1.0 - BN_MOMENTUM) * norm.running_mean[j] + BN_MOMENTUM * mean[j];
                    norm.running_var[j] = (1.0 - BN_MOMENTUM) * norm.running_var[j] + BN_MOMENTUM * var[j];
                }
            }
        }
    }

    /// Clips every parameter entry to `[-bound, bound]`.
    pub fn clip_weights(&mut self, bound: f64) {
        for p in self.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = v.clamp(-bound, bound));
        }
    }

    /// Divides each weight matrix by its power-iteration estimate of the top
    /// singular value. The first call runs a warm-up; later calls refine the
    /// persisted vector with a single iteration.
    pub fn spectral_normalize(&mut self) {
        if !self.spectral_norm_enabled {
            return;
        }
        let iters = if self.sn_warm { 1 } else { SN_WARMUP_ITERS };
        for layer in &mut self.layers {
            let w = &layer.weight;
            let mut u = layer.sn_u.take().unwrap_or_else(|| {
                let mut u = vec![1.0; w.rows()];
                normalize_in_place(&mut u);
                u
            });
            let mut v = vec![0.0; w.cols()];
            for _ in 0..iters {
                v = w.transpose().matvec(&u);
                normalize_in_place(&mut v);
                u = w.matvec(&v);
                normalize_in_place(&mut u);
            }
            let sigma = linalg::dot(&u, &w.matvec(&v));
            if sigma > 1e-12 {
                layer.weight = w.scale(1.0 / sigma);
            }
            layer.sn_u = Some(u);
        }
        self.sn_warm = true;
    }

    /// Product of per-layer spectral norms: a Lipschitz bound for the
    /// normalization-free network.
    pub fn lipschitz_bound(&self) -> f64 {
        self.layers.iter().map(|l| l.weight.singular_values().first().copied().unwrap_or(0.0)).product()
    }

    /// ReLU on/off pattern of all hidden units for input `x` (eval semantics).
    pub fn activation_pattern(&self, x: &[f64]) -> Result<Vec<bool>> {
        if x.len() != self.input_dim() {
            return Err(Error::InputDim { expected: self.input_dim(), got: x.len() });
        }
        let frozen = self.frozen_view();
        let mut pattern = Vec::new();
        let mut h = Matrix::row_vector(x);
        for (l, layer) in frozen.layers.iter().enumerate() {
            let mut z = h.matmul_nt(&layer.weight).add(&layer.bias);
            if let Some(n) = &layer.norm {
                for j in 0..z.cols() {
                    z[(0, j)] = (z[(0, j)] - n.running_mean[j]) / (n.running_var[j] + BN_EPS).sqrt() * n.gamma[(0, j)]
                        + n.beta[(0, j)];
                }
            }
            if l + 1 < frozen.layers.len() {
                pattern.extend(z.data().iter().map(|v| *v > 0.0));
                h = z.map(|v| v.max(0.0));
            }
        }
        Ok(pattern)
    }
}

impl DiffMap for MlpModel {
    fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    fn check_eval(&self) -> Result<()> {
        match self.mode {
            Mode::Eval => Ok(()),
            Mode::Train => Err(Error::Nondeterministic),
        }
    }

    fn record(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.check_eval()?;
        let vars = self.bind_frozen(tape);
        Ok(MlpModel::record(self, tape, x, &vars, &mut rng::seeded(0))?.output)
    }
}

fn normalize_in_place(v: &mut [f64]) {
    let n = linalg::norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::map_jacobian;

    fn single(w: [[f64; 2]; 2], b: [f64; 2]) -> MlpModel {
        MlpModel::from_weights(vec![(Matrix::from_rows(&w).unwrap(), b.to_vec())]).unwrap()
    }

    #[test]
    fn identity_layer() {
        let m = single([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0]);
        assert_eq!(m.forward(&[1.0, 2.0], &mut rng::seeded(0)).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn hand_multiplied_layer() {
        let m = single([[2.0, 0.0], [0.0, 3.0]], [1.0, 0.0]);
        assert_eq!(m.forward(&[1.0, 1.0], &mut rng::seeded(0)).unwrap(), vec![3.0, 3.0]);
    }

    #[test]
    fn relu_hidden_layer() {
        // hidden pre-activation (-1, 2) -> (0, 2), read out by an identity layer
        let m = MlpModel::from_weights(vec![
            (Matrix::from_rows(&[[-1.0, 0.0], [0.0, 2.0]]).unwrap(), vec![0.0, 0.0]),
            (Matrix::identity(2), vec![0.0, 0.0]),
        ])
        .unwrap();
        assert_eq!(m.forward(&[1.0, 1.0], &mut rng::seeded(0)).unwrap(), vec![0.0, 2.0]);
    }

    #[test]
    fn input_dimension_is_checked() {
        let m = single([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0]);
        let err = m.forward(&[1.0, 2.0, 3.0], &mut rng::seeded(0)).unwrap_err();
        assert_eq!(err, Error::InputDim { expected: 2, got: 3 });
    }

    #[test]
    fn shapes_follow_layer_dims() {
        let cfg = MlpConfig::with_hidden(5, &[7, 3], 2).normalization(true).dropout(0.2);
        let m = MlpModel::new(&cfg, &mut rng::seeded(1)).unwrap();
        m.validate().unwrap();
        assert_eq!(m.layers[0].weight.shape(), (7, 5));
        assert_eq!(m.layers[2].weight.shape(), (2, 3));
        assert!(m.layers[2].norm.is_none());
    }

    #[test]
    fn eval_forward_is_pure() {
        let cfg = MlpConfig::with_hidden(4, &[8, 8], 3).normalization(true).dropout(0.2);
        let m = MlpModel::new(&cfg, &mut rng::seeded(2)).unwrap().eval_mode();
        let x = [0.1, -0.4, 2.0, 0.0];
        let a = m.forward(&x, &mut rng::seeded(10)).unwrap();
        let b = m.forward(&x, &mut rng::seeded(99)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn train_mode_dropout_depends_on_rng() {
        let cfg = MlpConfig::with_hidden(4, &[32], 3).dropout(0.5);
        let m = MlpModel::new(&cfg, &mut rng::seeded(2)).unwrap();
        let x = Matrix::filled(1, 4, 1.0);
        let a = m.forward_batch(&x, &mut rng::seeded(10)).unwrap();
        let b = m.forward_batch(&x, &mut rng::seeded(11)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn jacobian_requires_eval_mode() {
        let m = MlpModel::new(&MlpConfig::with_hidden(2, &[4], 2), &mut rng::seeded(0)).unwrap();
        assert_eq!(map_jacobian(&m, &[0.0, 0.0]).unwrap_err(), Error::Nondeterministic);
    }

    #[test]
    fn spectral_normalize_scaled_identity() {
        let mut m = single([[5.0, 0.0], [0.0, 5.0]], [0.0, 0.0]);
        m.spectral_norm_enabled = true;
        m.spectral_normalize();
        let w = &m.layers[0].weight;
        assert!((w[(0, 0)] - 1.0).abs() < 1e-9 && (w[(1, 1)] - 1.0).abs() < 1e-9);
        assert!(w[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn spectral_normalize_keeps_singular_value_ratio() {
        // rotation * diag(2, 0.5) * rotation
        let (c, s) = (0.6, 0.8);
        let r = Matrix::from_rows(&[[c, -s], [s, c]]).unwrap();
        let w = r.matmul(&Matrix::diag(&[2.0, 0.5])).matmul(&r.transpose());
        let mut m = MlpModel::from_weights(vec![(w, vec![0.0, 0.0])]).unwrap();
        m.spectral_norm_enabled = true;
        m.spectral_normalize();
        let sv = m.layers[0].weight.singular_values();
        assert!((sv[0] - 1.0).abs() < 1e-6 && (sv[1] - 0.25).abs() < 1e-6, "{sv:?}");
        let before = m.layers[0].weight.clone();
        m.spectral_normalize();
        assert!(m.layers[0].weight.sub(&before).max_abs() < 1e-3);
    }

    #[test]
    fn spectral_normalize_random_layers() {
        let cfg = MlpConfig::with_hidden(12, &[16, 9], 1).spectral_norm(true);
        for seed in 0..20 {
            let mut m = MlpModel::new(&cfg, &mut rng::seeded(seed)).unwrap();
            m.spectral_normalize();
            for layer in &m.layers {
                let top = layer.weight.singular_values()[0];
                assert!((0.9..=1.1).contains(&top), "seed {seed}: {top}");
            }
        }
    }

    #[test]
    fn running_stats_move_towards_batch() {
        let cfg = MlpConfig::with_hidden(2, &[3], 1).normalization(true);
        let mut m = MlpModel::new(&cfg, &mut rng::seeded(0)).unwrap();
        m.update_running_stats(&[Some((vec![1.0; 3], vec![2.0; 3])), None]);
        let n = m.layers[0].norm.as_ref().unwrap();
        assert!((n.running_mean[0] - 0.1).abs() < 1e-12);
        assert!((n.running_var[0] - 1.1).abs() < 1e-12);
    }
}
