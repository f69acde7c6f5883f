//! Fixed-endpoint curves and energy-minimizing geodesics.
//!
//! A curve interpolates its endpoints linearly and adds a learned bump that is
//! gated to vanish at both ends:
//! `c(t) = t x1 + (1 - t) x0 + (1 - (2t - 1)^2) gamma(x0, x1, t)`.
//! Energies and lengths are measured through a map `f` (normally the warped
//! encoder) with finite differences on a uniform grid of `M` segments.

use serde::{Deserialize, Serialize};

use crate::diffnet::{AdamW, DiffMap, MlpConfig, MlpModel, MlpVars, Mode, OptimizerState, Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::offmanifold::WarpedEncoder;
use crate::prelude::*;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeodesicConfig {
    pub hidden: Vec<usize>,
    pub n_segments: usize,
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for GeodesicConfig {
    fn default() -> Self {
        GeodesicConfig { hidden: vec![192, 192, 192], n_segments: 30, steps: 500, lr: 1e-3, weight_decay: 1e-4, seed: 0 }
    }
}

impl GeodesicConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_segments == 0 {
            return Err(Error::contract("n_segments must be at least 1"));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::contract("lr must be positive and weight_decay non-negative"));
        }
        Ok(())
    }
}

/// Vanishes at `t = 0` and `t = 1`, equals 1 at the midpoint.
pub fn gate(t: f64) -> f64 {
    let u = 2.0 * t - 1.0;
    1.0 - u * u
}

/// `0, 1/M, ..., 1` with exact endpoints.
pub fn time_grid(n_segments: usize) -> Vec<f64> {
    (0..=n_segments).map(|i| i as f64 / n_segments as f64).collect()
}

/// A bump network for `dim`-dimensional endpoints: `(x0, x1, t) -> R^dim`.
/// The output layer starts at zero, so a fresh curve is the chord.
pub fn new_bump_network(dim: usize, hidden: &[usize], seed: u64) -> Result<MlpModel> {
    let cfg = MlpConfig::with_hidden(2 * dim + 1, hidden, dim);
    let mut net = MlpModel::new(&cfg, &mut rng::stream(seed, 0xb0b))?;
    if let Some(last) = net.layers.last_mut() {
        last.weight = Matrix::zeros(last.weight.rows(), last.weight.cols());
        last.bias = Matrix::zeros(1, last.bias.cols());
    }
    net.set_mode(Mode::Eval);
    Ok(net)
}

/// Pair-major rows: row `p * ts.len() + k` belongs to pair `p` at time `ts[k]`.
struct Layout {
    inputs: Matrix,
    chord: Matrix,
    gates: Matrix,
}

fn layout(x0: &Matrix, x1: &Matrix, ts: &[f64]) -> Result<Layout> {
    if x0.shape() != x1.shape() {
        return Err(Error::shape("start and end batches differ in shape"));
    }
    let (p, d) = x0.shape();
    let rows = p * ts.len();
    let mut inputs = Matrix::zeros(rows, 2 * d + 1);
    let mut chord = Matrix::zeros(rows, d);
    let mut gates = Matrix::zeros(rows, d);
    for i in 0..p {
        let (a, b) = (x0.row(i), x1.row(i));
        for (k, &t) in ts.iter().enumerate() {
            let r = i * ts.len() + k;
            let inp = inputs.row_mut(r);
            inp[..d].copy_from_slice(a);
            inp[d..2 * d].copy_from_slice(b);
            inp[2 * d] = t;
            for (c, (&ai, &bi)) in chord.row_mut(r).iter_mut().zip(a.iter().zip(b)) {
                *c = t * bi + (1.0 - t) * ai;
            }
            gates.row_mut(r).fill(gate(t));
        }
    }
    Ok(Layout { inputs, chord, gates })
}

fn check_times(ts: &[f64]) -> Result<()> {
    match ts.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        Some(t) => Err(Error::domain(format!("curve time {t} outside [0, 1]"))),
        None => Ok(()),
    }
}

/// Records the curve points of every (pair, time), pair-major.
pub fn record_curve_points(
    tape: &mut Tape,
    bump: &MlpModel,
    vars: &MlpVars,
    x0: &Matrix,
    x1: &Matrix,
    ts: &[f64],
) -> Result<Var> {
    check_times(ts)?;
    if bump.input_dim() != 2 * x0.cols() + 1 || bump.output_dim() != x0.cols() {
        return Err(Error::shape("bump network does not match the endpoint dimension"));
    }
    let lay = layout(x0, x1, ts)?;
    let input = tape.constant(lay.inputs);
    let g = bump.record(tape, input, vars, &mut rng::seeded(0))?.output;
    let gated = tape.mul_const(g, lay.gates)?;
    tape.add_const(gated, lay.chord)
}

/// Curve points without a tape, pair-major.
pub fn curve_points(bump: &MlpModel, x0: &Matrix, x1: &Matrix, ts: &[f64]) -> Result<Matrix> {
    let mut tape = Tape::new();
    let vars = bump.bind_frozen(&mut tape);
    let pts = record_curve_points(&mut tape, bump, &vars, x0, x1, ts)?;
    Ok(tape.value(pts).clone())
}

fn segment_indices(n_pairs: usize, n_segments: usize) -> (Vec<usize>, Vec<usize>) {
    let per = n_segments + 1;
    let hi = (0..n_pairs).flat_map(|p| (1..per).map(move |k| p * per + k)).collect();
    let lo = (0..n_pairs).flat_map(|p| (0..n_segments).map(move |k| p * per + k)).collect();
    (hi, lo)
}

/// Per-segment displacements `f(c_m) - f(c_{m-1})` of pair-major curve points.
pub fn record_displacements<F: DiffMap + ?Sized>(
    tape: &mut Tape,
    map: &F,
    points: Var,
    n_pairs: usize,
    n_segments: usize,
) -> Result<Var> {
    if tape.value(points).rows() != n_pairs * (n_segments + 1) || n_segments == 0 {
        return Err(Error::shape("curve points do not match pairs x (segments + 1)"));
    }
    let z = map.record(tape, points)?;
    let (hi, lo) = segment_indices(n_pairs, n_segments);
    let zh = tape.select_rows(z, hi)?;
    let zl = tape.select_rows(z, lo)?;
    tape.sub(zh, zl)
}

/// Mean over pairs of `M * sum_m |f(c_m) - f(c_{m-1})|^2`.
pub fn record_energy<F: DiffMap + ?Sized>(
    tape: &mut Tape,
    map: &F,
    points: Var,
    n_pairs: usize,
    n_segments: usize,
) -> Result<Var> {
    let d = record_displacements(tape, map, points, n_pairs, n_segments)?;
    let sq = tape.square(d);
    let total = tape.sum(sq);
    Ok(tape.scale(total, n_segments as f64 / n_pairs as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub bump: MlpModel,
    pub n_segments: usize,
}

impl Curve {
    pub fn new(x0: Vec<f64>, x1: Vec<f64>, bump: MlpModel, n_segments: usize) -> Result<Self> {
        if x0.len() != x1.len() || x0.is_empty() {
            return Err(Error::shape("endpoints must share a positive dimension"));
        }
        if bump.input_dim() != 2 * x0.len() + 1 || bump.output_dim() != x0.len() {
            return Err(Error::shape("bump network does not match the endpoint dimension"));
        }
        if n_segments == 0 {
            return Err(Error::contract("n_segments must be at least 1"));
        }
        if x0.iter().chain(&x1).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("curve endpoint".to_string()));
        }
        Ok(Curve { x0, x1, bump, n_segments })
    }

    /// The chord between the endpoints, with a fresh zero-output bump.
    pub fn straight(x0: &[f64], x1: &[f64], hidden: &[usize], n_segments: usize, seed: u64) -> Result<Self> {
        let bump = new_bump_network(x0.len(), hidden, seed)?;
        Curve::new(x0.to_vec(), x1.to_vec(), bump, n_segments)
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        Ok(self.eval_many(&[t])?.into_vec())
    }

    pub fn eval_many(&self, ts: &[f64]) -> Result<Matrix> {
        curve_points(&self.bump, &Matrix::row_vector(&self.x0), &Matrix::row_vector(&self.x1), ts)
    }

    pub fn times(&self) -> Vec<f64> {
        time_grid(self.n_segments)
    }

    /// The `M + 1` grid points.
    pub fn points(&self) -> Result<Matrix> {
        self.eval_many(&self.times())
    }

    /// Euclidean polyline length of the grid points in the ambient space.
    pub fn ambient_length(&self) -> Result<f64> {
        let p = self.points()?;
        Ok((1..p.rows()).map(|k| linalg::dist(p.row(k), p.row(k - 1))).sum())
    }
}

fn latent_steps<F: DiffMap + ?Sized>(curve: &Curve, map: &F) -> Result<Matrix> {
    map.check_eval()?;
    let z = map.eval_batch(&curve.points()?)?;
    let m = curve.n_segments;
    let (hi, lo) = segment_indices(1, m);
    Ok(z.select_rows(&hi).sub(&z.select_rows(&lo)))
}

/// `M * sum_m |f(c(t_m)) - f(c(t_{m-1}))|^2`.
pub fn curve_energy<F: DiffMap + ?Sized>(curve: &Curve, map: &F) -> Result<f64> {
    let d = latent_steps(curve, map)?;
    Ok(curve.n_segments as f64 * d.data().iter().map(|v| v * v).sum::<f64>())
}

/// `sum_m |f(c(t_m)) - f(c(t_{m-1}))|`.
pub fn curve_length<F: DiffMap + ?Sized>(curve: &Curve, map: &F) -> Result<f64> {
    let d = latent_steps(curve, map)?;
    Ok(d.row_iter().map(linalg::norm).sum())
}

/// Largest scorer value over the curve's grid points.
pub fn max_score_on_curve<S: DiffMap + ?Sized>(curve: &Curve, scorer: &S) -> Result<f64> {
    let s = scorer.eval_batch(&curve.points()?)?;
    Ok(s.data().iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeodesicFit {
    /// The lowest-energy curve seen during optimization.
    pub curve: Curve,
    /// Energy before each update, then after the last one.
    pub energy_history: Vec<f64>,
    pub best_step: usize,
    pub energy: f64,
    pub length: f64,
}

impl GeodesicFit {
    /// Running minimum of the history: the energy of the kept curve at each step.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.energy_history
            .iter()
            .map(|&e| {
                best = best.min(e);
                best
            })
            .collect()
    }
}

/// Minimizes the curve energy under `map`, starting from `curve`.
pub fn fit_curve_from<F: DiffMap + ?Sized>(mut curve: Curve, map: &F, config: &GeodesicConfig) -> Result<GeodesicFit> {
    config.validate()?;
    map.check_eval()?;
    if map.input_dim() != curve.dim() {
        return Err(Error::InputDim { expected: map.input_dim(), got: curve.dim() });
    }
    curve.n_segments = config.n_segments;
    let (x0, x1) = (Matrix::row_vector(&curve.x0), Matrix::row_vector(&curve.x1));
    let ts = curve.times();
    let mut opt = OptimizerState::new(AdamW::with_lr(config.lr, config.weight_decay), &curve.bump.params());
    let mut history = Vec::with_capacity(config.steps + 1);
    let mut best = (f64::INFINITY, curve.bump.clone(), 0usize);

    for step in 0..=config.steps {
        let mut tape = Tape::new();
        let vars = curve.bump.bind(&mut tape);
        let pts = record_curve_points(&mut tape, &curve.bump, &vars, &x0, &x1, &ts)?;
        let energy = record_energy(&mut tape, map, pts, 1, config.n_segments)?;
        let value = tape.value(energy).item();
        if !value.is_finite() {
            return Err(Error::Diverged {
                stage: "geodesic step".to_string(),
                index: step,
                detail: "non-finite curve energy".to_string(),
            });
        }
        history.push(value);
        if value < best.0 {
            best = (value, curve.bump.clone(), step);
        }
        if step == config.steps {
            break;
        }
        let grads = tape.backward(energy)?;
        let g: Vec<Matrix> = vars.0.iter().map(|v| grads.wrt(*v)).collect();
        opt.step(&mut curve.bump.params_mut(), &g)?;
    }
    curve.bump = best.1;
    let length = curve_length(&curve, map)?;
    Ok(GeodesicFit { curve, energy_history: history, best_step: best.2, energy: best.0, length })
}

/// Minimizes the curve energy under `map`, starting from the chord.
pub fn fit_curve<F: DiffMap + ?Sized>(x0: &[f64], x1: &[f64], map: &F, config: &GeodesicConfig) -> Result<GeodesicFit> {
    config.validate()?;
    let curve = Curve::straight(x0, x1, &config.hidden, config.n_segments, config.seed)?;
    fit_curve_from(curve, map, config)
}

/// Fits a geodesic under the warped metric. Both endpoints must score below
/// `epsilon`.
pub fn fit_geodesic<E: DiffMap, S: DiffMap>(
    x0: &[f64],
    x1: &[f64],
    warped: &WarpedEncoder<E, S>,
    epsilon: f64,
    config: &GeodesicConfig,
) -> Result<GeodesicFit> {
    for (index, x) in [x0, x1].into_iter().enumerate() {
        let score = warped.scorer.eval(x)?[0];
        if !(score < epsilon) {
            return Err(Error::OffManifoldEndpoint { index, score, epsilon });
        }
    }
    fit_curve(x0, x1, warped, config)
}
