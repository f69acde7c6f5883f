//! Population transport: latent minibatch OT couplings plus flow matching on
//! geodesic time derivatives.
//!
//! One shared bump network draws curves between coupled pairs; a flow field
//! `v(x0, t)` regresses their backward-difference velocities. Because the
//! field sees only the starting point and time, integrating it is a plain
//! integral rather than an ODE solve.

mod assignment;

pub use assignment::{brute_force_assignment, solve_assignment};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffnet::{AdamW, DiffMap, MlpConfig, MlpModel, MlpVars, Mode, OptimizerState, Tape, Var};
use crate::error::{Error, Result};
use crate::geodesics::{self, record_curve_points, record_energy, time_grid};
use crate::linalg::{self, Matrix};
use crate::offmanifold::WarpedEncoder;
use crate::prelude::*;
use crate::rng;

pub const MAX_BATCH: usize = 128;

/// A bijection between two equal-sized batches: `pairing[k] = (i, j)` couples
/// source `i` with target `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub pairing: Vec<(usize, usize)>,
    pub cost: f64,
}

/// Exact plan under the cost `|a_i - b_j|^2` between rows.
pub fn latent_plan(a: &Matrix, b: &Matrix) -> Result<TransportPlan> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::contract(format!(
            "coupled batches must match in shape, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let n = a.rows();
    let mut cost = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            cost[(i, j)] = linalg::sq_dist(a.row(i), b.row(j));
        }
    }
    let assign = solve_assignment(&cost)?;
    let total = assign.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
    Ok(TransportPlan { pairing: assign.into_iter().enumerate().collect(), cost: total })
}

/// Exact minibatch OT between `x` and `y` with latent squared-distance cost.
pub fn minibatch_ot<E: DiffMap + ?Sized>(x: &Matrix, y: &Matrix, encoder: &E) -> Result<TransportPlan> {
    if x.rows() != y.rows() {
        return Err(Error::contract(format!("batch sizes differ: {} vs {}", x.rows(), y.rows())));
    }
    if x.rows() > MAX_BATCH {
        return Err(Error::contract(format!("batch size {} exceeds {MAX_BATCH}", x.rows())));
    }
    latent_plan(&encoder.eval_batch(x)?, &encoder.eval_batch(y)?)
}

/// Minimal mean Euclidean cost over bijections between equal-sized clouds.
pub fn empirical_wasserstein1(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::InsufficientData("empty point cloud".to_string()));
    }
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::contract("clouds must have equal size and dimension; subsample the larger"));
    }
    let n = a.rows();
    let mut cost = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            cost[(i, j)] = linalg::dist(a.row(i), b.row(j));
        }
    }
    let assign = solve_assignment(&cost)?;
    Ok(assign.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum::<f64>() / n as f64)
}

/// `v(x0, t)`: input `[x0, t]`, output a velocity in the ambient space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowField {
    pub net: MlpModel,
}

impl FlowField {
    pub fn new(dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let net = MlpModel::new(&MlpConfig::with_hidden(dim + 1, hidden, dim), &mut rng::stream(seed, 0xf10))?;
        FlowField::from_net(net.eval_mode())
    }

    pub fn from_net(net: MlpModel) -> Result<Self> {
        if net.input_dim() != net.output_dim() + 1 {
            return Err(Error::shape("flow field maps (x0, t) in R^(D+1) to R^D"));
        }
        Ok(FlowField { net })
    }

    pub fn dim(&self) -> usize {
        self.net.output_dim()
    }

    /// Velocities at `(x0_i, t_i)`.
    pub fn velocity(&self, x0: &Matrix, t: &[f64]) -> Result<Matrix> {
        self.net.predict(&field_inputs(x0, t)?)
    }
}

fn field_inputs(x0: &Matrix, t: &[f64]) -> Result<Matrix> {
    if x0.rows() != t.len() {
        return Err(Error::shape("one time per starting point required"));
    }
    let d = x0.cols();
    let mut inp = Matrix::zeros(x0.rows(), d + 1);
    for (i, &ti) in t.iter().enumerate() {
        inp.row_mut(i)[..d].copy_from_slice(x0.row(i));
        inp.row_mut(i)[d] = ti;
    }
    Ok(inp)
}

/// Field inputs `(x0_p, t_m)` for `m = 1..M`, pair-major, matching the
/// backward-difference rows of [`geodesics::record_displacements`].
fn stencil_inputs(x0: &Matrix, n_segments: usize) -> Result<Matrix> {
    let ts = time_grid(n_segments);
    let rows: Vec<usize> = (0..x0.rows()).flat_map(|p| core::iter::repeat_n(p, n_segments)).collect();
    let t: Vec<f64> = (0..x0.rows()).flat_map(|_| ts[1..].iter().copied()).collect();
    field_inputs(&x0.select_rows(&rows), &t)
}

/// Mean over pairs and grid times of `|v(x0, t_m) - M (c(t_m) - c(t_{m-1}))|^2`.
pub fn record_flow_matching_loss(
    tape: &mut Tape,
    field: &FlowField,
    field_vars: &MlpVars,
    x0: &Matrix,
    points: Var,
    n_segments: usize,
) -> Result<Var> {
    let n_pairs = x0.rows();
    let identity = crate::diffnet::LinearMap { a: Matrix::identity(x0.cols()) };
    let dc = geodesics::record_displacements(tape, &identity, points, n_pairs, n_segments)?;
    let deriv = tape.scale(dc, n_segments as f64);
    let inp = tape.constant(stencil_inputs(x0, n_segments)?);
    let v = field.net.record(tape, inp, field_vars, &mut rng::seeded(0))?.output;
    let diff = tape.sub(v, deriv)?;
    let sq = tape.square(diff);
    let per_row = tape.row_sum(sq);
    Ok(tape.mean(per_row))
}

/// Curves from one shared bump network for a batch of endpoint pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchedCurves {
    pub bump: MlpModel,
    pub x0: Matrix,
    pub x1: Matrix,
    pub n_segments: usize,
}

impl BatchedCurves {
    /// Pair-major grid points, `(M + 1)` rows per pair.
    pub fn points(&self) -> Result<Matrix> {
        geodesics::curve_points(&self.bump, &self.x0, &self.x1, &time_grid(self.n_segments))
    }
}

pub fn flow_matching_loss(field: &FlowField, curves: &BatchedCurves) -> Result<f64> {
    let mut tape = Tape::new();
    let bv = curves.bump.bind_frozen(&mut tape);
    let fv = field.net.bind_frozen(&mut tape);
    let pts = record_curve_points(&mut tape, &curves.bump, &bv, &curves.x0, &curves.x1, &time_grid(curves.n_segments))?;
    let loss = record_flow_matching_loss(&mut tape, field, &fv, &curves.x0, pts, curves.n_segments)?;
    Ok(tape.value(loss).item())
}

/// Explicit Euler on a uniform grid of `[0, 1]`; one `(n_steps + 1) x D`
/// trajectory per starting row.
pub fn integrate_flow(field: &FlowField, x0: &Matrix, n_steps: usize) -> Result<Vec<Matrix>> {
    if n_steps == 0 {
        return Err(Error::contract("n_steps must be at least 1"));
    }
    if x0.cols() != field.dim() {
        return Err(Error::InputDim { expected: field.dim(), got: x0.cols() });
    }
    let (n, d) = x0.shape();
    let h = 1.0 / n_steps as f64;
    let mut traj: Vec<Matrix> = (0..n).map(|_| Matrix::zeros(n_steps + 1, d)).collect();
    let mut x = x0.clone();
    for k in 0..=n_steps {
        for (i, tr) in traj.iter_mut().enumerate() {
            tr.row_mut(k).copy_from_slice(x.row(i));
        }
        if k == n_steps {
            break;
        }
        let v = field.velocity(x0, &vec![k as f64 * h; n])?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("flow field output at step {k}")));
        }
        x = x.add(&v.scale(h));
    }
    Ok(traj)
}

/// Points of every trajectory at grid step `k`.
pub fn trajectory_slice(trajectories: &[Matrix], k: usize) -> Result<Matrix> {
    let rows: Vec<&[f64]> = trajectories.iter().map(|t| t.row(k)).collect();
    Matrix::from_rows(&rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransportConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub lambda_geo: f64,
    pub lambda_fm: f64,
    pub bump_hidden: Vec<usize>,
    pub field_hidden: Vec<usize>,
    pub n_segments: usize,
    pub euler_steps: usize,
    pub seed: u64,
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig {
            batch_size: 64,
            steps: 1000,
            lr: 1e-3,
            weight_decay: 1e-4,
            lambda_geo: 1.0,
            lambda_fm: 1.0,
            bump_hidden: vec![192, 192, 192],
            field_hidden: vec![64, 64, 64],
            n_segments: 30,
            euler_steps: 100,
            seed: 0,
        }
    }
}

impl TransportConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > MAX_BATCH {
            return Err(Error::contract(format!("batch_size must lie in 1..={MAX_BATCH}")));
        }
        if self.n_segments == 0 || self.euler_steps == 0 {
            return Err(Error::contract("n_segments and euler_steps must be positive"));
        }
        if !(self.lr > 0.0) || !(self.lambda_geo >= 0.0) || !(self.lambda_fm >= 0.0) {
            return Err(Error::contract("lr must be positive and loss weights non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportStep {
    pub step: usize,
    pub energy: f64,
    pub flow_matching: f64,
    pub plan_cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedTransport {
    pub field: FlowField,
    pub bump: MlpModel,
    pub history: Vec<TransportStep>,
}

fn sample_batch<R: Rng + ?Sized>(rng: &mut R, n: usize, b: usize) -> Vec<usize> {
    if n >= b {
        let mut perm = rng::permutation(rng, n);
        perm.truncate(b);
        perm
    } else {
        (0..b).map(|_| rng.random_range(0..n)).collect()
    }
}

/// Joint training of the shared bump network and the flow field.
pub fn train_transport<E: DiffMap, S: DiffMap>(
    x: &Matrix,
    y: &Matrix,
    warped: &WarpedEncoder<E, S>,
    config: &TransportConfig,
) -> Result<TrainedTransport> {
    config.validate()?;
    warped.check_eval()?;
    if x.rows() == 0 || y.rows() == 0 {
        return Err(Error::InsufficientData("source and target populations must be nonempty".to_string()));
    }
    let d = warped.input_dim();
    for m in [x, y] {
        if m.cols() != d {
            return Err(Error::InputDim { expected: d, got: m.cols() });
        }
    }
    let zx = warped.encoder.eval_batch(x)?;
    let zy = warped.encoder.eval_batch(y)?;
    let mut bump = geodesics::new_bump_network(d, &config.bump_hidden, config.seed)?;
    let mut field = FlowField::new(d, &config.field_hidden, config.seed)?;
    let adam = AdamW::with_lr(config.lr, config.weight_decay);
    let mut bump_opt = OptimizerState::new(adam, &bump.params());
    let mut field_opt = OptimizerState::new(adam, &field.net.params());
    let ts = time_grid(config.n_segments);
    let b = config.batch_size;
    let mut history = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let mut srng = rng::stream(config.seed, 1 + step as u64);
        let ix = sample_batch(&mut srng, x.rows(), b);
        let iy = sample_batch(&mut srng, y.rows(), b);
        let plan = latent_plan(&zx.select_rows(&ix), &zy.select_rows(&iy))?;
        let src: Vec<usize> = plan.pairing.iter().map(|&(i, _)| ix[i]).collect();
        let dst: Vec<usize> = plan.pairing.iter().map(|&(_, j)| iy[j]).collect();
        let (x0, x1) = (x.select_rows(&src), y.select_rows(&dst));

        let mut tape = Tape::new();
        let bv = bump.bind(&mut tape);
        let fv = field.net.bind(&mut tape);
        let pts = record_curve_points(&mut tape, &bump, &bv, &x0, &x1, &ts)?;
        let energy = record_energy(&mut tape, warped, pts, b, config.n_segments)?;
        let fm = record_flow_matching_loss(&mut tape, &field, &fv, &x0, pts, config.n_segments)?;
        let e_w = tape.scale(energy, config.lambda_geo);
        let f_w = tape.scale(fm, config.lambda_fm);
        let total = tape.add(e_w, f_w)?;
        let (ev, fmv) = (tape.value(energy).item(), tape.value(fm).item());
        if !ev.is_finite() || !fmv.is_finite() {
            return Err(Error::Diverged {
                stage: "transport step".to_string(),
                index: step,
                detail: "non-finite loss".to_string(),
            });
        }
        let grads = tape.backward(total)?;
        let gb: Vec<Matrix> = bv.0.iter().map(|v| grads.wrt(*v)).collect();
        let gf: Vec<Matrix> = fv.0.iter().map(|v| grads.wrt(*v)).collect();
        bump_opt.step(&mut bump.params_mut(), &gb)?;
        field_opt.step(&mut field.net.params_mut(), &gf)?;
        history.push(TransportStep { step, energy: ev, flow_matching: fmv, plan_cost: plan.cost });
    }
    bump.set_mode(Mode::Eval);
    Ok(TrainedTransport { field, bump, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::LinearMap;

    fn line(v: &[f64]) -> Matrix {
        Matrix::from_vec(v.len(), 1, v.to_vec())
    }

    fn id(d: usize) -> LinearMap {
        LinearMap { a: Matrix::identity(d) }
    }

    #[test]
    fn plan_examples() {
        let p = minibatch_ot(&line(&[0.0, 1.0]), &line(&[1.0, 0.0]), &id(1)).unwrap();
        assert_eq!(p.pairing, vec![(0, 1), (1, 0)]);
        assert_eq!(p.cost, 0.0);
        let p = minibatch_ot(&line(&[0.0, 2.0]), &line(&[3.0, 1.0]), &id(1)).unwrap();
        assert_eq!(p.pairing, vec![(0, 1), (1, 0)]);
        assert_eq!(p.cost, 2.0);
    }

    #[test]
    fn plan_rejects_bad_batches() {
        assert!(matches!(minibatch_ot(&line(&[0.0, 1.0]), &line(&[1.0]), &id(1)), Err(Error::Contract(_))));
        let big = Matrix::zeros(129, 1);
        assert!(matches!(minibatch_ot(&big, &big, &id(1)), Err(Error::Contract(_))));
    }

    #[test]
    fn plan_is_a_bijection_and_beats_identity() {
        let mut r = rng::seeded(4);
        let x = rng::normal_matrix(&mut r, 40, 3);
        let y = rng::normal_matrix(&mut r, 40, 3).add(&Matrix::filled(40, 3, 0.5));
        let p = minibatch_ot(&x, &y, &id(3)).unwrap();
        let mut seen = [false; 40];
        for &(_, j) in &p.pairing {
            assert!(!seen[j]);
            seen[j] = true;
        }
        let identity: f64 = (0..40).map(|i| linalg::sq_dist(x.row(i), y.row(i))).sum();
        assert!(p.cost <= identity);
        let summed: f64 = p.pairing.iter().map(|&(i, j)| linalg::sq_dist(x.row(i), y.row(j))).sum();
        assert!((summed - p.cost).abs() < 1e-12);
    }

    #[test]
    fn relabeling_permutes_the_plan() {
        let mut r = rng::seeded(7);
        let x = rng::normal_matrix(&mut r, 12, 2);
        let y = rng::normal_matrix(&mut r, 12, 2);
        let p = minibatch_ot(&x, &y, &id(2)).unwrap();
        let perm = rng::permutation(&mut r, 12);
        let q = minibatch_ot(&x.select_rows(&perm), &y, &id(2)).unwrap();
        assert!((p.cost - q.cost).abs() < 1e-12);
        for &(i, j) in &q.pairing {
            assert!(p.pairing.contains(&(perm[i], j)));
        }
    }

    #[test]
    fn wasserstein_examples() {
        assert_eq!(empirical_wasserstein1(&line(&[1.0, 5.0]), &line(&[5.0, 1.0])).unwrap(), 0.0);
        assert_eq!(empirical_wasserstein1(&line(&[0.0]), &line(&[3.0])).unwrap(), 3.0);
        assert_eq!(empirical_wasserstein1(&line(&[0.0, 1.0]), &line(&[2.0, 3.0])).unwrap(), 2.0);
        assert!(empirical_wasserstein1(&Matrix::zeros(0, 1), &line(&[1.0])).is_err());
    }

    fn zero_field(d: usize) -> FlowField {
        let mut f = FlowField::new(d, &[8], 0).unwrap();
        for l in &mut f.net.layers {
            l.weight = Matrix::zeros(l.weight.rows(), l.weight.cols());
            l.bias = Matrix::zeros(1, l.bias.cols());
        }
        f
    }

    /// Single affine layer with output `w_t * t + u`.
    fn affine_field(d: usize, w_t: &[f64], u: &[f64]) -> FlowField {
        let mut w = Matrix::zeros(d, d + 1);
        for (i, &v) in w_t.iter().enumerate() {
            w.row_mut(i)[d] = v;
        }
        FlowField::from_net(MlpModel::from_weights(vec![(w, u.to_vec())]).unwrap().eval_mode()).unwrap()
    }

    #[test]
    fn integration_examples() {
        let x0 = Matrix::from_rows(&[[0.5, -1.0], [2.0, 3.0]]).unwrap();
        let traj = integrate_flow(&zero_field(2), &x0, 10).unwrap();
        for (i, t) in traj.iter().enumerate() {
            assert_eq!(t.rows(), 11);
            assert!(t.row_iter().all(|r| r == x0.row(i)));
        }
        let u = [0.25, -0.5];
        for n in [1, 3, 100] {
            let traj = integrate_flow(&affine_field(2, &[0.0, 0.0], &u), &x0, n).unwrap();
            assert!((traj[0][(n, 0)] - 0.75).abs() < 1e-12);
            assert!((traj[0][(n, 1)] + 1.5).abs() < 1e-12);
        }
        // v = 2t u: left Riemann sum lags by u / n.
        for n in [10, 100, 1000] {
            let traj = integrate_flow(&affine_field(2, &[0.5, -1.0], &[0.0, 0.0]), &x0, n).unwrap();
            let err = (traj[0][(n, 0)] - 0.75).abs();
            assert!((err - 0.25 / n as f64).abs() < 1e-10, "n={n}: {err}");
        }
        assert!(integrate_flow(&zero_field(2), &x0, 0).is_err());
    }

    #[test]
    fn non_finite_field_is_an_error() {
        let f = affine_field(1, &[0.0], &[f64::NAN]);
        assert!(matches!(integrate_flow(&f, &line(&[0.0]), 5), Err(Error::NonFinite(_))));
    }

    fn straight_curves(x0: Matrix, x1: Matrix) -> BatchedCurves {
        let bump = geodesics::new_bump_network(x0.cols(), &[8], 0).unwrap();
        BatchedCurves { bump, x0, x1, n_segments: 20 }
    }

    #[test]
    fn flow_matching_examples() {
        let x0 = Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).unwrap();
        let x1 = Matrix::from_rows(&[[3.0, 4.0], [1.0, 2.0]]).unwrap();
        let curves = straight_curves(x0.clone(), x1.clone());
        let zero = flow_matching_loss(&zero_field(2), &curves).unwrap();
        assert!((zero - (25.0 + 1.0) / 2.0).abs() < 1e-9);
        // A constant field equal to a shared chord velocity fits exactly.
        let same = straight_curves(x0.clone(), x0.add(&Matrix::from_rows(&[[0.5, -2.0], [0.5, -2.0]]).unwrap()));
        let exact = flow_matching_loss(&affine_field(2, &[0.0, 0.0], &[0.5, -2.0]), &same).unwrap();
        assert!(exact < 1e-20);
        assert!(flow_matching_loss(&FlowField::new(2, &[8], 3).unwrap(), &curves).unwrap() >= 0.0);
    }

    #[test]
    fn matched_field_reproduces_the_curves() {
        // Zero loss on constant-derivative curves: Euler lands on the grid points.
        let x0 = Matrix::from_rows(&[[0.0, 1.0]]).unwrap();
        let u = [2.0, -1.0];
        let curves = straight_curves(x0.clone(), x0.add(&Matrix::row_vector(&u)));
        let field = affine_field(2, &[0.0, 0.0], &u);
        assert!(flow_matching_loss(&field, &curves).unwrap() < 1e-20);
        let traj = integrate_flow(&field, &x0, curves.n_segments).unwrap();
        let pts = curves.points().unwrap();
        for k in 0..=curves.n_segments {
            assert!(linalg::dist(traj[0].row(k), pts.row(k)) < 1e-12);
        }
    }

    #[test]
    fn identical_populations_stay_put() {
        let mut r = rng::seeded(2);
        let x = rng::normal_matrix(&mut r, 24, 2);
        let warped = WarpedEncoder::new(id(2), crate::diffnet::LinearMap { a: Matrix::zeros(1, 2) }, 1.0).unwrap();
        let cfg = TransportConfig {
            batch_size: 24,
            steps: 150,
            bump_hidden: vec![16],
            field_hidden: vec![16, 16],
            n_segments: 10,
            lr: 3e-3,
            ..Default::default()
        };
        let trained = train_transport(&x, &x, &warped, &cfg).unwrap();
        let traj = integrate_flow(&trained.field, &x, cfg.euler_steps).unwrap();
        let moved: f64 = traj.iter().map(|t| linalg::dist(t.row(0), t.row(cfg.euler_steps))).sum::<f64>() / 24.0;
        let diameter = (0..24)
            .flat_map(|i| (0..24).map(move |j| (i, j)))
            .map(|(i, j)| linalg::dist(x.row(i), x.row(j)))
            .fold(0.0, f64::max);
        assert!(moved < 0.05 * diameter, "moved {moved} vs diameter {diameter}");
        let again = train_transport(&x, &x, &warped, &cfg).unwrap();
        assert_eq!(trained, again);
    }
}
