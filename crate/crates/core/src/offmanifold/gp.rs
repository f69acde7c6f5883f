//! Posterior variance of a unit-amplitude RBF Gaussian process.

use serde::{Deserialize, Serialize};

use crate::diffnet::{DiffMap, Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::prelude::*;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpConfig {
    /// Kernel bandwidth; derived from the inducing set when absent.
    pub sigma: Option<f64>,
    /// Observation noise standard deviation.
    pub sigma_n: f64,
    pub max_inducing: usize,
    /// Bandwidth as a multiple of the median nearest-neighbour spacing of
    /// the inducing points.
    pub bandwidth_scale: f64,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig { sigma: None, sigma_n: 1e-2, max_inducing: 100, bandwidth_scale: 1.0, seed: 0 }
    }
}

/// `s(x) = 1 - k(x)^T (K + sigma_n^2 I)^{-1} k(x)` with
/// `k_i(x) = exp(-|x - z_i|^2 / (2 sigma^2))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpScorer {
    pub sigma: f64,
    pub sigma_n: f64,
    pub inducing: Matrix,
    /// `(K + sigma_n^2 I)^{-1}`.
    pub solve: Matrix,
}

/// Smallest admissible squared Cholesky pivot, relative to the unit diagonal.
const MIN_PIVOT: f64 = 1e-12;

impl GpScorer {
    /// Factorizes the kernel system of the given inducing points.
    pub fn new(inducing: Matrix, sigma: f64, sigma_n: f64) -> Result<Self> {
        if inducing.rows() == 0 {
            return Err(Error::InsufficientData("GP needs at least one point".to_string()));
        }
        if !(sigma > 0.0) || !(sigma_n >= 0.0) {
            return Err(Error::contract("sigma must be positive and sigma_n non-negative"));
        }
        let m = inducing.rows();
        let mut k = Matrix::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let v = (-linalg::sq_dist(inducing.row(i), inducing.row(j)) / (2.0 * sigma * sigma)).exp();
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
            k[(i, i)] += sigma_n * sigma_n;
        }
        let chol = k
            .to_nalgebra()
            .cholesky()
            .ok_or_else(|| Error::Conditioning("kernel system is not positive definite".to_string()))?;
        let l = chol.l_dirty();
        if let Some(i) = (0..m).find(|&i| l[(i, i)] * l[(i, i)] < MIN_PIVOT) {
            return Err(Error::Conditioning(format!(
                "kernel system is numerically singular at pivot {i} (duplicate points or sigma_n too small)"
            )));
        }
        let solve = Matrix::from_nalgebra(&chol.inverse());
        Ok(GpScorer { sigma, sigma_n, inducing, solve })
    }

    /// Picks up to `max_inducing` points by farthest-point sampling, sets the
    /// bandwidth and factorizes.
    pub fn fit(data: &Matrix, config: &GpConfig) -> Result<Self> {
        if data.rows() == 0 {
            return Err(Error::InsufficientData("GP needs at least one point".to_string()));
        }
        if config.max_inducing == 0 || config.max_inducing > 1000 {
            return Err(Error::contract("max_inducing must lie in 1..=1000"));
        }
        let idx = farthest_point_sample(data, config.max_inducing, config.seed);
        let inducing = data.select_rows(&idx);
        let sigma = match config.sigma {
            Some(s) => s,
            None => config.bandwidth_scale * median_nn_spacing(&inducing)?,
        };
        GpScorer::new(inducing, sigma, config.sigma_n)
    }

    pub fn input_dim(&self) -> usize {
        self.inducing.cols()
    }

    fn kernel_rows(&self, x: &Matrix) -> Matrix {
        let (b, m) = (x.rows(), self.inducing.rows());
        let mut k = Matrix::zeros(b, m);
        let inv = 1.0 / (2.0 * self.sigma * self.sigma);
        for i in 0..b {
            for j in 0..m {
                k[(i, j)] = (-linalg::sq_dist(x.row(i), self.inducing.row(j)) * inv).exp();
            }
        }
        k
    }

    /// Scores and gradients for every row of `x`.
    pub fn variance_and_gradient(&self, x: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        if x.cols() != self.input_dim() {
            return Err(Error::InputDim { expected: self.input_dim(), got: x.cols() });
        }
        let k = self.kernel_rows(x);
        let w = k.hadamard(&k.matmul(&self.solve));
        let s = w.row_iter().map(|r| (1.0 - r.iter().sum::<f64>()).clamp(0.0, 1.0)).collect();
        // grad s = (2 / sigma^2) * sum_i w_i (x - z_i)
        let c = 2.0 / (self.sigma * self.sigma);
        let wz = w.matmul(&self.inducing);
        let mut g = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            let tot: f64 = w.row(i).iter().sum();
            for j in 0..x.cols() {
                g[(i, j)] = c * (tot * x[(i, j)] - wz[(i, j)]);
            }
        }
        Ok((s, g))
    }

    pub fn variance(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self.variance_and_gradient(x)?.0)
    }

    pub fn gradient(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.variance_and_gradient(x)?.1)
    }
}

impl DiffMap for GpScorer {
    fn input_dim(&self) -> usize {
        self.inducing.cols()
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn record(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        if tape.value(x).cols() != self.input_dim() {
            return Err(Error::InputDim { expected: self.input_dim(), got: tape.value(x).cols() });
        }
        let fwd = self.clone();
        let back = self.clone();
        Ok(tape.custom(
            &[x],
            move |ins| Matrix::column_vector(&fwd.variance(ins[0]).expect("dimension checked at record time")),
            move |ins, _, g| {
                let mut grad = back.gradient(ins[0]).expect("dimension checked at record time");
                for i in 0..grad.rows() {
                    let gi = g[(i, 0)];
                    grad.row_mut(i).iter_mut().for_each(|v| *v *= gi);
                }
                vec![grad]
            },
        ))
    }
}

/// Greedy farthest-point sampling from a seeded start; returns all indices
/// when `m >= n`.
pub fn farthest_point_sample(x: &Matrix, m: usize, seed: u64) -> Vec<usize> {
    let n = x.rows();
    if m >= n {
        return (0..n).collect();
    }
    let start = rng::permutation(&mut rng::stream(seed, 0xf95), n)[0];
    let mut chosen = vec![start];
    let mut d: Vec<f64> = (0..n).map(|i| linalg::sq_dist(x.row(i), x.row(start))).collect();
    while chosen.len() < m {
        let next = (0..n).fold(0, |best, i| if d[i] > d[best] { i } else { best });
        chosen.push(next);
        for (i, di) in d.iter_mut().enumerate() {
            *di = di.min(linalg::sq_dist(x.row(i), x.row(next)));
        }
    }
    chosen
}

/// Median distance from each point to its nearest neighbour.
pub fn median_nn_spacing(x: &Matrix) -> Result<f64> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::InsufficientData("need two points for a spacing".to_string()));
    }
    let nn: Vec<f64> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i).map(|j| linalg::dist(x.row(i), x.row(j))).fold(f64::INFINITY, f64::min))
        .collect();
    let h = linalg::quantile(&nn, 0.5);
    if !(h > 0.0) {
        return Err(Error::Conditioning("duplicate points give zero spacing".to_string()));
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::scalar_gradients;

    #[test]
    fn single_point_closed_form() {
        let z = Matrix::from_rows(&[[0.5, -1.0]]).unwrap();
        let (sigma, sn) = (0.8, 0.1);
        let gp = GpScorer::new(z, sigma, sn).unwrap();
        for r in [0.0, 0.3, 1.0, 2.5] {
            let x = Matrix::from_rows(&[[0.5 + r, -1.0]]).unwrap();
            let expected = 1.0 - (-r * r / (sigma * sigma)).exp() / (1.0 + sn * sn);
            assert!((gp.variance(&x).unwrap()[0] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn exact_interpolation_without_noise() {
        let z = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.5]]).unwrap();
        let gp = GpScorer::new(z.clone(), 0.7, 0.0).unwrap();
        for s in gp.variance(&z).unwrap() {
            assert!(s < 1e-12);
        }
        let g = gp.gradient(&z).unwrap();
        assert!(g.max_abs() < 1e-9, "{g:?}");
    }

    #[test]
    fn far_queries_approach_one() {
        let gp = GpScorer::new(Matrix::from_rows(&[[0.0, 0.0], [0.2, 0.1]]).unwrap(), 0.5, 0.01).unwrap();
        let s = gp.variance(&Matrix::from_rows(&[[40.0, -30.0]]).unwrap()).unwrap()[0];
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_points_without_noise_are_rejected() {
        let z = Matrix::from_rows(&[[0.0, 1.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(GpScorer::new(z, 1.0, 0.0), Err(Error::Conditioning(_))));
    }

    #[test]
    fn training_points_respect_noise_floor() {
        let mut r = rng::seeded(3);
        let z = rng::normal_matrix(&mut r, 40, 3);
        let sn: f64 = 0.05;
        let gp = GpScorer::new(z.clone(), 0.9, sn).unwrap();
        for s in gp.variance(&z).unwrap() {
            assert!(s <= sn * sn / (1.0 + sn * sn) + 1e-9);
            assert!((0.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut r = rng::seeded(5);
        let z = rng::normal_matrix(&mut r, 30, 3);
        let gp = GpScorer::new(z, 0.8, 0.01).unwrap();
        let x = rng::normal_matrix(&mut r, 20, 3).scale(1.2);
        let g = gp.gradient(&x).unwrap();
        let h = 1e-6;
        for i in 0..x.rows() {
            for j in 0..3 {
                let mut xp = Matrix::row_vector(x.row(i));
                let mut xm = xp.clone();
                xp[(0, j)] += h;
                xm[(0, j)] -= h;
                let fd = (gp.variance(&xp).unwrap()[0] - gp.variance(&xm).unwrap()[0]) / (2.0 * h);
                assert!((fd - g[(i, j)]).abs() <= 1e-5 * fd.abs().max(1e-3), "{fd} vs {}", g[(i, j)]);
            }
        }
    }

    #[test]
    fn gradient_points_away_from_a_lone_point() {
        let gp = GpScorer::new(Matrix::from_rows(&[[1.0, 1.0, 1.0]]).unwrap(), 1.0, 0.01).unwrap();
        let x = Matrix::from_rows(&[[1.5, 0.7, 1.2]]).unwrap();
        let g = gp.gradient(&x).unwrap();
        assert!(linalg::dot(g.row(0), &[0.5, -0.3, 0.2]) > 0.0);
    }

    #[test]
    fn tape_record_matches_analytic_gradient() {
        let mut r = rng::seeded(6);
        let gp = GpScorer::new(rng::normal_matrix(&mut r, 12, 2), 0.6, 0.01).unwrap();
        let x = rng::normal_matrix(&mut r, 5, 2);
        let (v, g) = scalar_gradients(&gp, &x).unwrap();
        let (v2, g2) = gp.variance_and_gradient(&x).unwrap();
        assert_eq!(v, v2);
        assert_eq!(g, g2);
    }

    #[test]
    fn permuting_training_points_keeps_scores() {
        let mut r = rng::seeded(7);
        let z = rng::normal_matrix(&mut r, 15, 3);
        let perm = rng::permutation(&mut r, 15);
        let a = GpScorer::new(z.clone(), 0.8, 0.01).unwrap();
        let b = GpScorer::new(z.select_rows(&perm), 0.8, 0.01).unwrap();
        let x = rng::normal_matrix(&mut r, 10, 3);
        for (p, q) in a.variance(&x).unwrap().iter().zip(b.variance(&x).unwrap()) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn farthest_points_spread_out() {
        let x = Matrix::from_rows(&[[0.0], [0.1], [0.2], [5.0], [10.0]]).unwrap();
        let mut idx = farthest_point_sample(&x, 3, 1);
        idx.sort();
        assert_eq!(idx.len(), 3);
        assert!(idx.contains(&3) && idx.contains(&4), "{idx:?}");
        assert_eq!(farthest_point_sample(&x, 10, 1), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn fit_caps_inducing_set() {
        let mut r = rng::seeded(8);
        let x = rng::normal_matrix(&mut r, 300, 3);
        let gp = GpScorer::fit(&x, &GpConfig { max_inducing: 50, ..Default::default() }).unwrap();
        assert_eq!(gp.inducing.rows(), 50);
        assert!(GpScorer::fit(&x, &GpConfig { max_inducing: 2000, ..Default::default() }).is_err());
    }
}
