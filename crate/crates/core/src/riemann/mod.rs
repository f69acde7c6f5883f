//! Pullback metrics `J^T J`, volume elements and the log-volume gradient
//! that steers Langevin generation.

use serde::{Deserialize, Serialize};

use crate::diffnet::{batch_jacobians, map_jacobian, DiffMap};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::prelude::*;

/// Below this, the d-th singular value counts as zero.
pub const DEGENERATE_SINGULAR_VALUE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// Pulled back through the encoder.
    OnManifold,
    /// Pulled back through the extended encoder.
    Warped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricTensor {
    pub g: Matrix,
    pub base_point: Vec<f64>,
    pub kind: MetricKind,
}

impl MetricTensor {
    pub fn dim(&self) -> usize {
        self.g.rows()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.g.symmetric_eigenvalues()
    }
}

pub fn metric_from_jacobian(j: &Matrix, base_point: &[f64], kind: MetricKind) -> MetricTensor {
    let mut g = j.matmul_tn(j);
    // J^T J is symmetric in exact arithmetic; make it so bitwise
    let n = g.rows();
    for a in 0..n {
        for b in 0..a {
            let m = 0.5 * (g[(a, b)] + g[(b, a)]);
            g[(a, b)] = m;
            g[(b, a)] = m;
        }
    }
    MetricTensor { g, base_point: base_point.to_vec(), kind }
}

/// `J(x)^T J(x)` for the given map at `x`.
pub fn pullback_metric<M: DiffMap + ?Sized>(map: &M, x: &[f64], kind: MetricKind) -> Result<MetricTensor> {
    let j = map_jacobian(map, x)?;
    Ok(metric_from_jacobian(&j, x, kind))
}

/// `X^T g Y`, evaluated symmetrically so that swapping the arguments gives
/// the identical float.
pub fn metric_inner(m: &MetricTensor, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != m.dim() || y.len() != m.dim() {
        return Err(Error::shape(format!("tangent vectors must have length {}", m.dim())));
    }
    Ok(0.5 * (linalg::dot(x, &m.g.matvec(y)) + linalg::dot(y, &m.g.matvec(x))))
}

/// Eigenvalues of a small symmetric positive semi-definite matrix, descending.
fn gram_eigenvalues(g: &Matrix) -> Vec<f64> {
    match g.rows() {
        1 => vec![g[(0, 0)]],
        2 => {
            let (a, b, c) = (g[(0, 0)], g[(0, 1)], g[(1, 1)]);
            let mid = 0.5 * (a + c);
            let r = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            vec![mid + r, mid - r]
        }
        _ => {
            let mut e = g.symmetric_eigenvalues();
            e.reverse();
            e
        }
    }
}

/// Product of the `d` largest singular values of `j`; 0 when the `d`-th
/// falls below [`DEGENERATE_SINGULAR_VALUE`].
pub fn volume_from_jacobian(j: &Matrix, d: usize) -> Result<f64> {
    let (m, n) = j.shape();
    if d == 0 || d > m.min(n) {
        return Err(Error::contract(format!("intrinsic dimension must lie in 1..={}", m.min(n))));
    }
    let gram = if m <= n { j.matmul_nt(j) } else { j.matmul_tn(j) };
    let ev = gram_eigenvalues(&gram);
    let sv: Vec<f64> = ev.iter().take(d).map(|e| e.max(0.0).sqrt()).collect();
    if sv[d - 1] < DEGENERATE_SINGULAR_VALUE {
        return Ok(0.0);
    }
    Ok(sv.iter().product())
}

pub fn volume_element<M: DiffMap + ?Sized>(map: &M, x: &[f64], d: usize) -> Result<f64> {
    volume_from_jacobian(&map_jacobian(map, x)?, d)
}

/// Rows per Jacobian batch; larger batches spill out of cache.
const JACOBIAN_CHUNK: usize = 256;

/// Volume elements at every row of `xs`.
pub fn volume_elements<M: DiffMap + ?Sized>(map: &M, xs: &Matrix, d: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(xs.rows());
    for start in (0..xs.rows()).step_by(JACOBIAN_CHUNK) {
        let idx: Vec<usize> = (start..(start + JACOBIAN_CHUNK).min(xs.rows())).collect();
        for j in batch_jacobians(map, &xs.select_rows(&idx))? {
            out.push(volume_from_jacobian(&j, d)?);
        }
    }
    Ok(out)
}

/// Central-difference step for the log-volume gradient at `x`.
pub fn fd_step(x: &[f64]) -> f64 {
    1e-4 * (1.0 + linalg::norm(x))
}

pub fn log_volume_gradient<M: DiffMap + ?Sized>(map: &M, x: &[f64], d: usize) -> Result<Vec<f64>> {
    Ok(log_volume_gradients(map, &Matrix::row_vector(x), d)?.into_vec())
}

/// Central finite differences of `log f_vol` at every row of `xs`, with all
/// `2 D` stencil points of all rows evaluated in one batch.
pub fn log_volume_gradients<M: DiffMap + ?Sized>(map: &M, xs: &Matrix, d: usize) -> Result<Matrix> {
    let steps: Vec<f64> = xs.row_iter().map(fd_step).collect();
    central_log_volume(map, xs, d, &steps)
}

/// Central differences of `log f_vol` with a fixed, deliberately wide step.
///
/// A ReLU encoder is piecewise linear, so its volume element is piecewise
/// constant: the exact gradient vanishes almost everywhere and a tiny step
/// only sees spikes where the stencil straddles a kink. A step spanning
/// many linear regions instead differentiates a smoothed log-volume.
pub fn smoothed_log_volume_gradients<M: DiffMap + ?Sized>(map: &M, xs: &Matrix, d: usize, step: f64) -> Result<Matrix> {
    if !(step > 0.0) {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    central_log_volume(map, xs, d, &vec![step; xs.rows()])
}

fn central_log_volume<M: DiffMap + ?Sized>(map: &M, xs: &Matrix, d: usize, steps: &[f64]) -> Result<Matrix> {
    let (b, dim) = xs.shape();
    let mut stencil = Matrix::zeros(2 * dim * b, dim);
    for (i, &h) in steps.iter().enumerate().take(b) {
        for k in 0..dim {
            for (s, sign) in [1.0, -1.0].into_iter().enumerate() {
                let row = stencil.row_mut((i * dim + k) * 2 + s);
                row.copy_from_slice(xs.row(i));
                row[k] += sign * h;
            }
        }
    }
    let vols = volume_elements(map, &stencil, d)?;
    let mut out = Matrix::zeros(b, dim);
    for i in 0..b {
        for k in 0..dim {
            let (p, m) = (vols[(i * dim + k) * 2], vols[(i * dim + k) * 2 + 1]);
            if p <= 0.0 || m <= 0.0 {
                return Err(Error::Conditioning(format!("degenerate Jacobian in the stencil around row {i}")));
            }
            out[(i, k)] = (p.ln() - m.ln()) / (2.0 * steps[i]);
        }
    }
    Ok(out)
}
