//! Reverse-mode differentiation, feed-forward networks and AdamW.

mod mlp;
mod optim;
mod tape;

pub use mlp::{Layer, MlpConfig, MlpModel, MlpVars, Mode, Norm, Recorded, BN_EPS};
pub use optim::{AdamW, OptimizerState};
pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::prelude::*;

/// A differentiable map from row vectors in `R^input_dim` to `R^output_dim`.
///
/// `record` must treat rows independently: row `i` of the output depends only
/// on row `i` of the input. Batched Jacobians rely on this.
pub trait DiffMap {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    /// Records the deterministic forward pass of a batch (B x input_dim).
    fn record(&self, tape: &mut Tape, x: Var) -> Result<Var>;

    /// Fails with [`Error::Nondeterministic`] when the map is not frozen.
    fn check_eval(&self) -> Result<()> {
        Ok(())
    }

    fn eval_batch(&self, x: &Matrix) -> Result<Matrix> {
        self.check_eval()?;
        if x.cols() != self.input_dim() {
            return Err(Error::InputDim { expected: self.input_dim(), got: x.cols() });
        }
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = self.record(&mut tape, xv)?;
        Ok(tape.value(out).clone())
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eval_batch(&Matrix::row_vector(x))?.into_vec())
    }
}

/// A linear map `x -> A x` (A is out x in).
#[derive(Clone, Debug, PartialEq)]
pub struct LinearMap {
    pub a: Matrix,
}

impl DiffMap for LinearMap {
    fn input_dim(&self) -> usize {
        self.a.cols()
    }

    fn output_dim(&self) -> usize {
        self.a.rows()
    }

    fn record(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.constant(self.a.clone());
        let b = tape.constant(Matrix::zeros(1, self.a.rows()));
        tape.linear(x, w, b)
    }
}

/// Value and gradients of a scalar function of several matrix parameters.
pub fn gradient<F>(f: F, params: &[Matrix]) -> Result<(f64, Vec<Matrix>)>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    Ok((tape.value(out).item(), vars.iter().map(|v| grads.wrt(*v)).collect()))
}

/// Jacobian (m x n) of a vector function recorded on the tape, at `x`.
pub fn jacobian<F>(f: F, x: &[f64]) -> Result<Matrix>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(Matrix::row_vector(x));
    let out = f(&mut tape, xv)?;
    let y = tape.value(out);
    if y.rows() != 1 {
        return Err(Error::shape("jacobian expects a single-row output"));
    }
    let m = y.cols();
    let mut jac = Matrix::zeros(m, x.len());
    for k in 0..m {
        let mut seed = Matrix::zeros(1, m);
        seed[(0, k)] = 1.0;
        let g = tape.backward_seeded(out, seed);
        jac.row_mut(k).copy_from_slice(g.wrt(xv).data());
    }
    Ok(jac)
}

pub fn map_jacobian<M: DiffMap + ?Sized>(map: &M, x: &[f64]) -> Result<Matrix> {
    map.check_eval()?;
    if x.len() != map.input_dim() {
        return Err(Error::InputDim { expected: map.input_dim(), got: x.len() });
    }
    jacobian(|t, v| map.record(t, v), x)
}

/// Jacobians at every row of `xs`, using one forward pass and
/// `output_dim` backward passes over the whole batch.
pub fn batch_jacobians<M: DiffMap + ?Sized>(map: &M, xs: &Matrix) -> Result<Vec<Matrix>> {
    map.check_eval()?;
    if xs.cols() != map.input_dim() {
        return Err(Error::InputDim { expected: map.input_dim(), got: xs.cols() });
    }
    let mut tape = Tape::new();
    let xv = tape.leaf(xs.clone());
    let out = map.record(&mut tape, xv)?;
    let (b, m) = tape.value(out).shape();
    let n = xs.cols();
    let mut jacs = vec![Matrix::zeros(m, n); b];
    for k in 0..m {
        let mut seed = Matrix::zeros(b, m);
        for i in 0..b {
            seed[(i, k)] = 1.0;
        }
        let g = tape.backward_seeded(out, seed).wrt(xv);
        for (i, jac) in jacs.iter_mut().enumerate() {
            jac.row_mut(k).copy_from_slice(g.row(i));
        }
    }
    Ok(jacs)
}

/// Values and input gradients (B x input_dim) of a scalar-valued map at
/// every row of `xs`, from one forward and one backward pass.
pub fn scalar_gradients<M: DiffMap + ?Sized>(map: &M, xs: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    map.check_eval()?;
    if map.output_dim() != 1 {
        return Err(Error::contract("scalar_gradients needs a map with one output"));
    }
    if xs.cols() != map.input_dim() {
        return Err(Error::InputDim { expected: map.input_dim(), got: xs.cols() });
    }
    let mut tape = Tape::new();
    let xv = tape.leaf(xs.clone());
    let out = map.record(&mut tape, xv)?;
    let values = tape.value(out).data().to_vec();
    let g = tape.backward_seeded(out, Matrix::filled(xs.rows(), 1, 1.0)).wrt(xv);
    Ok((values, g))
}
