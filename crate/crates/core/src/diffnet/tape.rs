//! Matrix-valued reverse-mode tape.
//!
//! Nodes are appended in evaluation order, so node indices are a topological
//! order: every input of node `i` has an index `< i`. The backward pass walks
//! the indices downwards once, accumulating adjoints.

use core::fmt;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::prelude::*;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type ForwardFn = Box<dyn Fn(&[&Matrix]) -> Matrix>;
type VjpFn = Box<dyn Fn(&[&Matrix], &Matrix, &Matrix) -> Vec<Matrix>>;

enum Op {
    Leaf,
    /// `x * w^T + b`, `w` stored as (out x in), `b` as a 1 x out row.
    Linear(Var, Var, Var),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    AddScalar(Var, Var),
    Scale(Var, f64),
    Shift(Var, f64),
    MulConst(Var, Matrix),
    AddConst(Var, Matrix),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    SelectRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    /// Column-wise standardization with batch statistics.
    BatchNorm(Var, f64),
    Custom(Vec<Var>, ForwardFn, VjpFn),
}

struct Node {
    op: Op,
    value: Matrix,
    /// Whether any leaf feeds this node; untracked nodes get no adjoint.
    tracked: bool,
}

/// Operation record for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.adjoints.get(v.0).and_then(|a| a.as_ref())
    }

    /// Gradient with respect to `v`; zeros when `v` does not influence the output.
    pub fn wrt(&self, v: Var) -> Matrix {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

fn same_shape(a: &Matrix, b: &Matrix, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Matrix, tracked: bool) -> Var {
        self.nodes.push(Node { op, value, tracked });
        Var(self.nodes.len() - 1)
    }

    fn push_computed(&mut self, op: Op) -> Var {
        let value = self.compute(&op);
        let tracked = self.inputs(&op).iter().any(|v| self.nodes[v.0].tracked);
        self.push(op, value, tracked)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// A non-differentiable input; its gradient reads as zero.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value, false)
    }

    fn inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => Vec::new(),
            Op::Linear(a, b, c) => vec![*a, *b, *c],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b)
            | Op::AddScalar(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Shift(a, _)
            | Op::MulConst(a, _)
            | Op::AddConst(a, _)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sqrt(a)
            | Op::Square(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::RowSum(a)
            | Op::SelectRows(a, _)
            | Op::SliceCols(a, _, _)
            | Op::BatchNorm(a, _) => vec![*a],
            Op::ConcatCols(parts) | Op::Custom(parts, ..) => parts.clone(),
        }
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.cols() != wv.cols() {
            return Err(Error::InputDim { expected: wv.cols(), got: xv.cols() });
        }
        if bv.shape() != (1, wv.rows()) {
            return Err(Error::shape("linear bias must be 1 x out"));
        }
        Ok(self.push_computed(Op::Linear(x, w, b)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).cols() != self.value(b).rows() {
            return Err(Error::shape("matmul inner dimensions differ"));
        }
        Ok(self.push_computed(Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "add")?;
        Ok(self.push_computed(Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "sub")?;
        Ok(self.push_computed(Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "mul")?;
        Ok(self.push_computed(Op::Mul(a, b)))
    }

    /// Adds a 1 x n row to every row of a B x n matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        if self.value(row).shape() != (1, self.value(a).cols()) {
            return Err(Error::shape("add_row expects a 1 x n row"));
        }
        Ok(self.push_computed(Op::AddRow(a, row)))
    }

    /// Multiplies every row of a B x n matrix elementwise by a 1 x n row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        if self.value(row).shape() != (1, self.value(a).cols()) {
            return Err(Error::shape("mul_row expects a 1 x n row"));
        }
        Ok(self.push_computed(Op::MulRow(a, row)))
    }

    /// Adds a 1 x 1 variable to every entry.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).shape() != (1, 1) {
            return Err(Error::shape("add_scalar expects a 1 x 1 operand"));
        }
        Ok(self.push_computed(Op::AddScalar(a, s)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.push_computed(Op::Scale(a, s))
    }

    pub fn shift(&mut self, a: Var, s: f64) -> Var {
        self.push_computed(Op::Shift(a, s))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn mul_const(&mut self, a: Var, c: Matrix) -> Result<Var> {
        same_shape(self.value(a), &c, "mul_const")?;
        Ok(self.push_computed(Op::MulConst(a, c)))
    }

    pub fn add_const(&mut self, a: Var, c: Matrix) -> Result<Var> {
        same_shape(self.value(a), &c, "add_const")?;
        Ok(self.push_computed(Op::AddConst(a, c)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.push_computed(Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.push_computed(Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.push_computed(Op::Log(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.push_computed(Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.push_computed(Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.push_computed(Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        self.push_computed(Op::Mean(a))
    }

    /// B x n -> B x 1.
    pub fn row_sum(&mut self, a: Var) -> Var {
        self.push_computed(Op::RowSum(a))
    }

    pub fn select_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let rows = self.value(a).rows();
        if let Some(bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::shape(format!("row index {bad} out of range {rows}")));
        }
        Ok(self.push_computed(Op::SelectRows(a, idx)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|p| self.value(*p).rows()).unwrap_or(0);
        if parts.iter().any(|p| self.value(*p).rows() != rows) {
            return Err(Error::shape("concat_cols row counts differ"));
        }
        Ok(self.push_computed(Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        if start > end || end > self.value(a).cols() {
            return Err(Error::shape("slice_cols range out of bounds"));
        }
        Ok(self.push_computed(Op::SliceCols(a, start, end)))
    }

    /// `(x - mean) / sqrt(var + eps)` per column, statistics over rows.
    pub fn batch_norm(&mut self, a: Var, eps: f64) -> Var {
        self.push_computed(Op::BatchNorm(a, eps))
    }

    /// Rows `1..n` minus rows `0..n-1`.
    pub fn row_diff(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).rows();
        if n < 2 {
            return Err(Error::shape("row_diff needs at least two rows"));
        }
        let hi = self.select_rows(a, (1..n).collect())?;
        let lo = self.select_rows(a, (0..n - 1).collect())?;
        self.sub(hi, lo)
    }

    /// Records an operation with a caller-supplied forward map and
    /// vector-Jacobian product `vjp(inputs, output, output_adjoint)`.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        forward: impl Fn(&[&Matrix]) -> Matrix + 'static,
        vjp: impl Fn(&[&Matrix], &Matrix, &Matrix) -> Vec<Matrix> + 'static,
    ) -> Var {
        self.push_computed(Op::Custom(inputs.to_vec(), Box::new(forward), Box::new(vjp)))
    }

    fn compute(&self, op: &Op) -> Matrix {
        let v = |x: &Var| &self.nodes[x.0].value;
        match op {
            Op::Leaf => unreachable!("leaves carry their own value"),
            Op::Linear(x, w, b) => {
                let mut out = v(x).matmul_nt(v(w));
                let bias = v(b).data();
                for i in 0..out.rows() {
                    for (o, bb) in out.row_mut(i).iter_mut().zip(bias) {
                        *o += bb;
                    }
                }
                out
            }
            Op::MatMul(a, b) => v(a).matmul(v(b)),
            Op::Add(a, b) => v(a).add(v(b)),
            Op::Sub(a, b) => v(a).sub(v(b)),
            Op::Mul(a, b) => v(a).hadamard(v(b)),
            Op::AddRow(a, r) | Op::MulRow(a, r) => {
                let mut out = v(a).clone();
                let row = v(r).data();
                let is_add = matches!(op, Op::AddRow(..));
                for i in 0..out.rows() {
                    for (o, rr) in out.row_mut(i).iter_mut().zip(row) {
                        if is_add {
                            *o += rr;
                        } else {
                            *o *= rr;
                        }
                    }
                }
                out
            }
            Op::AddScalar(a, s) => {
                let s = v(s).item();
                v(a).map(|x| x + s)
            }
            Op::Scale(a, s) => v(a).scale(*s),
            Op::Shift(a, s) => v(a).map(|x| x + s),
            Op::MulConst(a, c) => v(a).hadamard(c),
            Op::AddConst(a, c) => v(a).add(c),
            Op::Relu(a) => v(a).map(|x| if x > 0.0 { x } else { 0.0 }),
            Op::Exp(a) => v(a).map(|x| x.exp()),
            Op::Log(a) => v(a).map(|x| x.ln()),
            Op::Sqrt(a) => v(a).map(|x| x.sqrt()),
            Op::Square(a) => v(a).map(|x| x * x),
            Op::Sum(a) => Matrix::scalar(v(a).sum()),
            Op::Mean(a) => Matrix::scalar(v(a).mean()),
            Op::RowSum(a) => {
                let m = v(a);
                Matrix::column_vector(&m.row_iter().map(|r| r.iter().sum()).collect::<Vec<f64>>())
            }
            Op::SelectRows(a, idx) => v(a).select_rows(idx),
            Op::ConcatCols(parts) => {
                let mats: Vec<&Matrix> = parts.iter().map(v).collect();
                Matrix::hstack(&mats).expect("shapes validated at record time")
            }
            Op::SliceCols(a, s, e) => v(a).select_cols(&(*s..*e).collect::<Vec<_>>()),
            Op::BatchNorm(a, eps) => {
                let (mean, inv_std) = column_stats(v(a), *eps);
                normalize(v(a), &mean, &inv_std)
            }
            Op::Custom(inputs, forward, _) => {
                let ins: Vec<&Matrix> = inputs.iter().map(v).collect();
                forward(&ins)
            }
        }
    }

    /// Recomputes every non-leaf node from its inputs and checks that the
    /// recorded values are reproduced bit for bit.
    pub fn replay_matches(&self) -> bool {
        self.nodes.iter().all(|node| match node.op {
            Op::Leaf => true,
            ref op => {
                let again = self.compute(op);
                again.shape() == node.value.shape()
                    && again.data().iter().zip(node.value.data()).all(|(a, b)| a.to_bits() == b.to_bits())
            }
        })
    }

    /// Reverse pass from a 1 x 1 output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let shape = self.value(output).shape();
        if shape != (1, 1) {
            return Err(Error::contract(format!("backward needs a scalar output, got {shape:?}")));
        }
        Ok(self.backward_seeded(output, Matrix::scalar(1.0)))
    }

    /// Reverse pass with an explicit output adjoint (vector-Jacobian product).
    pub fn backward_seeded(&self, output: Var, seed: Matrix) -> Gradients {
        assert_eq!(seed.shape(), self.value(output).shape(), "seed shape must match output");
        let n = output.0 + 1;
        let mut adj: Vec<Option<Matrix>> = (0..n).map(|_| None).collect();
        adj[output.0] = Some(seed);

        for i in (0..n).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let val = |x: &Var| &self.nodes[x.0].value;
            let live = |x: &Var| self.nodes[x.0].tracked;
            let send = |adj: &mut Vec<Option<Matrix>>, to: Var, d: Matrix| {
                if !self.nodes[to.0].tracked {
                    return;
                }
                match &mut adj[to.0] {
                    Some(acc) => acc.add_assign(&d),
                    slot @ None => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Linear(x, w, b) => {
                    if live(x) {
                        send(&mut adj, *x, g.matmul(val(w)));
                    }
                    if live(w) {
                        send(&mut adj, *w, g.matmul_tn(val(x)));
                    }
                    if live(b) {
                        send(&mut adj, *b, Matrix::row_vector(&column_sums(&g)));
                    }
                }
                Op::MatMul(a, b) => {
                    if live(a) {
                        send(&mut adj, *a, g.matmul_nt(val(b)));
                    }
                    if live(b) {
                        send(&mut adj, *b, val(a).matmul_tn(&g));
                    }
                }
                Op::Add(a, b) => {
                    send(&mut adj, *a, g.clone());
                    send(&mut adj, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    send(&mut adj, *b, g.scale(-1.0));
                    send(&mut adj, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    send(&mut adj, *a, g.hadamard(val(b)));
                    send(&mut adj, *b, g.hadamard(val(a)));
                }
                Op::AddRow(a, r) => {
                    send(&mut adj, *r, Matrix::row_vector(&column_sums(&g)));
                    send(&mut adj, *a, g.clone());
                }
                Op::MulRow(a, r) => {
                    if live(r) {
                        send(&mut adj, *r, Matrix::row_vector(&column_sums(&g.hadamard(val(a)))));
                    }
                    let row = val(r).data();
                    let mut da = g.clone();
                    for k in 0..da.rows() {
                        for (d, rr) in da.row_mut(k).iter_mut().zip(row) {
                            *d *= rr;
                        }
                    }
                    send(&mut adj, *a, da);
                }
                Op::AddScalar(a, s) => {
                    send(&mut adj, *s, Matrix::scalar(g.sum()));
                    send(&mut adj, *a, g.clone());
                }
                Op::Scale(a, s) => send(&mut adj, *a, g.scale(*s)),
                Op::Shift(a, _) | Op::AddConst(a, _) => send(&mut adj, *a, g.clone()),
                Op::MulConst(a, c) => send(&mut adj, *a, g.hadamard(c)),
                Op::Relu(a) => send(&mut adj, *a, g.zip_map(val(a), |d, x| if x > 0.0 { d } else { 0.0 })),
                Op::Exp(a) => send(&mut adj, *a, g.hadamard(&node.value)),
                Op::Log(a) => send(&mut adj, *a, g.zip_map(val(a), |d, x| d / x)),
                Op::Sqrt(a) => {
                    // subgradient 0 at the origin
                    send(&mut adj, *a, g.zip_map(&node.value, |d, y| if y > 0.0 { d / (2.0 * y) } else { 0.0 }))
                }
                Op::Square(a) => send(&mut adj, *a, g.zip_map(val(a), |d, x| 2.0 * d * x)),
                Op::Sum(a) => {
                    let (r, c) = val(a).shape();
                    send(&mut adj, *a, Matrix::filled(r, c, g.item()))
                }
                Op::Mean(a) => {
                    let (r, c) = val(a).shape();
                    send(&mut adj, *a, Matrix::filled(r, c, g.item() / (r * c) as f64))
                }
                Op::RowSum(a) => {
                    let (r, c) = val(a).shape();
                    let mut d = Matrix::zeros(r, c);
                    for k in 0..r {
                        let gk = g[(k, 0)];
                        d.row_mut(k).iter_mut().for_each(|x| *x = gk);
                    }
                    send(&mut adj, *a, d)
                }
                Op::SelectRows(a, idx) => {
                    let (r, c) = val(a).shape();
                    let mut d = Matrix::zeros(r, c);
                    for (k, &src) in idx.iter().enumerate() {
                        for (dst, gg) in d.row_mut(src).iter_mut().zip(g.row(k)) {
                            *dst += gg;
                        }
                    }
                    send(&mut adj, *a, d)
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = val(p).cols();
                        send(&mut adj, *p, g.select_cols(&(start..start + w).collect::<Vec<_>>()));
                        start += w;
                    }
                }
                Op::SliceCols(a, s, _) => {
                    let (r, c) = val(a).shape();
                    let mut d = Matrix::zeros(r, c);
                    for k in 0..r {
                        d.row_mut(k)[*s..*s + g.cols()].copy_from_slice(g.row(k));
                    }
                    send(&mut adj, *a, d)
                }
                Op::BatchNorm(a, eps) => {
                    let x = val(a);
                    let (_, inv_std) = column_stats(x, *eps);
                    let xhat = &node.value;
                    let b = x.rows() as f64;
                    let sum_g = column_sums(&g);
                    let sum_gx = column_sums(&g.hadamard(xhat));
                    let mut d = Matrix::zeros(x.rows(), x.cols());
                    for k in 0..x.rows() {
                        for j in 0..x.cols() {
                            d[(k, j)] = inv_std[j] / b * (b * g[(k, j)] - sum_g[j] - xhat[(k, j)] * sum_gx[j]);
                        }
                    }
                    send(&mut adj, *a, d)
                }
                Op::Custom(inputs, _, vjp) => {
                    let ins: Vec<&Matrix> = inputs.iter().map(val).collect();
                    for (inp, d) in inputs.iter().zip(vjp(&ins, &node.value, &g)) {
                        send(&mut adj, *inp, d);
                    }
                }
            }
            adj[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        adj.resize(self.nodes.len(), None);
        Gradients { adjoints: adj, shapes }
    }
}

pub(crate) fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for r in m.row_iter() {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    out
}

/// Column means and `1 / sqrt(population variance + eps)`.
pub(crate) fn column_stats(m: &Matrix, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let mean = m.column_means();
    let mut var = vec![0.0; m.cols()];
    for r in m.row_iter() {
        for ((s, v), mu) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - mu) * (v - mu);
        }
    }
    let n = m.rows().max(1) as f64;
    let inv_std = var.iter().map(|s| 1.0 / (s / n + eps).sqrt()).collect();
    (mean, inv_std)
}

pub(crate) fn normalize(m: &Matrix, mean: &[f64], inv_std: &[f64]) -> Matrix {
    let mut out = m.clone();
    for k in 0..out.rows() {
        for ((o, mu), s) in out.row_mut(k).iter_mut().zip(mean).zip(inv_std) {
            *o = (*o - mu) * s;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let w = t.leaf(Matrix::scalar(3.0));
        let y = t.square(w);
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(w).item(), 6.0);
    }

    #[test]
    fn exp_gradient_at_zero() {
        let mut t = Tape::new();
        let w = t.leaf(Matrix::scalar(0.0));
        let y = t.exp(w);
        assert_eq!(t.backward(y).unwrap().wrt(w).item(), 1.0);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut t = Tape::new();
        let w = t.leaf(Matrix::row_vector(&[1.0, 2.0]));
        let y = t.square(w);
        assert!(matches!(t.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn shared_inputs_accumulate() {
        // f(w) = w * w + w at w = 2 -> f' = 2w + 1 = 5
        let mut t = Tape::new();
        let w = t.leaf(Matrix::scalar(2.0));
        let ww = t.mul(w, w).unwrap();
        let y = t.add(ww, w).unwrap();
        assert_eq!(t.backward(y).unwrap().wrt(w).item(), 5.0);
    }

    #[test]
    fn sqrt_at_zero_has_zero_subgradient() {
        let mut t = Tape::new();
        let w = t.leaf(Matrix::scalar(0.0));
        let y = t.sqrt(w);
        assert_eq!(t.backward(y).unwrap().wrt(w).item(), 0.0);
    }

    #[test]
    fn replay_reproduces_values() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0]]).unwrap());
        let w = t.leaf(Matrix::from_rows(&[[0.3, 0.1], [-0.2, 0.7], [1.0, 1.0]]).unwrap());
        let b = t.leaf(Matrix::row_vector(&[0.1, 0.2, 0.3]));
        let h = t.linear(x, w, b).unwrap();
        let n = t.batch_norm(h, 1e-5);
        let r = t.relu(n);
        let e = t.exp(r);
        let s = t.mean(e);
        assert!(t.replay_matches());
        assert!(t.backward(s).is_ok());
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::scalar(1.0));
        let b = t.leaf(Matrix::row_vector(&[1.0, 2.0]));
        let y = t.square(a);
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(b), Matrix::zeros(1, 2));
    }

    #[test]
    fn constants_are_not_differentiated() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::row_vector(&[1.0, -2.0]));
        let w = t.constant(Matrix::from_rows(&[[2.0, 0.0], [1.0, 3.0]]).unwrap());
        let b = t.constant(Matrix::row_vector(&[0.5, 0.5]));
        let y = t.linear(x, w, b).unwrap();
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert!(g.get(w).is_none());
        assert_eq!(g.wrt(w), Matrix::zeros(2, 2));
        assert_eq!(g.wrt(x), Matrix::row_vector(&[3.0, 3.0]));
    }
}
