//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every value produced during a forward pass together
//! with the operation that produced it. [`Tape::backward`] then walks the
//! record in reverse, accumulating `∂loss/∂node` for every node that depends
//! on a trainable leaf. Nodes that only depend on constants are skipped.
//!
//! The first operation that yields a NaN or infinity poisons the tape; the
//! name of that operation is reported by [`Tape::check_finite`].

use super::matrix::{gemm, Matrix};
use super::{layer_norm_parts, softmax_rows};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddRow { x: Var, bias: Var },
    MulConst(Var, Matrix),
    Relu(Var),
    Abs(Var),
    Log(Var),
    Exp(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Matrix, inv_std: Vec<f64> },
    SumSquares(Var),
    Sum(Var),
    MeanRows(Var),
    Transpose(Var),
    AppendColumn(Var),
    SliceRows { x: Var, start: usize },
    Chamfer { a: Var, b: Var, argmin: Vec<usize> },
    Assemble(Vec<Var>),
    OffDiagonal(Var),
    SumNormalizeRows { x: Var, sums: Vec<f64> },
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Adjoints {
    grads: Vec<Option<Matrix>>,
}

impl Adjoints {
    /// Gradient with respect to `v`, or `None` when `v` does not influence the loss
    /// through any trainable path.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    poisoned: Option<&'static str>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    /// Name of the first operation that produced a non-finite value, if any.
    pub fn poisoned_by(&self) -> Option<&'static str> {
        self.poisoned
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.poisoned {
            Some(op) => Err(Error::NonFinite { op: op.to_string() }),
            None => Ok(()),
        }
    }

    fn push(&mut self, name: &'static str, value: Matrix, op: Op, needs_grad: bool) -> Var {
        if self.poisoned.is_none() && !value.is_finite() {
            self.poisoned = Some(name);
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push("constant", value, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push("leaf", value, Op::Leaf, true)
    }

    /// Copy of `x` that blocks gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_ex(a, false, b, false)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        self.matmul_ex(a, false, b, true)
    }

    /// `aᵀ · b`
    pub fn t_matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_ex(a, true, b, false)
    }

    fn matmul_ex(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let value = gemm(self.value(a), ta, self.value(b), tb);
        let ng = self.ng(a) || self.ng(b);
        self.push("matmul", value, Op::MatMul { a, b, ta, tb }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).add(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push("add", value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).sub(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push("sub", value, Op::Sub(a, b), ng)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).hadamard(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push("mul", value, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).scale(k);
        let ng = self.ng(a);
        self.push("scale", value, Op::Scale(a, k), ng)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|v| v + k);
        let ng = self.ng(a);
        self.push("add_scalar", value, Op::AddScalar(a), ng)
    }

    /// Adds a `1×cols` row vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(bias));
        assert_eq!(bv.shape(), (1, xv.cols()), "add_row: bias must be 1x{}", xv.cols());
        let mut value = xv.clone();
        let b = bv.as_slice();
        for r in 0..value.rows() {
            for (o, &bb) in value.row_mut(r).iter_mut().zip(b) {
                *o += bb;
            }
        }
        let ng = self.ng(x) || self.ng(bias);
        self.push("add_row", value, Op::AddRow { x, bias }, ng)
    }

    /// Elementwise product with a constant matrix (dropout masks).
    pub fn mul_const(&mut self, x: Var, mask: Matrix) -> Var {
        let value = self.value(x).hadamard(&mask);
        let ng = self.ng(x);
        self.push("mul_const", value, Op::MulConst(x, mask), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let ng = self.ng(x);
        self.push("relu", value, Op::Relu(x), ng)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::abs);
        let ng = self.ng(x);
        self.push("abs", value, Op::Abs(x), ng)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::ln);
        let ng = self.ng(x);
        self.push("log", value, Op::Log(x), ng)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::exp);
        let ng = self.ng(x);
        self.push("exp", value, Op::Exp(x), ng)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let value = softmax_rows(self.value(x));
        let ng = self.ng(x);
        self.push("softmax_rows", value, Op::SoftmaxRows(x), ng)
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut value = xv.clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let ng = self.ng(x);
        self.push("log_softmax_rows", value, Op::LogSoftmaxRows(x), ng)
    }

    /// Row-wise layer normalization with `1×cols` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let (xhat, inv_std) = layer_norm_parts(self.value(x), eps);
        let g = self.value(gain);
        let b = self.value(bias);
        assert_eq!(g.shape(), (1, xhat.cols()), "layer_norm gain shape");
        assert_eq!(b.shape(), (1, xhat.cols()), "layer_norm bias shape");
        let mut value = xhat.clone();
        for r in 0..value.rows() {
            for ((o, &gg), &bb) in value.row_mut(r).iter_mut().zip(g.as_slice()).zip(b.as_slice()) {
                *o = *o * gg + bb;
            }
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        self.push(
            "layer_norm",
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// Squared Frobenius norm as a 1×1 value.
    pub fn sum_squares(&mut self, x: Var) -> Var {
        let value = Matrix::scalar(self.value(x).sum_squares());
        let ng = self.ng(x);
        self.push("sum_squares", value, Op::SumSquares(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::scalar(self.value(x).sum());
        let ng = self.ng(x);
        self.push("sum", value, Op::Sum(x), ng)
    }

    /// Column means: `M×D → 1×D`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = vec![0.0; xv.cols()];
        for r in 0..xv.rows() {
            for (o, &v) in out.iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        let inv = 1.0 / xv.rows() as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let ng = self.ng(x);
        self.push("mean_rows", Matrix::row_vector(&out), Op::MeanRows(x), ng)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let value = self.value(x).transpose();
        let ng = self.ng(x);
        self.push("transpose", value, Op::Transpose(x), ng)
    }

    /// Appends a constant column filled with `value`: `M×D → M×(D+1)`.
    pub fn append_column(&mut self, x: Var, value: f64) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let out = Matrix::from_fn(rows, cols + 1, |r, c| if c < cols { xv.get(r, c) } else { value });
        let ng = self.ng(x);
        self.push("append_column", out, Op::AppendColumn(x), ng)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let value = self.value(x).slice_rows(start, len);
        let ng = self.ng(x);
        self.push("slice_rows", value, Op::SliceRows { x, start }, ng)
    }

    /// Directed clip-matching distance `Σ_m min_n ‖a_m − b_n‖²` as a 1×1 value.
    ///
    /// Ties in the minimum resolve to the smallest `n`; the gradient flows
    /// through the selected pair only.
    pub fn chamfer(&mut self, a: Var, b: Var) -> Var {
        let (total, argmin) = chamfer_forward(self.value(a), self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push("chamfer", Matrix::scalar(total), Op::Chamfer { a, b, argmin }, ng)
    }

    /// Lays out `rows·cols` scalar vars row-major into one matrix.
    pub fn assemble(&mut self, parts: Vec<Var>, rows: usize, cols: usize) -> Var {
        assert_eq!(parts.len(), rows * cols, "assemble: wrong number of parts");
        let data = parts.iter().map(|&p| self.value(p).item()).collect();
        let value = Matrix::from_vec(rows, cols, data).expect("assemble dims");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push("assemble", value, Op::Assemble(parts), ng)
    }

    /// Drops the diagonal of a square matrix: `B×B → B×(B−1)`.
    pub fn off_diagonal(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let b = xv.rows();
        assert_eq!(xv.cols(), b, "off_diagonal needs a square matrix");
        assert!(b >= 2, "off_diagonal needs at least 2 rows");
        let value = Matrix::from_fn(b, b - 1, |r, c| xv.get(r, if c < r { c } else { c + 1 }));
        let ng = self.ng(x);
        self.push("off_diagonal", value, Op::OffDiagonal(x), ng)
    }

    /// Row-wise `(x + eps) / Σ(x + eps)`.
    pub fn sum_normalize_rows(&mut self, x: Var, eps: f64) -> Var {
        let mut value = self.value(x).map(|v| v + eps);
        let mut sums = Vec::with_capacity(value.rows());
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
            sums.push(s);
        }
        let ng = self.ng(x);
        self.push("sum_normalize_rows", value, Op::SumNormalizeRows { x, sums }, ng)
    }

    /// Sum of several same-shaped vars.
    pub fn add_all(&mut self, vars: &[Var]) -> Var {
        assert!(!vars.is_empty(), "add_all of nothing");
        let mut acc = vars[0];
        for &v in &vars[1..] {
            acc = self.add(acc, v);
        }
        acc
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Adjoints {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Adjoints { grads }
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let mut acc = |v: Var, contrib: Matrix| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.axpy(1.0, &contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                match (ta, tb) {
                    (false, false) => {
                        if self.ng(*a) {
                            acc(*a, gemm(g, false, bv, true));
                        }
                        if self.ng(*b) {
                            acc(*b, gemm(av, true, g, false));
                        }
                    }
                    (true, false) => {
                        if self.ng(*a) {
                            acc(*a, gemm(bv, false, g, true));
                        }
                        if self.ng(*b) {
                            acc(*b, gemm(av, false, g, false));
                        }
                    }
                    (false, true) => {
                        if self.ng(*a) {
                            acc(*a, gemm(g, false, bv, false));
                        }
                        if self.ng(*b) {
                            acc(*b, gemm(g, true, av, false));
                        }
                    }
                    (true, true) => unreachable!("double-transposed product is never recorded"),
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.hadamard(self.value(*b)));
                }
                if self.ng(*b) {
                    acc(*b, g.hadamard(self.value(*a)));
                }
            }
            Op::Scale(a, k) => acc(*a, g.scale(*k)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::AddRow { x, bias } => {
                acc(*x, g.clone());
                if self.ng(*bias) {
                    let mut col = vec![0.0; g.cols()];
                    for r in 0..g.rows() {
                        for (c, &v) in col.iter_mut().zip(g.row(r)) {
                            *c += v;
                        }
                    }
                    acc(*bias, Matrix::row_vector(&col));
                }
            }
            Op::MulConst(x, mask) => acc(*x, g.hadamard(mask)),
            Op::Relu(x) => acc(*x, g.zip_map(self.value(*x), |gg, v| if v > 0.0 { gg } else { 0.0 })),
            Op::Abs(x) => acc(*x, g.zip_map(self.value(*x), |gg, v| gg * sign(v))),
            Op::Log(x) => acc(*x, g.zip_map(self.value(*x), |gg, v| gg / v)),
            Op::Exp(x) => acc(*x, g.hadamard(&node.value)),
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((d, &yy), &gg) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *d = yy * (gg - dot);
                    }
                }
                acc(*x, dx);
            }
            Op::LogSoftmaxRows(x) => {
                let l = &node.value;
                let mut dx = Matrix::zeros(l.rows(), l.cols());
                for r in 0..l.rows() {
                    let gs: f64 = g.row(r).iter().sum();
                    for ((d, &ll), &gg) in dx.row_mut(r).iter_mut().zip(l.row(r)).zip(g.row(r)) {
                        *d = gg - ll.exp() * gs;
                    }
                }
                acc(*x, dx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gain).as_slice();
                let (rows, cols) = xhat.shape();
                if self.ng(*gain) || self.ng(*bias) {
                    let mut dg = vec![0.0; cols];
                    let mut db = vec![0.0; cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            dg[c] += g.get(r, c) * xhat.get(r, c);
                            db[c] += g.get(r, c);
                        }
                    }
                    acc(*gain, Matrix::row_vector(&dg));
                    acc(*bias, Matrix::row_vector(&db));
                }
                if self.ng(*x) {
                    let n = cols as f64;
                    let mut dx = Matrix::zeros(rows, cols);
                    for (r, &inv) in inv_std.iter().enumerate() {
                        let dxhat: Vec<f64> = g.row(r).iter().zip(gv).map(|(a, b)| a * b).collect();
                        let sum_d: f64 = dxhat.iter().sum();
                        let sum_dx: f64 = dxhat.iter().zip(xhat.row(r)).map(|(a, b)| a * b).sum();
                        for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                            *d = inv / n * (n * dxhat[c] - sum_d - xhat.get(r, c) * sum_dx);
                        }
                    }
                    acc(*x, dx);
                }
            }
            Op::SumSquares(x) => acc(*x, self.value(*x).scale(2.0 * g.item())),
            Op::Sum(x) => {
                let (r, c) = self.value(*x).shape();
                acc(*x, Matrix::filled(r, c, g.item()));
            }
            Op::MeanRows(x) => {
                let (rows, cols) = self.value(*x).shape();
                let inv = 1.0 / rows as f64;
                let gr = g.row(0);
                acc(*x, Matrix::from_fn(rows, cols, |_, c| gr[c] * inv));
            }
            Op::Transpose(x) => acc(*x, g.transpose()),
            Op::AppendColumn(x) => {
                let (rows, cols) = self.value(*x).shape();
                acc(*x, Matrix::from_fn(rows, cols, |r, c| g.get(r, c)));
            }
            Op::SliceRows { x, start } => {
                let (rows, cols) = self.value(*x).shape();
                let mut dx = Matrix::zeros(rows, cols);
                for r in 0..g.rows() {
                    dx.row_mut(start + r).copy_from_slice(g.row(r));
                }
                acc(*x, dx);
            }
            Op::Chamfer { a, b, argmin } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let k = 2.0 * g.item();
                let mut da = Matrix::zeros(av.rows(), av.cols());
                let mut db = Matrix::zeros(bv.rows(), bv.cols());
                for (m, &n) in argmin.iter().enumerate() {
                    for c in 0..av.cols() {
                        let diff = k * (av.get(m, c) - bv.get(n, c));
                        da.as_mut_slice()[m * av.cols() + c] += diff;
                        db.as_mut_slice()[n * bv.cols() + c] -= diff;
                    }
                }
                acc(*a, da);
                acc(*b, db);
            }
            Op::Assemble(parts) => {
                for (k, &p) in parts.iter().enumerate() {
                    acc(p, Matrix::scalar(g.as_slice()[k]));
                }
            }
            Op::OffDiagonal(x) => {
                let b = g.rows();
                let mut dx = Matrix::zeros(b, b);
                for r in 0..b {
                    for c in 0..b - 1 {
                        dx.set(r, if c < r { c } else { c + 1 }, g.get(r, c));
                    }
                }
                acc(*x, dx);
            }
            Op::SumNormalizeRows { x, sums } => {
                let y = &node.value;
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for (r, &sum) in sums.iter().enumerate() {
                    let dot: f64 = y.row(r).iter().zip(g.row(r)).map(|(a, b)| a * b).sum();
                    for (d, &gg) in dx.row_mut(r).iter_mut().zip(g.row(r)) {
                        *d = (gg - dot) / sum;
                    }
                }
                acc(*x, dx);
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn chamfer_forward(a: &Matrix, b: &Matrix) -> (f64, Vec<usize>) {
    assert_eq!(a.cols(), b.cols(), "chamfer: feature widths differ");
    let mut total = 0.0;
    let mut argmin = Vec::with_capacity(a.rows());
    for m in 0..a.rows() {
        let am = a.row(m);
        let mut best = f64::INFINITY;
        let mut best_n = 0;
        for n in 0..b.rows() {
            let d: f64 = am.iter().zip(b.row(n)).map(|(x, y)| (x - y) * (x - y)).sum();
            if d < best {
                best = d;
                best_n = n;
            }
        }
        total += best;
        argmin.push(best_n);
    }
    (total, argmin)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_form_gradient() {
        let mut t = Tape::new();
        let w = t.leaf(Matrix::identity(2));
        let l = t.sum_squares(w);
        assert_eq!(t.scalar(l), 2.0);
        let adj = t.backward(l);
        assert_eq!(adj.get(w).unwrap(), &Matrix::from_rows(&[[2.0, 0.0], [0.0, 2.0]]));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let p = t.leaf(Matrix::scalar(3.0));
        let c = t.constant(Matrix::scalar(5.0));
        let l = t.mul(c, c);
        let adj = t.backward(l);
        assert!(adj.get(p).is_none());
        assert!(adj.get(c).is_none());
    }

    #[test]
    fn poisoning_names_the_first_bad_op() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::scalar(0.0));
        let l = t.log(x);
        let _ = t.exp(l);
        assert_eq!(t.poisoned_by(), Some("log"));
        assert!(matches!(t.check_finite(), Err(Error::NonFinite { op }) if op == "log"));
    }

    #[test]
    fn chamfer_breaks_ties_toward_smallest_index() {
        let a = Matrix::from_rows(&[[0.0]]);
        let b = Matrix::from_rows(&[[1.0], [-1.0]]);
        let (d, arg) = chamfer_forward(&a, &b);
        assert_eq!(d, 1.0);
        assert_eq!(arg, vec![0]);
    }
}
