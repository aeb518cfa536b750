//! Reverse-mode differentiation over an append-only operation record.
//!
//! Every operation appends one node holding its forward value, so node
//! indices are a topological order by construction and the backward sweep is
//! a single reverse pass.

use super::tensor::Tensor;
use super::EPSILON_NORM;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    AddBias(Var, Var),
    ConcatRows(Var, Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    NormalizeRows { input: Var, norms: Vec<f64> },
    LogSumExpRows { input: Var, mask: Option<Vec<bool>> },
    Gather { input: Var, indices: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient matches value shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn is_reachable(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn as_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::shape(op, format!("expected a matrix, got {s:?}"))),
    }
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

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_unchecked(Op::Leaf, value, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_unchecked(Op::Leaf, value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push_unchecked(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[Var]) -> Result<Var> {
        if let Some(i) = value.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{} produced {} at index {i}",
                op_name(&op),
                value.data()[i]
            )));
        }
        let needs = inputs.iter().any(|&v| self.needs(v));
        Ok(self.push_unchecked(op, value, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("add", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(Op::Add(a, b), out, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("sub", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(Op::Sub(a, b), out, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("mul", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(Op::Mul(a, b), out, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let x = self.value(a);
        let data = x.data().iter().map(|p| p * c).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(Op::Scale(a, c), out, &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = as_matrix("matmul", self.value(a))?;
        let (k2, n) = as_matrix("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m},{k}] x [{k2},{n}]")));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let out = Tensor::new(vec![m, n], out)?;
        self.push(Op::MatMul(a, b), out, &[a, b])
    }

    /// `a · bᵀ` for `a: [m,k]`, `b: [n,k]`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = as_matrix("matmul_bt", self.value(a))?;
        let (n, k2) = as_matrix("matmul_bt", self.value(b))?;
        if k != k2 {
            return Err(Error::shape("matmul_bt", format!("[{m},{k}] x [{n},{k2}]ᵀ")));
        }
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let xr = &x[i * k..(i + 1) * k];
            for j in 0..n {
                let yr = &y[j * k..(j + 1) * k];
                out[i * n + j] = xr.iter().zip(yr).map(|(p, q)| p * q).sum();
            }
        }
        let out = Tensor::new(vec![m, n], out)?;
        self.push(Op::MatMulBt(a, b), out, &[a, b])
    }

    /// Adds a length-`n` bias vector to every row of an `[m,n]` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = as_matrix("add_bias", self.value(a))?;
        if self.value(bias).shape() != [n] {
            return Err(Error::shape(
                "add_bias",
                format!("bias {:?} for rows of width {n}", self.value(bias).shape()),
            ));
        }
        let b = self.value(bias).data();
        let mut data = self.value(a).data().to_vec();
        for r in 0..m {
            for (v, bv) in data[r * n..(r + 1) * n].iter_mut().zip(b) {
                *v += bv;
            }
        }
        let out = Tensor::new(vec![m, n], data)?;
        self.push(Op::AddBias(a, bias), out, &[a, bias])
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m1, n1) = as_matrix("concat_rows", self.value(a))?;
        let (m2, n2) = as_matrix("concat_rows", self.value(b))?;
        if n1 != n2 {
            return Err(Error::shape("concat_rows", format!("widths {n1} and {n2}")));
        }
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        let out = Tensor::new(vec![m1 + m2, n1], data)?;
        self.push(Op::ConcatRows(a, b), out, &[a, b])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let data = x.data().iter().map(|&p| p.max(0.0)).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(Op::Relu(a), out, &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let data = x.data().iter().map(|p| p.exp()).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(Op::Exp(a), out, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if let Some((index, &value)) = x.data().iter().enumerate().find(|(_, &p)| p <= 0.0) {
            return Err(Error::NonPositiveLog { index, value });
        }
        let data = x.data().iter().map(|p| p.ln()).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(Op::Log(a), out, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let s: f64 = x.data().iter().sum::<f64>() / x.len() as f64;
        self.push(Op::Mean(a), Tensor::scalar(s), &[a])
    }

    /// Projects every row onto the unit sphere. A vector is treated as one row.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let c = x.cols();
        let mut norms = Vec::with_capacity(x.rows());
        let mut data = Vec::with_capacity(x.len());
        for (i, r) in x.row_iter().enumerate() {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(n > EPSILON_NORM) {
                return Err(Error::DegenerateInput(format!(
                    "row {i} has norm {n:e}, cannot normalize"
                )));
            }
            norms.push(n);
            data.extend(r.iter().map(|v| v / n));
        }
        debug_assert_eq!(data.len(), x.rows() * c);
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(Op::NormalizeRows { input: a, norms }, out, &[a])
    }

    /// Row-wise `log Σ_j exp(x_ij)` computed with max subtraction. Entries with
    /// `mask[i*n + j] == false` are excluded from the sum.
    pub fn log_sum_exp_rows(&mut self, a: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        let (m, n) = as_matrix("log_sum_exp_rows", self.value(a))?;
        if let Some(mk) = &mask {
            if mk.len() != m * n {
                return Err(Error::shape("log_sum_exp_rows", format!("mask of {} for [{m},{n}]", mk.len())));
            }
        }
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(m);
        for i in 0..m {
            let keep = |j: usize| mask.as_ref().is_none_or(|mk| mk[i * n + j]);
            let row = &x[i * n..(i + 1) * n];
            let max = (0..n)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::invalid(format!("log_sum_exp_rows: row {i} fully masked")));
            }
            let s: f64 = (0..n).filter(|&j| keep(j)).map(|j| (row[j] - max).exp()).sum();
            out.push(max + s.ln());
        }
        let out = Tensor::vector(out)?;
        self.push(Op::LogSumExpRows { input: a, mask }, out, &[a])
    }

    /// Picks entries by flat row-major index into a vector.
    pub fn gather(&mut self, a: Var, indices: Vec<usize>) -> Result<Var> {
        let x = self.value(a);
        if indices.is_empty() {
            return Err(Error::shape("gather", "no indices"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= x.len()) {
            return Err(Error::shape("gather", format!("index {bad} of {}", x.len())));
        }
        let data = indices.iter().map(|&i| x.data()[i]).collect();
        let out = Tensor::vector(data)?;
        self.push(Op::Gather { input: a, indices }, out, &[a])
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != [1] {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            if !self.needs(v) {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                acc(*b, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
            }
            Op::Sub(a, b) => {
                acc(*a, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                acc(*b, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s -= g));
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &|s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * y[i];
                    }
                });
                acc(*b, &|s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * x[i];
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s += c * g)),
            Op::MatMul(a, b) => {
                let (m, k) = as_matrix("matmul", self.value(*a)).unwrap();
                let n = self.value(*b).cols();
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                // dA = G · Bᵀ
                acc(*a, &|s| {
                    for i in 0..m {
                        let gr = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let yr = &y[p * n..(p + 1) * n];
                            s[i * k + p] += gr.iter().zip(yr).map(|(u, v)| u * v).sum::<f64>();
                        }
                    }
                });
                // dB = Aᵀ · G
                acc(*b, &|s| {
                    for i in 0..m {
                        let gr = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let xv = x[i * k + p];
                            if xv == 0.0 {
                                continue;
                            }
                            for (sv, gv) in s[p * n..(p + 1) * n].iter_mut().zip(gr) {
                                *sv += xv * gv;
                            }
                        }
                    }
                });
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = as_matrix("matmul_bt", self.value(*a)).unwrap();
                let n = self.value(*b).rows();
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                // dA = G · B
                acc(*a, &|s| {
                    for i in 0..m {
                        for j in 0..n {
                            let gv = g[i * n + j];
                            for p in 0..k {
                                s[i * k + p] += gv * y[j * k + p];
                            }
                        }
                    }
                });
                // dB = Gᵀ · A
                acc(*b, &|s| {
                    for i in 0..m {
                        for j in 0..n {
                            let gv = g[i * n + j];
                            for p in 0..k {
                                s[j * k + p] += gv * x[i * k + p];
                            }
                        }
                    }
                });
            }
            Op::AddBias(a, bias) => {
                let n = self.value(*bias).len();
                acc(*a, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                acc(*bias, &|s| {
                    for row in g.chunks(n) {
                        s.iter_mut().zip(row).for_each(|(s, g)| *s += g);
                    }
                });
            }
            Op::ConcatRows(a, b) => {
                let split = self.value(*a).len();
                acc(*a, &|s| s.iter_mut().zip(&g[..split]).for_each(|(s, g)| *s += g));
                acc(*b, &|s| s.iter_mut().zip(&g[split..]).for_each(|(s, g)| *s += g));
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                acc(*a, &|s| {
                    for i in 0..s.len() {
                        if x[i] > 0.0 {
                            s[i] += g[i];
                        }
                    }
                });
            }
            Op::Exp(a) => {
                let y = node.value.data();
                acc(*a, &|s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * y[i];
                    }
                });
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                acc(*a, &|s| {
                    for i in 0..s.len() {
                        s[i] += g[i] / x[i];
                    }
                });
            }
            Op::Sum(a) => acc(*a, &|s| s.iter_mut().for_each(|s| *s += g[0])),
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                acc(*a, &|s| s.iter_mut().for_each(|s| *s += g[0] / n));
            }
            Op::NormalizeRows { input, norms } => {
                let y = node.value.data();
                let c = node.value.cols();
                acc(*input, &|s| {
                    for (r, &n) in norms.iter().enumerate() {
                        let yr = &y[r * c..(r + 1) * c];
                        let gr = &g[r * c..(r + 1) * c];
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for j in 0..c {
                            s[r * c + j] += (gr[j] - yr[j] * dot) / n;
                        }
                    }
                });
            }
            Op::LogSumExpRows { input, mask } => {
                let x = self.value(*input).data();
                let lse = node.value.data();
                let n = self.value(*input).cols();
                acc(*input, &|s| {
                    for (i, (&l, &gi)) in lse.iter().zip(g).enumerate() {
                        for j in 0..n {
                            let idx = i * n + j;
                            if mask.as_ref().is_none_or(|mk| mk[idx]) {
                                s[idx] += gi * (x[idx] - l).exp();
                            }
                        }
                    }
                });
            }
            Op::Gather { input, indices } => acc(*input, &|s| {
                for (&i, gv) in indices.iter().zip(g) {
                    s[i] += gv;
                }
            }),
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::MatMul(..) => "matmul",
        Op::MatMulBt(..) => "matmul_bt",
        Op::AddBias(..) => "add_bias",
        Op::ConcatRows(..) => "concat_rows",
        Op::Relu(..) => "relu",
        Op::Exp(..) => "exp",
        Op::Log(..) => "log",
        Op::Sum(..) => "sum",
        Op::Mean(..) => "mean",
        Op::NormalizeRows { .. } => "normalize_rows",
        Op::LogSumExpRows { .. } => "log_sum_exp_rows",
        Op::Gather { .. } => "gather",
    }
}

pub(crate) fn matmul_raw(x: &[f64], y: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let xv = x[i * k + p];
            if xv == 0.0 {
                continue;
            }
            for (o, yv) in orow.iter_mut().zip(&y[p * n..(p + 1) * n]) {
                *o += xv * yv;
            }
        }
    }
    out
}
