//! Reverse-mode differentiation over 2-D tensors.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. Parameter
//! leaves are bound from a [`ParamSet`]; [`Tape::backward`] accumulates
//! `dloss/dparam` into that set's gradient buffer. Constants and frozen
//! parameters never receive gradients, and a tape built with
//! [`Tape::no_grad`] records values only.

use std::collections::HashMap;

use super::tensor::gemm;
use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// How parameters of a set are bound onto a tape.
#[derive(Clone, Copy)]
pub enum Bind<'a> {
    /// Parameters are differentiable leaves.
    Train(&'a ParamSet),
    /// Parameters are constants (stop-gradient).
    Frozen(&'a ParamSet),
}

impl<'a> Bind<'a> {
    pub fn params(&self) -> &'a ParamSet {
        match *self {
            Bind::Train(p) | Bind::Frozen(p) => p,
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Softplus(Var),
    Minimum(Var, Var),
    Sum(Var),
    SumCols(Var),
    MeanCols(Var),
    LogSoftmaxGroups(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    SelectGroup(Var, Vec<usize>, usize),
    CosineRows(Var, Var),
    LayerNormRows(Var, f64),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
    record: bool,
    param_set: Option<u64>,
    bound: HashMap<usize, Var>,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            record: true,
            param_set: None,
            bound: HashMap::new(),
            consumed: false,
        }
    }

    /// A tape that evaluates values only; every binding is frozen and
    /// [`Tape::backward`] is rejected.
    pub fn no_grad() -> Self {
        Self {
            record: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    /// Whether gradients can flow from `v` back to a trainable parameter.
    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && self.record;
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; always a stop-gradient leaf. Values are viewed as
    /// matrices (`rows x cols`).
    pub fn constant(&mut self, t: Tensor) -> Var {
        let t = if t.shape().len() == 2 { t } else { t.as_matrix() };
        self.push(t, Op::Leaf, false)
    }

    /// Stop-gradient copy of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.push(t, Op::Leaf, false)
    }

    /// Binds parameter `name`. Trainable bindings of one tape must all come
    /// from the same [`ParamSet`].
    pub fn param(&mut self, bind: Bind<'_>, name: &str) -> Result<Var> {
        let params = bind.params();
        let i = params.position(name)?;
        match bind {
            Bind::Frozen(p) => {
                let t = p.value_at(i).as_matrix();
                Ok(self.push(t, Op::Leaf, false))
            }
            Bind::Train(p) if !self.record => {
                let t = p.value_at(i).as_matrix();
                Ok(self.push(t, Op::Leaf, false))
            }
            Bind::Train(p) => {
                match self.param_set {
                    None => self.param_set = Some(p.uid()),
                    Some(uid) if uid != p.uid() => {
                        return Err(Error::Tape(
                            "trainable parameters from two different sets on one tape".into(),
                        ))
                    }
                    _ => {}
                }
                if let Some(&v) = self.bound.get(&i) {
                    return Ok(v);
                }
                let v = self.push(p.value_at(i).as_matrix(), Op::Param(i), true);
                self.bound.insert(i, v);
                Ok(v)
            }
        }
    }

    // ---- operations --------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims(self.value(a));
        let (k2, n) = dims(self.value(b));
        if k != k2 {
            return Err(Error::shape("matmul inner dim", k, k2));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            0.0,
            &mut out,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    /// Adds a `1 x n` row to every row of an `m x n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = dims(self.value(a));
        let (r, n2) = dims(self.value(row));
        if r != 1 || n != n2 {
            return Err(Error::shape("add_row", format!("1x{n}"), format!("{r}x{n2}")));
        }
        let bias = self.value(row).data().to_vec();
        let mut out = self.value(a).data().to_vec();
        for chunk in out.chunks_mut(n) {
            chunk.iter_mut().zip(&bias).for_each(|(x, b)| *x += b);
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::AddRow(a, row), rg))
    }

    fn same_shape(&self, ctx: &str, a: Var, b: Var) -> Result<(usize, usize)> {
        let da = dims(self.value(a));
        let db = dims(self.value(b));
        if da != db {
            return Err(Error::shape(
                ctx,
                format!("{}x{}", da.0, da.1),
                format!("{}x{}", db.0, db.1),
            ));
        }
        Ok(da)
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (m, n) = dims(self.value(a));
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::from_parts(vec![m, n], out)
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let (m, n) = dims(self.value(a));
        Tensor::from_parts(vec![m, n], self.value(a).data().iter().map(|&x| f(x)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let t = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let t = self.zip_with(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let t = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("minimum", a, b)?;
        let t = self.zip_with(a, b, f64::min);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Minimum(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.unary(a, |x| c * x);
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, c), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = self.unary(a, |x| x + c);
        let rg = self.rg(a);
        self.push(t, Op::AddScalar(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| x.max(0.0));
        let rg = self.rg(a);
        self.push(t, Op::Relu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.unary(a, f64::tanh);
        let rg = self.rg(a);
        self.push(t, Op::Tanh(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let t = self.unary(a, f64::exp);
        if !t.is_finite() {
            return Err(Error::NonFinite("exp overflow".into()));
        }
        let rg = self.rg(a);
        Ok(self.push(t, Op::Exp(a), rg))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(Error::NonFinite("log of a non-positive value".into()));
        }
        let t = self.unary(a, f64::ln);
        let rg = self.rg(a);
        Ok(self.push(t, Op::Log(a), rg))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| x * x);
        let rg = self.rg(a);
        self.push(t, Op::Square(a), rg)
    }

    /// `ln(1 + e^x)`, computed stably.
    pub fn softplus(&mut self, a: Var) -> Var {
        let t = self.unary(a, softplus);
        let rg = self.rg(a);
        self.push(t, Op::Softplus(a), rg)
    }

    /// Sum of all entries as a `1 x 1` value.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Row sums: `m x n -> m x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let (m, n) = dims(self.value(a));
        let out = self.value(a).data().chunks(n).map(|r| r.iter().sum()).collect();
        let rg = self.rg(a);
        self.push(Tensor::from_parts(vec![m, 1], out), Op::SumCols(a), rg)
    }

    /// Row means: `m x n -> m x 1`.
    pub fn mean_cols(&mut self, a: Var) -> Var {
        let (m, n) = dims(self.value(a));
        let out = self
            .value(a)
            .data()
            .chunks(n)
            .map(|r| r.iter().sum::<f64>() / n as f64)
            .collect();
        let rg = self.rg(a);
        self.push(Tensor::from_parts(vec![m, 1], out), Op::MeanCols(a), rg)
    }

    /// Log-softmax over consecutive column groups of width `group`.
    pub fn log_softmax_groups(&mut self, a: Var, group: usize) -> Result<Var> {
        let (m, n) = dims(self.value(a));
        if group == 0 || n % group != 0 {
            return Err(Error::shape("log_softmax_groups", format!("multiple of {group}"), n));
        }
        let mut out = self.value(a).data().to_vec();
        for g in out.chunks_mut(group) {
            let max = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + g.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            g.iter_mut().for_each(|x| *x -= lse);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::LogSoftmaxGroups(a, group), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = dims(self.value(p));
            if r != m {
                return Err(Error::shape("concat_cols rows", m, r));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.value(parts[0]).cols();
        let mut out = Vec::new();
        let mut m = 0;
        for &p in parts {
            let (r, c) = dims(self.value(p));
            if c != n {
                return Err(Error::shape("concat_rows cols", n, c));
            }
            out.extend_from_slice(self.value(p).data());
            m += r;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = dims(self.value(a));
        if len == 0 || start + len > n {
            return Err(Error::shape("slice_cols", format!("range within {n}"), start + len));
        }
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&self.value(a).row(r)[start..start + len]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(vec![m, len], out), Op::SliceCols(a, start), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = dims(self.value(a));
        if len == 0 || start + len > m {
            return Err(Error::shape("slice_rows", format!("range within {m}"), start + len));
        }
        let out = self.value(a).data()[start * n..(start + len) * n].to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(vec![len, n], out), Op::SliceRows(a, start), rg))
    }

    /// Picks, for every row `r`, the column group `idx[r]` of width `group`:
    /// `m x (G*group) -> m x group`.
    pub fn select_group(&mut self, a: Var, idx: &[usize], group: usize) -> Result<Var> {
        let (m, n) = dims(self.value(a));
        if idx.len() != m {
            return Err(Error::shape("select_group indices", m, idx.len()));
        }
        if group == 0 || n % group != 0 {
            return Err(Error::shape("select_group", format!("multiple of {group}"), n));
        }
        let groups = n / group;
        let mut out = Vec::with_capacity(m * group);
        for (r, &g) in idx.iter().enumerate() {
            if g >= groups {
                return Err(Error::invalid(format!("group index {g} out of range {groups}")));
            }
            out.extend_from_slice(&self.value(a).row(r)[g * group..(g + 1) * group]);
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::from_parts(vec![m, group], out),
            Op::SelectGroup(a, idx.to_vec(), group),
            rg,
        ))
    }

    /// Row-wise cosine similarity `m x n, m x n -> m x 1`. A row with zero
    /// norm on either side yields 0 and passes no gradient.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, _) = self.same_shape("cosine_rows", a, b)?;
        let out = (0..m)
            .map(|r| cosine(self.value(a).row(r), self.value(b).row(r)))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(vec![m, 1], out), Op::CosineRows(a, b), rg))
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)`, no affine.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let (m, n) = dims(self.value(a));
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            let row = self.value(a).row(r);
            let (mu, inv) = row_stats(row, eps);
            out.extend(row.iter().map(|x| (x - mu) * inv));
        }
        let rg = self.rg(a);
        self.push(Tensor::from_parts(vec![m, n], out), Op::LayerNormRows(a, eps), rg)
    }

    // ---- backward ----------------------------------------------------

    /// Accumulates `d loss / d param` into `params` for every trainable
    /// leaf. The tape is consumed; a second call is an error.
    pub fn backward(&mut self, loss: Var, params: &mut ParamSet) -> Result<()> {
        if !self.record {
            return Err(Error::Tape("backward on a no-grad tape".into()));
        }
        if self.consumed {
            return Err(Error::Tape("backward called twice on the same tape".into()));
        }
        self.consumed = true;
        if dims(self.value(loss)) != (1, 1) {
            return Err(Error::shape(
                "backward loss",
                "1x1",
                format!("{:?}", self.value(loss).shape()),
            ));
        }
        if !self.scalar(loss).is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        if let Some(uid) = self.param_set {
            if uid != params.uid() {
                return Err(Error::Tape(
                    "backward into a parameter set not bound on this tape".into(),
                ));
            }
        }
        if !self.rg(loss) {
            return Ok(());
        }

        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(p) => {
                    let dst = params.grad_at_mut(*p);
                    dst.data_mut().iter_mut().zip(g.data()).for_each(|(d, s)| *d += s);
                }
                op => self.propagate(op, &node.value, &g, &mut grads),
            }
        }
        Ok(())
    }

    fn accum(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let shaped = |like: &Tensor, data: Vec<f64>| Tensor::from_parts(vec![like.rows(), like.cols()], data);
        let elementwise = |x: Var, f: &dyn Fn(usize, f64) -> f64| {
            let d = g.data().iter().enumerate().map(|(i, &gi)| f(i, gi)).collect();
            shaped(self.value(x), d)
        };
        match op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::MatMul(a, b) => {
                let (m, k) = dims(self.value(*a));
                let n = self.value(*b).cols();
                if self.rg(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, self.value(*b).data(), true, 0.0, &mut da);
                    self.accum(grads, *a, Tensor::from_parts(vec![m, k], da));
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, self.value(*a).data(), true, g.data(), false, 0.0, &mut db);
                    self.accum(grads, *b, Tensor::from_parts(vec![k, n], db));
                }
            }
            Op::AddRow(a, row) => {
                self.accum(grads, *a, g.clone());
                if self.rg(*row) {
                    let n = g.cols();
                    let mut db = vec![0.0; n];
                    for chunk in g.data().chunks(n) {
                        db.iter_mut().zip(chunk).for_each(|(d, x)| *d += x);
                    }
                    self.accum(grads, *row, Tensor::from_parts(vec![1, n], db));
                }
            }
            Op::Add(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, g.clone());
                if self.rg(*b) {
                    self.accum(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let bv = self.value(*b).data();
                    self.accum(grads, *a, elementwise(*a, &|i, gi| gi * bv[i]));
                }
                if self.rg(*b) {
                    let av = self.value(*a).data();
                    self.accum(grads, *b, elementwise(*b, &|i, gi| gi * av[i]));
                }
            }
            Op::Minimum(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                // ties route the gradient to the first argument
                if self.rg(*a) {
                    self.accum(
                        grads,
                        *a,
                        elementwise(*a, &|i, gi| if av[i] <= bv[i] { gi } else { 0.0 }),
                    );
                }
                if self.rg(*b) {
                    self.accum(
                        grads,
                        *b,
                        elementwise(*b, &|i, gi| if av[i] <= bv[i] { 0.0 } else { gi }),
                    );
                }
            }
            Op::Scale(a, c) => self.accum(grads, *a, g.map(|x| c * x)),
            Op::AddScalar(a) => self.accum(grads, *a, g.clone()),
            Op::Relu(a) => {
                let y = out.data();
                self.accum(grads, *a, elementwise(*a, &|i, gi| if y[i] > 0.0 { gi } else { 0.0 }));
            }
            Op::Tanh(a) => {
                let y = out.data();
                self.accum(grads, *a, elementwise(*a, &|i, gi| gi * (1.0 - y[i] * y[i])));
            }
            Op::Exp(a) => {
                let y = out.data();
                self.accum(grads, *a, elementwise(*a, &|i, gi| gi * y[i]));
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                self.accum(grads, *a, elementwise(*a, &|i, gi| gi / x[i]));
            }
            Op::Square(a) => {
                let x = self.value(*a).data();
                self.accum(grads, *a, elementwise(*a, &|i, gi| 2.0 * x[i] * gi));
            }
            Op::Softplus(a) => {
                let x = self.value(*a).data();
                self.accum(grads, *a, elementwise(*a, &|i, gi| gi * sigmoid(x[i])));
            }
            Op::Sum(a) => {
                let s = g.item();
                let like = self.value(*a);
                self.accum(grads, *a, shaped(like, vec![s; like.len()]));
            }
            Op::SumCols(a) | Op::MeanCols(a) => {
                let like = self.value(*a);
                let n = like.cols();
                let scale = if matches!(op, Op::MeanCols(_)) {
                    1.0 / n as f64
                } else {
                    1.0
                };
                let d = g
                    .data()
                    .iter()
                    .flat_map(|&gr| std::iter::repeat_n(gr * scale, n))
                    .collect();
                self.accum(grads, *a, shaped(like, d));
            }
            Op::LogSoftmaxGroups(a, group) => {
                let y = out.data();
                let mut d = g.data().to_vec();
                for (dg, yg) in d.chunks_mut(*group).zip(y.chunks(*group)) {
                    let s: f64 = dg.iter().sum();
                    dg.iter_mut().zip(yg).for_each(|(di, yi)| *di -= yi.exp() * s);
                }
                self.accum(grads, *a, shaped(out, d));
            }
            Op::ConcatCols(parts) => {
                let m = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    if self.rg(p) {
                        let mut d = Vec::with_capacity(m * c);
                        for r in 0..m {
                            d.extend_from_slice(&g.row(r)[offset..offset + c]);
                        }
                        self.accum(grads, p, Tensor::from_parts(vec![m, c], d));
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let n = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let r = self.value(p).rows();
                    if self.rg(p) {
                        let d = g.data()[offset * n..(offset + r) * n].to_vec();
                        self.accum(grads, p, Tensor::from_parts(vec![r, n], d));
                    }
                    offset += r;
                }
            }
            Op::SliceCols(a, start) => {
                let like = self.value(*a);
                let (m, n) = dims(like);
                let len = g.cols();
                let mut d = vec![0.0; m * n];
                for r in 0..m {
                    d[r * n + start..r * n + start + len].copy_from_slice(g.row(r));
                }
                self.accum(grads, *a, Tensor::from_parts(vec![m, n], d));
            }
            Op::SliceRows(a, start) => {
                let like = self.value(*a);
                let (m, n) = dims(like);
                let mut d = vec![0.0; m * n];
                d[start * n..start * n + g.len()].copy_from_slice(g.data());
                self.accum(grads, *a, Tensor::from_parts(vec![m, n], d));
            }
            Op::SelectGroup(a, idx, group) => {
                let like = self.value(*a);
                let (m, n) = dims(like);
                let mut d = vec![0.0; m * n];
                for (r, &k) in idx.iter().enumerate() {
                    d[r * n + k * group..r * n + (k + 1) * group].copy_from_slice(g.row(r));
                }
                self.accum(grads, *a, Tensor::from_parts(vec![m, n], d));
            }
            Op::CosineRows(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, n) = dims(av);
                let mut da = vec![0.0; m * n];
                let mut db = vec![0.0; m * n];
                for r in 0..m {
                    let (x, y) = (av.row(r), bv.row(r));
                    let nx = norm(x);
                    let ny = norm(y);
                    if nx == 0.0 || ny == 0.0 {
                        continue;
                    }
                    let c = out.data()[r];
                    let gr = g.data()[r];
                    for j in 0..n {
                        da[r * n + j] = gr * (y[j] / (nx * ny) - c * x[j] / (nx * nx));
                        db[r * n + j] = gr * (x[j] / (nx * ny) - c * y[j] / (ny * ny));
                    }
                }
                self.accum(grads, *a, Tensor::from_parts(vec![m, n], da));
                self.accum(grads, *b, Tensor::from_parts(vec![m, n], db));
            }
            Op::LayerNormRows(a, eps) => {
                let x = self.value(*a);
                let (m, n) = dims(x);
                let mut d = vec![0.0; m * n];
                for r in 0..m {
                    let (_, inv) = row_stats(x.row(r), *eps);
                    let y = out.row(r);
                    let gr = g.row(r);
                    let mean_g = gr.iter().sum::<f64>() / n as f64;
                    let mean_gy = gr.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for j in 0..n {
                        d[r * n + j] = inv * (gr[j] - mean_g - y[j] * mean_gy);
                    }
                }
                self.accum(grads, *a, Tensor::from_parts(vec![m, n], d));
            }
        }
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn cosine(x: &[f64], y: &[f64]) -> f64 {
    let nx = norm(x);
    let ny = norm(y);
    if nx == 0.0 || ny == 0.0 {
        return 0.0;
    }
    x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / (nx * ny)
}

fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mu = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
    (mu, 1.0 / (var + eps).sqrt())
}
