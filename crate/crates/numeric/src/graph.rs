//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every op as a node in creation order, which is
//! already a topological order. [`Graph::backward`] walks the tape once in
//! reverse and returns [`Gradients`] for every node that depends on a
//! parameter or on a [`Graph::variable`].
//!
//! Parameters are borrowed from a [`ParamStore`] and never copied into the
//! tape; the store must stay immutable while a graph is alive.

use std::collections::HashMap;

use crate::array::{gemm, Array};
use crate::error::{shape_err, Result};
use crate::params::{ParamGrads, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Variable,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddBlocks(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    SoftmaxCols(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Transpose(Var),
    Reshape(Var),
    Patchify { input: Var, batch: usize, h: usize, w: usize },
    SumAll(Var),
    SumCols(Var),
    MseConst(Var, Array),
    StraightThrough(Var),
}

struct Node {
    value: Option<Array>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array, op: Op, needs_grad: bool) -> Var {
        let v = Var(self.nodes.len());
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        v
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Array {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(a), _) => a,
            (None, Op::Param(id)) => self.params.get(*id),
            (None, _) => unreachable!("node without value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    /// A constant input; no gradient is tracked.
    pub fn constant(&mut self, value: Array) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// A leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&mut self, value: Array) -> Var {
        self.push(value, Op::Variable, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = Var(self.nodes.len());
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: true,
        });
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Array> {
        let (va, vb) = (self.value(a), self.value(b));
        if !va.same_shape(vb) {
            return Err(shape_err(name, format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Array::new(vec![va.rows(), va.cols()], data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    /// `a[m, n] + row[1, n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        let (m, n) = va.dims2();
        if vr.len() != n {
            return Err(shape_err("add_row", format!("{:?} + {:?}", va.shape(), vr.shape())));
        }
        let mut out = va.data().to_vec();
        for r in 0..m {
            for (o, b) in out[r * n..(r + 1) * n].iter_mut().zip(vr.data()) {
                *o += b;
            }
        }
        let out = Array::new(vec![m, n], out)?;
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(out, Op::AddRow(a, row), ng))
    }

    /// Pairwise block sum: `out[i * p + q] = a[i] + b[q]` for `a[k, h]`,
    /// `b[p, h]`. This is the first layer of a broadcast decoder with the
    /// slot and coordinate contributions computed separately.
    pub fn add_blocks(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (k, h) = va.dims2();
        let (p, h2) = vb.dims2();
        if h != h2 {
            return Err(shape_err("add_blocks", format!("{:?} / {:?}", va.shape(), vb.shape())));
        }
        let mut out = Vec::with_capacity(k * p * h);
        for i in 0..k {
            let ra = va.row_slice(i);
            for q in 0..p {
                out.extend(ra.iter().zip(vb.row_slice(q)).map(|(x, y)| x + y));
            }
        }
        let out = Array::new(vec![k * p, h], out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::AddBlocks(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let va = self.value(a);
        let out = Array::new(vec![va.rows(), va.cols()], va.data().iter().map(|x| x * s).collect())
            .expect("same length");
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    /// Multiplies every entry of `a` by the `1 x 1` node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let vs = self.value(s);
        if vs.len() != 1 {
            return Err(shape_err("mul_scalar", format!("scalar has shape {:?}", vs.shape())));
        }
        let sv = vs.data()[0];
        let va = self.value(a);
        let out = Array::new(vec![va.rows(), va.cols()], va.data().iter().map(|x| x * sv).collect())?;
        let ng = self.ng(a) || self.ng(s);
        Ok(self.push(out, Op::MulScalar(a, s), ng))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let out = Array::new(vec![va.rows(), va.cols()], va.data().iter().map(|x| x.max(0.0)).collect())
            .expect("same length");
        let ng = self.ng(a);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let out = Array::new(
            vec![va.rows(), va.cols()],
            va.data().iter().map(|&x| sigmoid(x)).collect(),
        )
        .expect("same length");
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        let ng = self.ng(a);
        self.push(out, Op::SoftmaxRows(a), ng)
    }

    pub fn softmax_cols(&mut self, a: Var) -> Var {
        let out = softmax_rows(&self.value(a).transpose()).transpose();
        let ng = self.ng(a);
        self.push(out, Op::SoftmaxCols(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat_cols", "no inputs"));
        }
        let rows = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(shape_err("concat_cols", format!("row count {} vs {}", v.rows(), rows)));
            }
            total += v.cols();
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let out = Array::new(vec![rows, total], out)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat_rows", "no inputs"));
        }
        let cols = self.value(parts[0]).cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(shape_err("concat_rows", format!("col count {} vs {}", v.cols(), cols)));
            }
            rows += v.rows();
            out.extend_from_slice(v.data());
        }
        let out = Array::new(vec![rows, cols], out)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        let (m, n) = va.dims2();
        if start + len > m {
            return Err(shape_err("slice_rows", format!("{start}+{len} > {m}")));
        }
        let out = Array::new(vec![len, n], va.data()[start * n..(start + len) * n].to_vec())?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::SliceRows(a, start), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        let (m, n) = va.dims2();
        if start + len > n {
            return Err(shape_err("slice_cols", format!("{start}+{len} > {n}")));
        }
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&va.row_slice(r)[start..start + len]);
        }
        let out = Array::new(vec![m, len], out)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::SliceCols(a, start), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let ng = self.ng(a);
        self.push(out, Op::Transpose(a), ng)
    }

    /// Reinterprets the row-major data with a new 2-D shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(a).reshape(&[rows, cols])?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::Reshape(a), ng))
    }

    /// Space-to-depth with a 2x2 window and stride 2.
    ///
    /// Input rows are pixels ordered `(b, y, x)` over `batch` images of
    /// `h x w`, columns are channels. Output rows are `(b, y/2, x/2)` with
    /// the four window pixels concatenated in raster order.
    pub fn patchify(&mut self, a: Var, batch: usize, h: usize, w: usize) -> Result<Var> {
        let va = self.value(a);
        let (rows, c) = va.dims2();
        if rows != batch * h * w || h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err(
                "patchify",
                format!("{rows} rows for batch {batch} of {h}x{w}"),
            ));
        }
        let (h2, w2) = (h / 2, w / 2);
        let mut out = Vec::with_capacity(rows * c);
        for b in 0..batch {
            for y in 0..h2 {
                for x in 0..w2 {
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let src = (b * h + 2 * y + dy) * w + 2 * x + dx;
                        out.extend_from_slice(va.row_slice(src));
                    }
                }
            }
        }
        let out = Array::new(vec![batch * h2 * w2, 4 * c], out)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::Patchify { input: a, batch, h, w }, ng))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Array::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(out, Op::SumAll(a), ng)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Column sums as a `1 x n` row.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let (m, n) = va.dims2();
        let mut out = vec![0.0; n];
        for r in 0..m {
            for (o, v) in out.iter_mut().zip(va.row_slice(r)) {
                *o += v;
            }
        }
        let out = Array::new(vec![1, n], out).expect("row");
        let ng = self.ng(a);
        self.push(out, Op::SumCols(a), ng)
    }

    /// Mean squared difference to a constant target, as a `1 x 1` node.
    pub fn mse_const(&mut self, a: Var, target: &Array) -> Result<Var> {
        let va = self.value(a);
        if va.len() != target.len() || va.rows() != target.rows() {
            return Err(shape_err("mse", format!("{:?} vs {:?}", va.shape(), target.shape())));
        }
        let n = va.len().max(1) as f64;
        let s: f64 = va
            .data()
            .iter()
            .zip(target.data())
            .map(|(x, t)| (x - t) * (x - t))
            .sum();
        let out = Array::scalar(s / n);
        let ng = self.ng(a);
        Ok(self.push(out, Op::MseConst(a, target.clone()), ng))
    }

    /// Forward: one-hot of the row-wise argmax. Backward: identity.
    pub fn straight_through(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let (m, n) = va.dims2();
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let j = argmax(va.row_slice(r));
            out[r * n + j] = 1.0;
        }
        let out = Array::new(vec![m, n], out).expect("same length");
        let ng = self.ng(a);
        self.push(out, Op::StraightThrough(a), ng)
    }

    /// Runs reverse accumulation from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward", "loss must be a single value"));
        }
        let mut grads: Vec<Option<Array>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        let mut params = HashMap::new();
        for (&id, &v) in &self.param_vars {
            if let Some(g) = grads[v.0].take() {
                params.insert(id, g);
            }
        }
        Ok(Gradients { nodes: grads, params })
    }

    fn acc(&self, grads: &mut [Option<Array>], v: Var, g: Array) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let target = self.value(v);
        let g = if g.shape() != target.shape() {
            g.into_shape(target.shape()).expect("gradient size matches value")
        } else {
            g
        };
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, i: usize, g: &Array, grads: &mut [Option<Array>]) -> Result<()> {
        let out = self.nodes[i].value.as_ref();
        let (gm, gn) = g.dims2();
        match &self.nodes[i].op {
            Op::Constant | Op::Variable | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = va.dims2();
                let n = vb.cols();
                if self.ng(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, vb.data(), true, &mut da, 0.0);
                    self.acc(grads, *a, Array::new(vec![m, k], da)?);
                }
                if self.ng(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, va.data(), true, g.data(), false, &mut db, 0.0);
                    self.acc(grads, *b, Array::new(vec![k, n], db)?);
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let d = g.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
                    self.acc(grads, *a, Array::new(vec![gm, gn], d)?);
                }
                if self.ng(*b) {
                    let d = g.data().iter().zip(va.data()).map(|(x, y)| x * y).collect();
                    self.acc(grads, *b, Array::new(vec![gm, gn], d)?);
                }
            }
            Op::AddRow(a, row) => {
                self.acc(grads, *a, g.clone());
                if self.ng(*row) {
                    let mut d = vec![0.0; gn];
                    for r in 0..gm {
                        for (o, v) in d.iter_mut().zip(g.row_slice(r)) {
                            *o += v;
                        }
                    }
                    self.acc(grads, *row, Array::new(vec![1, gn], d)?);
                }
            }
            Op::AddBlocks(a, b) => {
                let k = self.value(*a).rows();
                let p = self.value(*b).rows();
                let h = gn;
                let mut da = vec![0.0; k * h];
                let mut db = vec![0.0; p * h];
                for ia in 0..k {
                    for q in 0..p {
                        let gr = g.row_slice(ia * p + q);
                        for c in 0..h {
                            da[ia * h + c] += gr[c];
                            db[q * h + c] += gr[c];
                        }
                    }
                }
                self.acc(grads, *a, Array::new(vec![k, h], da)?);
                self.acc(grads, *b, Array::new(vec![p, h], db)?);
            }
            Op::Scale(a, s) => self.acc(grads, *a, g.map(|x| x * s)),
            Op::MulScalar(a, s) => {
                let va = self.value(*a);
                let sv = self.value(*s).data()[0];
                if self.ng(*a) {
                    self.acc(grads, *a, g.map(|x| x * sv));
                }
                if self.ng(*s) {
                    let d: f64 = g.data().iter().zip(va.data()).map(|(x, y)| x * y).sum();
                    self.acc(grads, *s, Array::scalar(d));
                }
            }
            Op::Relu(a) => {
                let va = self.value(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(va.data())
                    .map(|(&x, &v)| if v > 0.0 { x } else { 0.0 })
                    .collect();
                self.acc(grads, *a, Array::new(vec![gm, gn], d)?);
            }
            Op::Sigmoid(a) => {
                let y = out.expect("value");
                let d = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&x, &s)| x * s * (1.0 - s))
                    .collect();
                self.acc(grads, *a, Array::new(vec![gm, gn], d)?);
            }
            Op::SoftmaxRows(a) => {
                let y = out.expect("value");
                self.acc(grads, *a, softmax_rows_backward(y, g));
            }
            Op::SoftmaxCols(a) => {
                let y = out.expect("value").transpose();
                let d = softmax_rows_backward(&y, &g.transpose()).transpose();
                self.acc(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.ng(p) {
                        let mut d = Vec::with_capacity(gm * w);
                        for r in 0..gm {
                            d.extend_from_slice(&g.row_slice(r)[start..start + w]);
                        }
                        self.acc(grads, p, Array::new(vec![gm, w], d)?);
                    }
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let h = self.value(p).rows();
                    if self.ng(p) {
                        let d = g.data()[start * gn..(start + h) * gn].to_vec();
                        self.acc(grads, p, Array::new(vec![h, gn], d)?);
                    }
                    start += h;
                }
            }
            Op::SliceRows(a, start) => {
                let (m, n) = self.value(*a).dims2();
                let mut d = vec![0.0; m * n];
                d[start * n..(start + gm) * n].copy_from_slice(g.data());
                self.acc(grads, *a, Array::new(vec![m, n], d)?);
            }
            Op::SliceCols(a, start) => {
                let (m, n) = self.value(*a).dims2();
                let mut d = vec![0.0; m * n];
                for r in 0..m {
                    d[r * n + start..r * n + start + gn].copy_from_slice(g.row_slice(r));
                }
                self.acc(grads, *a, Array::new(vec![m, n], d)?);
            }
            Op::Transpose(a) => self.acc(grads, *a, g.transpose()),
            Op::Reshape(a) => {
                let (m, n) = self.value(*a).dims2();
                self.acc(grads, *a, g.reshape(&[m, n])?);
            }
            Op::Patchify { input, batch, h, w } => {
                let c = self.value(*input).cols();
                let (h2, w2) = (h / 2, w / 2);
                let mut d = vec![0.0; batch * h * w * c];
                let mut row = 0;
                for b in 0..*batch {
                    for y in 0..h2 {
                        for x in 0..w2 {
                            let gr = g.row_slice(row);
                            for (slot, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
                                let dst = (b * h + 2 * y + dy) * w + 2 * x + dx;
                                d[dst * c..(dst + 1) * c]
                                    .copy_from_slice(&gr[slot * c..(slot + 1) * c]);
                            }
                            row += 1;
                        }
                    }
                }
                self.acc(grads, *input, Array::new(vec![batch * h * w, c], d)?);
            }
            Op::SumAll(a) => {
                let (m, n) = self.value(*a).dims2();
                self.acc(grads, *a, Array::filled(&[m, n], g.data()[0]));
            }
            Op::SumCols(a) => {
                let (m, n) = self.value(*a).dims2();
                let mut d = Vec::with_capacity(m * n);
                for _ in 0..m {
                    d.extend_from_slice(g.data());
                }
                self.acc(grads, *a, Array::new(vec![m, n], d)?);
            }
            Op::MseConst(a, target) => {
                let va = self.value(*a);
                let scale = 2.0 * g.data()[0] / va.len().max(1) as f64;
                let d = va
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(x, t)| scale * (x - t))
                    .collect();
                self.acc(grads, *a, Array::new(vec![va.rows(), va.cols()], d)?);
            }
            Op::StraightThrough(a) => self.acc(grads, *a, g.clone()),
        }
        Ok(())
    }
}

/// Output of [`Graph::backward`].
pub struct Gradients {
    nodes: Vec<Option<Array>>,
    params: HashMap<ParamId, Array>,
}

impl Gradients {
    /// Gradient with respect to a non-parameter node, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&Array> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Array> {
        self.params.get(&id)
    }

    pub fn accumulate_into(&self, out: &mut ParamGrads) {
        let mut ids: Vec<_> = self.params.keys().copied().collect();
        ids.sort();
        for id in ids {
            out.accumulate(id, &self.params[&id]);
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Index of the first maximal entry.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn softmax_rows(a: &Array) -> Array {
    let (m, n) = a.dims2();
    let mut out = vec![0.0; m * n];
    for r in 0..m {
        let row = a.row_slice(r);
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (o, &x) in out[r * n..(r + 1) * n].iter_mut().zip(row) {
            *o = (x - mx).exp();
            z += *o;
        }
        for o in &mut out[r * n..(r + 1) * n] {
            *o /= z;
        }
    }
    Array::new(vec![m, n], out).expect("same length")
}

fn softmax_rows_backward(y: &Array, g: &Array) -> Array {
    let (m, n) = y.dims2();
    let mut d = vec![0.0; m * n];
    for r in 0..m {
        let yr = y.row_slice(r);
        let gr = g.row_slice(r);
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for c in 0..n {
            d[r * n + c] = yr[c] * (gr[c] - dot);
        }
    }
    Array::new(vec![m, n], d).expect("same length")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_visits_shared_subexpression_once_per_use() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.variable(Array::scalar(3.0));
        let y = g.mul(x, x).unwrap(); // x^2
        let z = g.add(y, x).unwrap(); // x^2 + x
        let grads = g.backward(z).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[7.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let c = g.constant(Array::scalar(2.0));
        let x = g.variable(Array::scalar(5.0));
        let y = g.mul(c, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.wrt(c).is_none());
        assert_eq!(grads.wrt(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn straight_through_is_one_hot_forward() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.variable(Array::row(&[0.1, 0.7, 0.2]));
        let h = g.straight_through(x);
        assert_eq!(g.value(h).data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn patchify_layout() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        // one 2x4 image with one channel holding its pixel index
        let x = g.constant(Array::new(vec![8, 1], (0..8).map(f64::from).collect()).unwrap());
        let p = g.patchify(x, 1, 2, 4).unwrap();
        assert_eq!(g.value(p).shape(), &[2, 4]);
        assert_eq!(g.value(p).data(), &[0.0, 1.0, 4.0, 5.0, 2.0, 3.0, 6.0, 7.0]);
    }
}
