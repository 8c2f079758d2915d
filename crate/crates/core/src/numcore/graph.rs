//! Define-by-run computation graph with reverse-mode gradients.
//!
//! Every operation appends a node holding its forward value. Nodes are
//! appended after their inputs, so walking the node list backwards is a
//! reverse topological order and `backward` visits each node once.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Element-wise operation kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    /// Hadamard product.
    Mul,
    Div,
    Sigmoid,
    Tanh,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Clamp(Var, f64, f64),
    MatMul(Var, Var),
    Softmax(Var),
    LogSumExp(Var),
    RowSum(Var),
    ColMean(Var),
    SumAll(Var),
    MeanAll(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// A single forward recording. Not `Sync`; confine to one thread.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

/// Broadcast layout of one operand inside a 2-D output.
#[derive(Clone, Copy)]
struct Strides {
    row: usize,
    col: usize,
}

impl Strides {
    fn of(dims: (usize, usize)) -> Self {
        Strides {
            row: if dims.0 == 1 { 0 } else { dims.1 },
            col: if dims.1 == 1 { 0 } else { 1 },
        }
    }

    #[inline]
    fn at(self, r: usize, c: usize) -> usize {
        r * self.row + c * self.col
    }
}

fn broadcast_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    if a.shape() == b.shape() {
        return Ok(a.shape().to_vec());
    }
    if b.is_scalar() {
        return Ok(a.shape().to_vec());
    }
    if a.is_scalar() {
        return Ok(b.shape().to_vec());
    }
    let (ar, ac) = a.dims2();
    let (br, bc) = b.dims2();
    let rows_ok = ar == br || ar == 1 || br == 1;
    let cols_ok = ac == bc || ac == 1 || bc == 1;
    if !(rows_ok && cols_ok) {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let (r, c) = (ar.max(br), ac.max(bc));
    if a.shape().len() == 2 || b.shape().len() == 2 {
        Ok(vec![r, c])
    } else {
        Ok(vec![c])
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let shape = broadcast_shape(name, va, vb)?;
        let data = if va.shape() == vb.shape() {
            va.data()
                .iter()
                .zip(vb.data())
                .map(|(&x, &y)| f(x, y))
                .collect()
        } else {
            let out = Tensor::zeros(&shape);
            let (rows, cols) = out.dims2();
            let (sa, sb) = (Strides::of(va.dims2()), Strides::of(vb.dims2()));
            let (da, db) = (va.data(), vb.data());
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for c in 0..cols {
                    data.push(f(da[sa.at(r, c)], db[sb.at(r, c)]));
                }
            }
            data
        };
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor::new(shape, data)?, op, tracked))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let va = &self.nodes[a.0].value;
        let data = va.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("shape preserved");
        let tracked = self.tracked(a);
        self.push(value, op, tracked)
    }

    /// Dispatch for the element-wise family; unary kinds ignore `b`.
    pub fn elementwise(&mut self, kind: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        let need = |b: Option<Var>| {
            b.ok_or(Error::InvalidShape {
                op: "elementwise",
                reason: format!("{kind:?} needs two operands"),
            })
        };
        match kind {
            Elementwise::Add => self.add(a, need(b)?),
            Elementwise::Sub => self.sub(a, need(b)?),
            Elementwise::Mul => self.mul(a, need(b)?),
            Elementwise::Div => self.div(a, need(b)?),
            Elementwise::Sigmoid => Ok(self.sigmoid(a)),
            Elementwise::Tanh => Ok(self.tanh(a)),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| x * k, Op::Scale(a, k))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    /// Square root; the gradient at exactly zero is taken as zero.
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape().len() != 2 || vb.shape().len() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let (m, k) = va.dims2();
        let n = vb.dims2().1;
        let out = matmul_raw(va.data(), vb.data(), m, k, n);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), tracked))
    }

    /// Softmax along the last axis, with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let va = &self.nodes[a.0].value;
        if va.numel() == 0 {
            return Err(Error::EmptyInput("softmax"));
        }
        let (rows, cols) = va.dims2();
        let mut data = va.data().to_vec();
        for r in 0..rows {
            softmax_in_place(&mut data[r * cols..(r + 1) * cols]);
        }
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::Softmax(a), tracked))
    }

    /// Row-wise log-sum-exp, `[m, n] -> [m, 1]`.
    pub fn logsumexp_rows(&mut self, a: Var) -> Result<Var> {
        let va = &self.nodes[a.0].value;
        if va.numel() == 0 {
            return Err(Error::EmptyInput("logsumexp_rows"));
        }
        let (rows, cols) = va.dims2();
        let data = (0..rows)
            .map(|r| logsumexp(&va.data()[r * cols..(r + 1) * cols]))
            .collect();
        let tracked = self.tracked(a);
        Ok(self.push(Tensor::matrix(rows, 1, data)?, Op::LogSumExp(a), tracked))
    }

    /// Sum of each row, `[m, n] -> [m, 1]`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let (rows, cols) = va.dims2();
        let data = va.data().chunks(cols).map(|r| r.iter().sum()).collect();
        let tracked = self.tracked(a);
        self.push(
            Tensor::matrix(rows, 1, data).expect("row sum"),
            Op::RowSum(a),
            tracked,
        )
    }

    /// Mean of each column, `[m, n] -> [1, n]`.
    pub fn col_mean(&mut self, a: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let (rows, cols) = va.dims2();
        let mut data = vec![0.0; cols];
        for row in va.data().chunks(cols) {
            for (acc, x) in data.iter_mut().zip(row) {
                *acc += x;
            }
        }
        for v in &mut data {
            *v /= rows as f64;
        }
        let tracked = self.tracked(a);
        self.push(
            Tensor::matrix(1, cols, data).expect("col mean"),
            Op::ColMean(a),
            tracked,
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data().iter().sum();
        let tracked = self.tracked(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), tracked)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let s = va.data().iter().sum::<f64>() / va.numel() as f64;
        let tracked = self.tracked(a);
        self.push(Tensor::scalar(s), Op::MeanAll(a), tracked)
    }

    /// Concatenate 2-D operands with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::EmptyInput("concat_cols"))?;
        let rows = self.nodes[first.0].value.dims2().0;
        let mut total = 0;
        for p in parts {
            let v = &self.nodes[p.0].value;
            if v.dims2().0 != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    left: self.nodes[first.0].value.shape().to_vec(),
                    right: v.shape().to_vec(),
                });
            }
            total += v.dims2().1;
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.nodes[p.0].value.row(r));
            }
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(
            Tensor::matrix(rows, total, data)?,
            Op::ConcatCols(parts.to_vec()),
            tracked,
        ))
    }

    /// Columns `start..start + len` of a 2-D operand.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = &self.nodes[a.0].value;
        let (rows, cols) = va.dims2();
        if start + len > cols {
            return Err(Error::InvalidShape {
                op: "slice_cols",
                reason: format!("columns {start}..{} out of {cols}", start + len),
            });
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&va.row(r)[start..start + len]);
        }
        let tracked = self.tracked(a);
        Ok(self.push(
            Tensor::matrix(rows, len, data)?,
            Op::SliceCols(a, start),
            tracked,
        ))
    }

    /// Gradient accumulated into `v` by the last `backward`; zeros when the
    /// node did not influence the loss.
    pub fn grad(&self, v: Var) -> Tensor {
        let shape = self.nodes[v.0].value.shape().to_vec();
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => Tensor::new(shape, g.clone()).expect("grad shape"),
            None => Tensor::zeros(&shape),
        }
    }

    /// Reverse pass from a scalar loss. Resets gradients from any earlier call.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked || matches!(node.op, Op::Leaf) {
                continue;
            }
            // Interior gradients are consumed here; only leaves keep theirs.
            if let Some(g) = self.grads[i].take() {
                self.propagate(i, &g);
            }
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let out_dims = nodes[i].value.dims2();
        let cols = out_dims.1;
        let val = |v: Var| nodes[v.0].value.data();
        match &nodes[i].op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                acc_broadcast(nodes, grads, a, out_dims, |k, _| g[k]);
                acc_broadcast(nodes, grads, b, out_dims, |k, _| g[k]);
            }
            &Op::Sub(a, b) => {
                acc_broadcast(nodes, grads, a, out_dims, |k, _| g[k]);
                acc_broadcast(nodes, grads, b, out_dims, |k, _| -g[k]);
            }
            &Op::Mul(a, b) => {
                let (sa, sb) = (strides(nodes, a), strides(nodes, b));
                let (va, vb) = (val(a), val(b));
                acc_broadcast(nodes, grads, a, out_dims, |k, (r, c)| {
                    g[k] * vb[sb.at(r, c)]
                });
                acc_broadcast(nodes, grads, b, out_dims, |k, (r, c)| {
                    g[k] * va[sa.at(r, c)]
                });
            }
            &Op::Div(a, b) => {
                let (sa, sb) = (strides(nodes, a), strides(nodes, b));
                let (va, vb) = (val(a), val(b));
                acc_broadcast(nodes, grads, a, out_dims, |k, (r, c)| {
                    g[k] / vb[sb.at(r, c)]
                });
                acc_broadcast(nodes, grads, b, out_dims, |k, (r, c)| {
                    let y = vb[sb.at(r, c)];
                    -g[k] * va[sa.at(r, c)] / (y * y)
                });
            }
            &Op::Neg(a) => acc(nodes, grads, a, |s| zip_add(s, g, |gi, _| -gi)),
            &Op::Scale(a, f) => acc(nodes, grads, a, |s| zip_add(s, g, |gi, _| gi * f)),
            &Op::Sigmoid(a) => {
                let y = val(Var(i));
                acc(nodes, grads, a, |s| zip_add(s, g, |gi, k| gi * y[k] * (1.0 - y[k])));
            }
            &Op::Tanh(a) => {
                let y = val(Var(i));
                acc(nodes, grads, a, |s| zip_add(s, g, |gi, k| gi * (1.0 - y[k] * y[k])));
            }
            &Op::Exp(a) => {
                let y = val(Var(i));
                acc(nodes, grads, a, |s| zip_add(s, g, |gi, k| gi * y[k]));
            }
            &Op::Sqrt(a) => {
                let y = val(Var(i));
                acc(nodes, grads, a, |s| {
                    zip_add(s, g, |gi, k| if y[k] > 0.0 { gi * 0.5 / y[k] } else { 0.0 })
                });
            }
            &Op::Log(a) => {
                let x = val(a);
                acc(nodes, grads, a, |s| zip_add(s, g, |gi, k| gi / x[k]));
            }
            &Op::Clamp(a, lo, hi) => {
                let x = val(a);
                acc(nodes, grads, a, |s| {
                    zip_add(s, g, |gi, k| if x[k] >= lo && x[k] <= hi { gi } else { 0.0 })
                });
            }
            &Op::MatMul(a, b) => {
                let (va, vb) = (val(a), val(b));
                let (m, k) = nodes[a.0].value.dims2();
                let n = cols;
                acc(nodes, grads, a, |s| {
                    for r in 0..m {
                        let gr = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            s[r * k + p] += dot(gr, &vb[p * n..(p + 1) * n]);
                        }
                    }
                });
                acc(nodes, grads, b, |s| {
                    for r in 0..m {
                        let gr = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let av = va[r * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for (sj, gj) in s[p * n..(p + 1) * n].iter_mut().zip(gr) {
                                *sj += av * gj;
                            }
                        }
                    }
                });
            }
            &Op::Softmax(a) => {
                let y = val(Var(i));
                acc(nodes, grads, a, |s| {
                    for r in 0..out_dims.0 {
                        let span = r * cols..(r + 1) * cols;
                        let inner = dot(&g[span.clone()], &y[span.clone()]);
                        for k in span {
                            s[k] += y[k] * (g[k] - inner);
                        }
                    }
                });
            }
            &Op::LogSumExp(a) => {
                let x = val(a);
                let out = val(Var(i));
                let xc = nodes[a.0].value.dims2().1;
                acc(nodes, grads, a, |s| {
                    for (r, (&lse, &gr)) in out.iter().zip(g).enumerate() {
                        for k in r * xc..(r + 1) * xc {
                            s[k] += gr * (x[k] - lse).exp();
                        }
                    }
                });
            }
            &Op::RowSum(a) => {
                let ac = nodes[a.0].value.dims2().1;
                acc(nodes, grads, a, |s| {
                    for (row, &gr) in s.chunks_mut(ac).zip(g) {
                        row.iter_mut().for_each(|v| *v += gr);
                    }
                });
            }
            &Op::ColMean(a) => {
                let (ar, ac) = nodes[a.0].value.dims2();
                let inv = 1.0 / ar as f64;
                acc(nodes, grads, a, |s| {
                    for row in s.chunks_mut(ac) {
                        for (v, gc) in row.iter_mut().zip(g) {
                            *v += gc * inv;
                        }
                    }
                });
            }
            &Op::SumAll(a) => acc(nodes, grads, a, |s| s.iter_mut().for_each(|v| *v += g[0])),
            &Op::MeanAll(a) => {
                let inv = 1.0 / nodes[a.0].value.numel() as f64;
                acc(nodes, grads, a, |s| s.iter_mut().for_each(|v| *v += g[0] * inv));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = nodes[p.0].value.dims2().1;
                    acc(nodes, grads, p, |s| {
                        for (r, row) in s.chunks_mut(pc).enumerate() {
                            let src = &g[r * cols + offset..r * cols + offset + pc];
                            row.iter_mut().zip(src).for_each(|(v, gv)| *v += gv);
                        }
                    });
                    offset += pc;
                }
            }
            &Op::SliceCols(a, start) => {
                let ac = nodes[a.0].value.dims2().1;
                acc(nodes, grads, a, |s| {
                    for (r, row) in s.chunks_mut(ac).enumerate() {
                        let src = &g[r * cols..(r + 1) * cols];
                        row[start..start + cols]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(v, gv)| *v += gv);
                    }
                });
            }
        }
    }
}

fn strides(nodes: &[Node], v: Var) -> Strides {
    Strides::of(nodes[v.0].value.dims2())
}

fn acc(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
    if !nodes[v.0].tracked {
        return;
    }
    let n = nodes[v.0].value.numel();
    f(grads[v.0].get_or_insert_with(|| vec![0.0; n]));
}

/// Accumulate into a broadcast operand; `local(k, (r, c))` gives the
/// contribution of output element `k` at position `(r, c)`.
fn acc_broadcast(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    v: Var,
    out_dims: (usize, usize),
    local: impl Fn(usize, (usize, usize)) -> f64,
) {
    let st = strides(nodes, v);
    let same = nodes[v.0].value.dims2() == out_dims;
    acc(nodes, grads, v, |s| {
        if same {
            for (k, sk) in s.iter_mut().enumerate() {
                *sk += local(k, (k / out_dims.1, k % out_dims.1));
            }
            return;
        }
        for r in 0..out_dims.0 {
            for c in 0..out_dims.1 {
                s[st.at(r, c)] += local(r * out_dims.1 + c, (r, c));
            }
        }
    });
}

#[inline]
fn zip_add(slot: &mut [f64], g: &[f64], f: impl Fn(f64, usize) -> f64) {
    for (k, (s, &gi)) in slot.iter_mut().zip(g).enumerate() {
        *s += f(gi, k);
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for r in 0..m {
        let orow = &mut out[r * n..(r + 1) * n];
        for p in 0..k {
            let av = a[r * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(xs: &mut [f64]) {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - m).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}
