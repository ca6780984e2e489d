//! Reverse-mode gradient tape.
//!
//! Every forward op appends one node holding its output value and the handles
//! of its inputs. `backward` walks the nodes in reverse recording order, so each
//! recorded op is visited exactly once. The tape is rebuilt for every forward
//! pass and dropped after the backward pass.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::params::{ParamId, ParamStore};
use crate::numcore::sparse::SparseMatrix;
use crate::numcore::tensor::{gemm_a_bt, gemm_at_b, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Pointwise unary operations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Relu,
    /// ELU with α = 1.
    Elu,
    LeakyRelu(f64),
    Tanh,
    Exp,
    Log,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMM(Arc<SparseMatrix>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBroadcast(Var, Var),
    Unary(Unary, Var),
    Scale(Var, f64),
    MulConst(Var, Arc<Vec<f64>>),
    Sum(Var),
    MeanRows(Var),
    GatherRows(Var, Arc<Vec<usize>>),
    ScatterAddRows(Var, Arc<Vec<usize>>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    RowDot(Var, Var),
    MulRowwise(Var, Var),
    ScaleBy(Var, Var),
    SoftmaxRows(Var),
    SegmentSoftmax(Var, Arc<Vec<usize>>),
    EdgeAggregate {
        alpha: Var,
        z: Var,
        src: Arc<Vec<usize>>,
        dst: Arc<Vec<usize>>,
    },
    CrossEntropy {
        logits: Var,
        rows: Arc<Vec<usize>>,
        labels: Arc<Vec<usize>>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Dynamically recorded computation graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(usize, ParamId)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` influenced the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds every parameter gradient into the store's gradient buffers.
    pub fn accumulate(&self, store: &mut ParamStore) {
        for &(node, id) in &self.params {
            if let Some(g) = &self.grads[node] {
                store.grad_mut(id).add_assign(g);
            }
        }
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(Error::dim(op, t.shape(), &[0, 0]));
    }
    Ok((t.shape()[0], t.shape()[1]))
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a constant (no gradient flows into it).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Records a leaf that receives a gradient.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Records a parameter leaf; its gradient is routed back to `store` by
    /// [`Gradients::accumulate`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.push(store.value(id).clone(), Op::Leaf, true);
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out = ta.matmul(tb)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Sparse-dense product; the sparse matrix is a constant.
    pub fn spmm(&mut self, adj: &Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let out = adj.spmm(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SpMM(Arc::clone(adj), x), rg))
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Sums a list of same-shaped values.
    pub fn add_all(&mut self, vars: &[Var]) -> Result<Var> {
        let (&first, rest) = vars
            .split_first()
            .ok_or_else(|| Error::Contract("add_all of an empty list".into()))?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    /// `x[m×n] + b[1×n]` broadcast over rows.
    pub fn add_row_broadcast(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let (m, n) = matrix("add_row_broadcast", tx)?;
        if tb.len() != n {
            return Err(Error::dim("add_row_broadcast", tx.shape(), tb.shape()));
        }
        let mut data = tx.data().to_vec();
        for i in 0..m {
            for (o, &bv) in data[i * n..(i + 1) * n].iter_mut().zip(tb.data()) {
                *o += bv;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::AddRowBroadcast(x, b), rg))
    }

    pub fn unary(&mut self, kind: Unary, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if kind == Unary::Log {
            if let Some(bad) = tx.data().iter().find(|&&v| v <= 0.0) {
                return Err(Error::Domain {
                    op: "log",
                    msg: format!("non-positive input {bad}"),
                });
            }
        }
        let f = |v: f64| -> f64 {
            match kind {
                Unary::Relu => v.max(0.0),
                Unary::Elu => {
                    if v >= 0.0 {
                        v
                    } else {
                        v.exp_m1()
                    }
                }
                Unary::LeakyRelu(s) => {
                    if v >= 0.0 {
                        v
                    } else {
                        s * v
                    }
                }
                Unary::Tanh => v.tanh(),
                Unary::Exp => v.exp(),
                Unary::Log => v.ln(),
            }
        };
        let out = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|&v| f(v)).collect())?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Unary(kind, x), rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Relu, x)
    }

    pub fn elu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Elu, x)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.unary(Unary::LeakyRelu(slope), x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Tanh, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Log, x)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let tx = self.value(x);
        let out = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|v| v * c).collect())
            .expect("same shape");
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, c), rg)
    }

    /// Elementwise product with a constant buffer of the same length.
    pub fn mul_const(&mut self, x: Var, c: Arc<Vec<f64>>) -> Result<Var> {
        let tx = self.value(x);
        if tx.len() != c.len() {
            return Err(Error::dim("mul_const", tx.shape(), &[c.len()]));
        }
        let out = Tensor::new(
            tx.shape().to_vec(),
            tx.data().iter().zip(c.iter()).map(|(a, b)| a * b).collect(),
        )?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::MulConst(x, c), rg))
    }

    /// Inverted dropout: kept entries are scaled by `1/(1-p)`. Identity when
    /// `training` is false or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        self.mul_const(x, Arc::new(mask))
    }

    /// Sum of all entries, as a 1×1 value.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Column means: `[m×n] → [1×n]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = matrix("mean_rows", tx)?;
        if m == 0 {
            return Err(Error::Contract("mean_rows over zero rows".into()));
        }
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, &v) in out.iter_mut().zip(tx.row(i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(1, n, out)?, Op::MeanRows(x), rg))
    }

    /// `out[e] = x[idx[e]]`.
    pub fn gather_rows(&mut self, x: Var, idx: &Arc<Vec<usize>>) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = matrix("gather_rows", tx)?;
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx.iter() {
            if i >= m {
                return Err(Error::Contract(format!("gather index {i} out of range {m}")));
            }
            out.extend_from_slice(tx.row(i));
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(idx.len(), n, out)?, Op::GatherRows(x, Arc::clone(idx)), rg))
    }

    /// `out[idx[e]] += x[e]`, producing `rows` output rows.
    pub fn scatter_add_rows(&mut self, x: Var, idx: &Arc<Vec<usize>>, rows: usize) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = matrix("scatter_add_rows", tx)?;
        if m != idx.len() {
            return Err(Error::dim("scatter_add_rows", tx.shape(), &[idx.len()]));
        }
        let mut out = vec![0.0; rows * n];
        for (e, &i) in idx.iter().enumerate() {
            if i >= rows {
                return Err(Error::Contract(format!("scatter index {i} out of range {rows}")));
            }
            for (o, &v) in out[i * n..(i + 1) * n].iter_mut().zip(tx.row(e)) {
                *o += v;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(rows, n, out)?, Op::ScatterAddRows(x, Arc::clone(idx)), rg))
    }

    /// Columns `start..start+width`.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = matrix("slice_cols", tx)?;
        if start + width > n {
            return Err(Error::dim("slice_cols", tx.shape(), &[start, width]));
        }
        let mut out = Vec::with_capacity(m * width);
        for i in 0..m {
            out.extend_from_slice(&tx.row(i)[start..start + width]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(m, width, out)?, Op::SliceCols(x, start), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_cols of an empty list".into()));
        }
        let m = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            let (pm, pn) = matrix("concat_cols", t)?;
            if pm != m {
                return Err(Error::dim("concat_cols", self.value(parts[0]).shape(), t.shape()));
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_rows of an empty list".into()));
        }
        let n = self.value(parts[0]).cols();
        let mut m = 0;
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            let (pm, pn) = matrix("concat_rows", t)?;
            if pn != n {
                return Err(Error::dim("concat_rows", self.value(parts[0]).shape(), t.shape()));
            }
            m += pm;
            out.extend_from_slice(t.data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Row-wise dot product: `[m×n]·[m×n] → [m×1]`. A `[1×n]` right operand
    /// is broadcast over rows.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, n) = matrix("row_dot", ta)?;
        let (bm, bn) = matrix("row_dot", tb)?;
        if bn != n || (bm != m && bm != 1) {
            return Err(Error::dim("row_dot", ta.shape(), tb.shape()));
        }
        let out: Vec<f64> = (0..m)
            .map(|i| {
                let br = if bm == 1 { tb.row(0) } else { tb.row(i) };
                ta.row(i).iter().zip(br).map(|(x, y)| x * y).sum()
            })
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, 1, out)?, Op::RowDot(a, b), rg))
    }

    /// `x[m×n] * s[m×1]`, scaling each row by its own factor.
    pub fn mul_rowwise(&mut self, x: Var, s: Var) -> Result<Var> {
        let (tx, ts) = (self.value(x), self.value(s));
        let (m, n) = matrix("mul_rowwise", tx)?;
        if ts.shape() != [m, 1] {
            return Err(Error::dim("mul_rowwise", tx.shape(), ts.shape()));
        }
        let mut out = tx.data().to_vec();
        for i in 0..m {
            let f = ts.data()[i];
            out[i * n..(i + 1) * n].iter_mut().for_each(|v| *v *= f);
        }
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MulRowwise(x, s), rg))
    }

    /// `x * s` for a learned or computed 1×1 scalar `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        let (tx, ts) = (self.value(x), self.value(s));
        if ts.len() != 1 {
            return Err(Error::dim("scale_by", tx.shape(), ts.shape()));
        }
        let f = ts.data()[0];
        let out = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|v| v * f).collect())?;
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(out, Op::ScaleBy(x, s), rg))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = matrix("softmax_rows", tx)?;
        if n == 0 {
            return Err(Error::Contract("softmax over zero columns".into()));
        }
        if !tx.is_finite() {
            return Err(Error::Numeric("softmax_rows: non-finite input".into()));
        }
        let mut out = tx.data().to_vec();
        for i in 0..m {
            softmax_in_place(&mut out[i * n..(i + 1) * n]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::SoftmaxRows(x), rg))
    }

    /// Softmax over groups of rows sharing a segment id, independently per
    /// column. `scores` is `[E×C]`, `segments[e]` is the group of row `e`.
    pub fn segment_softmax(&mut self, scores: Var, segments: &Arc<Vec<usize>>) -> Result<Var> {
        let ts = self.value(scores);
        let (e, c) = matrix("segment_softmax", ts)?;
        if segments.len() != e {
            return Err(Error::dim("segment_softmax", ts.shape(), &[segments.len()]));
        }
        if !ts.is_finite() {
            return Err(Error::Numeric("segment_softmax: non-finite scores".into()));
        }
        let out = segment_softmax_values(ts.data(), segments, c);
        let rg = self.rg(scores);
        Ok(self.push(
            Tensor::matrix(e, c, out)?,
            Op::SegmentSoftmax(scores, Arc::clone(segments)),
            rg,
        ))
    }

    /// Weighted message sum `out[dst[e]] += alpha[e] · z[src[e]]` over `rows`
    /// output rows, without materializing per-edge messages.
    pub fn edge_aggregate(
        &mut self,
        alpha: Var,
        z: Var,
        src: &Arc<Vec<usize>>,
        dst: &Arc<Vec<usize>>,
        rows: usize,
    ) -> Result<Var> {
        let (ta, tz) = (self.value(alpha), self.value(z));
        let (m, d) = matrix("edge_aggregate", tz)?;
        if ta.shape() != [src.len(), 1] || src.len() != dst.len() {
            return Err(Error::dim("edge_aggregate", ta.shape(), &[src.len(), dst.len()]));
        }
        let mut out = vec![0.0; rows * d];
        for (e, (&s, &t)) in src.iter().zip(dst.iter()).enumerate() {
            if s >= m || t >= rows {
                return Err(Error::Contract(format!("edge {s} -> {t} outside {m}x{rows}")));
            }
            let a = ta.data()[e];
            for (o, &v) in out[t * d..(t + 1) * d].iter_mut().zip(tz.row(s)) {
                *o += a * v;
            }
        }
        let rg = self.rg(alpha) || self.rg(z);
        Ok(self.push(
            Tensor::matrix(rows, d, out)?,
            Op::EdgeAggregate {
                alpha,
                z,
                src: Arc::clone(src),
                dst: Arc::clone(dst),
            },
            rg,
        ))
    }

    /// Mean negative log-likelihood of `labels` over the listed `rows`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        rows: &Arc<Vec<usize>>,
        labels: &Arc<Vec<usize>>,
    ) -> Result<Var> {
        let tl = self.value(logits);
        let (m, c) = matrix("cross_entropy", tl)?;
        if rows.is_empty() {
            return Err(Error::Contract("cross_entropy over an empty mask".into()));
        }
        if rows.len() != labels.len() {
            return Err(Error::dim("cross_entropy", &[rows.len()], &[labels.len()]));
        }
        let mut total = 0.0;
        for (&r, &y) in rows.iter().zip(labels.iter()) {
            if r >= m {
                return Err(Error::Contract(format!("mask row {r} out of range {m}")));
            }
            if y >= c {
                return Err(Error::Contract(format!("label {y} outside {c} classes")));
            }
            let row = tl.row(r);
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let loss = total / rows.len() as f64;
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                rows: Arc::clone(rows),
                labels: Arc::clone(labels),
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|p| (i, p)))
            .collect();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.rg(*a) {
                    let ga = slot(grads, *a, ta.shape());
                    gemm_a_bt(gd, tb.data(), ga.data_mut(), m, n, k);
                }
                if self.rg(*b) {
                    let gb = slot(grads, *b, tb.shape());
                    gemm_at_b(ta.data(), gd, gb.data_mut(), m, k, n);
                }
            }
            Op::SpMM(adj, x) => {
                if self.rg(*x) {
                    let tx = self.value(*x);
                    let d = tx.cols();
                    let gx = slot(grads, *x, tx.shape());
                    adj.spmm_t_into(gd, d, gx.data_mut());
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |_, i| gd[i]);
                self.acc(grads, *b, |_, i| gd[i]);
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |_, i| gd[i]);
                self.acc(grads, *b, |_, i| -gd[i]);
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |_, i| gd[i] * db[i]);
                self.acc(grads, *b, |_, i| gd[i] * da[i]);
            }
            Op::AddRowBroadcast(x, b) => {
                self.acc(grads, *x, |_, i| gd[i]);
                if self.rg(*b) {
                    let n = g.cols();
                    let tb = self.value(*b);
                    let gb = slot(grads, *b, tb.shape());
                    for (i, v) in gd.iter().enumerate() {
                        gb.data_mut()[i % n] += v;
                    }
                }
            }
            Op::Unary(kind, x) => {
                let dx = self.value(*x).data();
                let y = node.value.data();
                let kind = *kind;
                self.acc(grads, *x, |_, i| {
                    let d = match kind {
                        Unary::Relu => {
                            if dx[i] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Unary::Elu => {
                            if dx[i] >= 0.0 {
                                1.0
                            } else {
                                y[i] + 1.0
                            }
                        }
                        Unary::LeakyRelu(s) => {
                            if dx[i] >= 0.0 {
                                1.0
                            } else {
                                s
                            }
                        }
                        Unary::Tanh => 1.0 - y[i] * y[i],
                        Unary::Exp => y[i],
                        Unary::Log => 1.0 / dx[i],
                    };
                    gd[i] * d
                });
            }
            Op::Scale(x, c) => {
                let c = *c;
                self.acc(grads, *x, |_, i| gd[i] * c);
            }
            Op::MulConst(x, c) => {
                self.acc(grads, *x, |_, i| gd[i] * c[i]);
            }
            Op::Sum(x) => {
                let s = gd[0];
                self.acc(grads, *x, |_, _| s);
            }
            Op::MeanRows(x) => {
                let tx = self.value(*x);
                let (m, n) = (tx.rows(), tx.cols());
                self.acc(grads, *x, |_, i| gd[i % n] / m as f64);
            }
            Op::GatherRows(x, idx) => {
                if self.rg(*x) {
                    let tx = self.value(*x);
                    let n = tx.cols();
                    let gx = slot(grads, *x, tx.shape());
                    for (e, &r) in idx.iter().enumerate() {
                        for (o, &v) in gx.data_mut()[r * n..(r + 1) * n].iter_mut().zip(&gd[e * n..(e + 1) * n]) {
                            *o += v;
                        }
                    }
                }
            }
            Op::ScatterAddRows(x, idx) => {
                let n = g.cols();
                self.acc(grads, *x, |_, i| {
                    let (e, c) = (i / n, i % n);
                    gd[idx[e] * n + c]
                });
            }
            Op::SliceCols(x, start) => {
                let w = g.cols();
                let n = self.value(*x).cols();
                let start = *start;
                self.acc(grads, *x, |_, i| {
                    let (r, c) = (i / n, i % n);
                    if c >= start && c < start + w {
                        gd[r * w + c - start]
                    } else {
                        0.0
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let n = g.cols();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let o = off;
                    self.acc(grads, p, |_, i| gd[(i / w) * n + o + i % w]);
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    let o = off;
                    self.acc(grads, p, |_, i| gd[o + i]);
                    off += len;
                }
            }
            Op::RowDot(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let n = ta.cols();
                let b_bcast = tb.rows() == 1 && ta.rows() != 1;
                let (da, db) = (ta.data(), tb.data());
                self.acc(grads, *a, |_, i| {
                    let (r, c) = (i / n, i % n);
                    let bv = if b_bcast { db[c] } else { db[i] };
                    gd[r] * bv
                });
                if self.rg(*b) {
                    let gb = slot(grads, *b, tb.shape());
                    for (i, &av) in da.iter().enumerate() {
                        let (r, c) = (i / n, i % n);
                        let t = if b_bcast { c } else { i };
                        gb.data_mut()[t] += gd[r] * av;
                    }
                }
            }
            Op::EdgeAggregate { alpha, z, src, dst } => {
                let (ta, tz) = (self.value(*alpha), self.value(*z));
                let d = tz.cols();
                if self.rg(*alpha) {
                    let ga = slot(grads, *alpha, ta.shape());
                    for (e, (&s, &t)) in src.iter().zip(dst.iter()).enumerate() {
                        let dot: f64 = gd[t * d..(t + 1) * d].iter().zip(tz.row(s)).map(|(a, b)| a * b).sum();
                        ga.data_mut()[e] += dot;
                    }
                }
                if self.rg(*z) {
                    let gz = slot(grads, *z, tz.shape());
                    for (e, (&s, &t)) in src.iter().zip(dst.iter()).enumerate() {
                        let a = ta.data()[e];
                        for (o, &v) in gz.data_mut()[s * d..(s + 1) * d].iter_mut().zip(&gd[t * d..(t + 1) * d]) {
                            *o += a * v;
                        }
                    }
                }
            }
            Op::MulRowwise(x, s) => {
                let (tx, ts) = (self.value(*x), self.value(*s));
                let n = tx.cols();
                let (dx, ds) = (tx.data(), ts.data());
                self.acc(grads, *x, |_, i| gd[i] * ds[i / n]);
                if self.rg(*s) {
                    let gs = slot(grads, *s, ts.shape());
                    for (i, &xv) in dx.iter().enumerate() {
                        gs.data_mut()[i / n] += gd[i] * xv;
                    }
                }
            }
            Op::ScaleBy(x, s) => {
                let (dx, f) = (self.value(*x).data(), self.value(*s).data()[0]);
                self.acc(grads, *x, |_, i| gd[i] * f);
                if self.rg(*s) {
                    let dot: f64 = gd.iter().zip(dx).map(|(a, b)| a * b).sum();
                    let ts = self.value(*s);
                    slot(grads, *s, ts.shape()).data_mut()[0] += dot;
                }
            }
            Op::SoftmaxRows(x) => {
                let y = node.value.data();
                let n = node.value.cols();
                let dots: Vec<f64> = (0..node.value.rows())
                    .map(|r| (0..n).map(|c| gd[r * n + c] * y[r * n + c]).sum())
                    .collect();
                self.acc(grads, *x, |_, i| y[i] * (gd[i] - dots[i / n]));
            }
            Op::SegmentSoftmax(x, seg) => {
                let y = node.value.data();
                let c = node.value.cols();
                let nseg = seg.iter().copied().max().map_or(0, |m| m + 1);
                let mut dots = vec![0.0; nseg * c];
                for (e, &s) in seg.iter().enumerate() {
                    for k in 0..c {
                        dots[s * c + k] += gd[e * c + k] * y[e * c + k];
                    }
                }
                self.acc(grads, *x, |_, i| {
                    let (e, k) = (i / c, i % c);
                    y[i] * (gd[i] - dots[seg[e] * c + k])
                });
            }
            Op::CrossEntropy { logits, rows, labels } => {
                if self.rg(*logits) {
                    let tl = self.value(*logits);
                    let c = tl.cols();
                    let scale = gd[0] / rows.len() as f64;
                    let gl = slot(grads, *logits, tl.shape());
                    for (&r, &y) in rows.iter().zip(labels.iter()) {
                        let mut p = tl.row(r).to_vec();
                        softmax_in_place(&mut p);
                        for (k, pv) in p.iter().enumerate() {
                            let target = if k == y { 1.0 } else { 0.0 };
                            gl.data_mut()[r * c + k] += scale * (pv - target);
                        }
                    }
                }
            }
        }
    }

    /// Accumulates `f(grad_buffer, flat_index)` into the gradient of `v`.
    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, f: impl Fn(&Tensor, usize) -> f64) {
        if !self.rg(v) {
            return;
        }
        let t = self.value(v);
        let g = slot(grads, v, t.shape());
        for i in 0..g.len() {
            let d = f(t, i);
            g.data_mut()[i] += d;
        }
    }
}

fn slot<'a>(grads: &'a mut [Option<Tensor>], v: Var, shape: &[usize]) -> &'a mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

/// Untaped grouped softmax over `[E×C]` scores (column-independent).
pub fn segment_softmax_values(scores: &[f64], segments: &[usize], c: usize) -> Vec<f64> {
    let nseg = segments.iter().copied().max().map_or(0, |m| m + 1);
    let mut mx = vec![f64::NEG_INFINITY; nseg * c];
    for (e, &s) in segments.iter().enumerate() {
        for k in 0..c {
            let v = scores[e * c + k];
            if v > mx[s * c + k] {
                mx[s * c + k] = v;
            }
        }
    }
    let mut out = vec![0.0; scores.len()];
    let mut sum = vec![0.0; nseg * c];
    for (e, &s) in segments.iter().enumerate() {
        for k in 0..c {
            let v = (scores[e * c + k] - mx[s * c + k]).exp();
            out[e * c + k] = v;
            sum[s * c + k] += v;
        }
    }
    for (e, &s) in segments.iter().enumerate() {
        for k in 0..c {
            out[e * c + k] /= sum[s * c + k];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows)
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::new();
        let i2 = tape.constant(Tensor::identity(2));
        let b = tape.constant(t(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let out = tape.matmul(i2, b).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn relu_sign_cases() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[vec![-1.0, 0.0, 2.0]]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn elu_negative_one() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(-1.0));
        let y = tape.elu(x).unwrap();
        assert!((tape.value(y).item() - (-0.632_120_558_828_557_7)).abs() < 1e-12);
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[vec![1.0, 0.0]]));
        assert!(matches!(tape.log(x), Err(Error::Domain { .. })));
    }

    #[test]
    fn add_gradient_is_one() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[vec![0.3, -2.0]]));
        let b = tape.leaf(t(&[vec![1.0, 5.0]]));
        let s = tape.add(a, b).unwrap();
        let l = tape.sum(s);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(a).unwrap().data(), &[1.0, 1.0]);
        assert_eq!(g.wrt(b).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn softmax_rows_symmetry_and_stability() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[vec![0.0, 0.0], vec![1000.0, 1000.0]]));
        let y = tape.softmax_rows(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[vec![f64::NAN, 0.0]]));
        assert!(matches!(tape.softmax_rows(x), Err(Error::Numeric(_))));
    }

    #[test]
    fn segment_softmax_cases() {
        assert_eq!(segment_softmax_values(&[3.7], &[4], 1), vec![1.0]);
        assert_eq!(segment_softmax_values(&[2.0, 2.0], &[0, 0], 1), vec![0.5, 0.5]);
        // Empty groups produce nothing; groups are independent.
        let out = segment_softmax_values(&[1.0, 5.0, 1.0], &[2, 0, 2], 1);
        assert_eq!(out, vec![0.5, 1.0, 0.5]);
    }

    #[test]
    fn cross_entropy_limits() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[vec![0.0, 0.0], vec![50.0, -50.0]]));
        let l = tape
            .cross_entropy(x, &Arc::new(vec![0]), &Arc::new(vec![0]))
            .unwrap();
        assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);
        let l = tape
            .cross_entropy(x, &Arc::new(vec![1]), &Arc::new(vec![0]))
            .unwrap();
        assert!(tape.value(l).item() < 1e-40);
        assert!(tape.cross_entropy(x, &Arc::new(vec![]), &Arc::new(vec![])).is_err());
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn sum_and_square_gradients() {
        let mut tape = Tape::new();
        let w0 = t(&[vec![1.5, -2.0], vec![0.25, 3.0]]);
        let w = tape.leaf(w0.clone());
        let l = tape.sum(w);
        assert_eq!(tape.backward(l).unwrap().wrt(w).unwrap().data(), &[1.0; 4]);

        let mut tape = Tape::new();
        let w = tape.leaf(w0.clone());
        let sq = tape.mul(w, w).unwrap();
        let l = tape.sum(sq);
        let g = tape.backward(l).unwrap();
        let expect: Vec<f64> = w0.data().iter().map(|v| 2.0 * v).collect();
        assert_eq!(g.wrt(w).unwrap().data(), expect.as_slice());
    }

    #[test]
    fn repeated_accumulation_adds_up() {
        let mut store = ParamStore::new();
        let id = store.add("w", t(&[vec![1.0, 2.0]]));
        for _ in 0..2 {
            let mut tape = Tape::new();
            let w = tape.param(&store, id);
            let l = tape.sum(w);
            tape.backward(l).unwrap().accumulate(&mut store);
        }
        assert_eq!(store.grad(id).data(), &[2.0, 2.0]);
        store.zero_grad();
        assert_eq!(store.grad(id).data(), &[0.0, 0.0]);
    }

    #[test]
    fn dropout_identity_cases() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[vec![1.0, 2.0, 3.0]]));
        assert_eq!(tape.dropout(x, 0.0, true, &mut rng).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.9, false, &mut rng).unwrap(), x);
        let y = tape.dropout(x, 0.5, true, &mut rng).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(tape.value(x).data()) {
            assert!(*a == 0.0 || (*a - 2.0 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn edge_aggregate_matches_unfused_ops() {
        let src = Arc::new(vec![0, 1, 2, 2, 1]);
        let dst = Arc::new(vec![1, 1, 0, 2, 3]);
        let z = Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0], vec![-1.5, 0.25]]);
        let a = Tensor::from_rows(&[vec![0.2], vec![0.8], vec![1.0], vec![0.4], vec![0.6]]);
        let run = |fused: bool| {
            let mut t = Tape::new();
            let zv = t.leaf(z.clone());
            let av = t.leaf(a.clone());
            let out = if fused {
                t.edge_aggregate(av, zv, &src, &dst, 4).unwrap()
            } else {
                let m = t.gather_rows(zv, &src).unwrap();
                let m = t.mul_rowwise(m, av).unwrap();
                t.scatter_add_rows(m, &dst, 4).unwrap()
            };
            let sq = t.mul(out, out).unwrap();
            let loss = t.sum(sq);
            let g = t.backward(loss).unwrap();
            (t.value(out).clone(), g.wrt(zv).unwrap().clone(), g.wrt(av).unwrap().clone())
        };
        let (o1, gz1, ga1) = run(true);
        let (o2, gz2, ga2) = run(false);
        assert!(o1.max_abs_diff(&o2) < 1e-15);
        assert!(gz1.max_abs_diff(&gz2) < 1e-14);
        assert!(ga1.max_abs_diff(&ga2) < 1e-14);
    }
}
