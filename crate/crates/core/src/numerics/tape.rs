//! Reverse-mode differentiation over a linear record of primitive operations.
//!
//! A [`Tape`] is rebuilt for every forward pass. Values live in the tape's
//! nodes; [`Var`] is a cheap index handle. After [`Tape::backward`], each
//! node that participates in the loss holds its gradient in
//! [`Tensor::grad`].

use super::scan::{scan_backward, scan_forward, ScanCache, ScanInputs};
use super::{sigmoid, softplus, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T: Scalar> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Matmul(Var, Var),
    Softplus(Var),
    Exp(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Slice { src: Var, offset: usize },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<T> },
    Scan(Box<ScanNode<T>>),
}

#[derive(Debug)]
struct ScanNode<T: Scalar> {
    x: Var,
    delta: Var,
    b: Var,
    c: Var,
    a_log: Var,
    d_skip: Var,
    batch: usize,
    seq: usize,
    gate_override: Option<T>,
    cache: ScanCache<T>,
}

impl<T: Scalar> Op<T> {
    fn operands(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) | Op::Matmul(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::Softplus(a)
            | Op::Exp(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Reshape(a) => vec![*a],
            Op::Slice { src, .. } => vec![*src],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::Scan(s) => vec![s.x, s.delta, s.b, s.c, s.a_log, s.d_skip],
        }
    }
}

#[derive(Debug)]
struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Single-threaded operation record.
#[derive(Debug)]
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
    visits: Vec<usize>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            backward_done: false,
            visits: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Gradients are only accumulated for leaves created
    /// with `requires_grad` and for values derived from them.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let rg = op.operands().iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, rg)
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "add", |x, y| x + y)?;
        Ok(self.derived(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "sub", |x, y| x - y)?;
        Ok(self.derived(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "mul", |x, y| x * y)?;
        Ok(self.derived(t, Op::Mul(a, b)))
    }

    /// `a[m, n] + row[n]`, broadcast over the leading extent.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        let n = tr.len();
        if ta.shape().len() != 2 || ta.shape()[1] != n || tr.shape().len() != 1 {
            return Err(mismatch("add_row", ta.shape(), tr.shape()));
        }
        let mut data = ta.data().to_vec();
        for chunk in data.chunks_mut(n) {
            for (v, &r) in chunk.iter_mut().zip(tr.data()) {
                *v = *v + r;
            }
        }
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.derived(t, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Result<Var> {
        let ta = self.value(a);
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| x * k).collect())?;
        Ok(self.derived(t, Op::Scale(a, k)))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        matmul_into(ta.data(), tb.data(), &mut out, m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.derived(t, Op::Matmul(a, b)))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| softplus(x)).collect())?;
        Ok(self.derived(t, Op::Softplus(a)))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| x.exp()).collect())?;
        Ok(self.derived(t, Op::Exp(a)))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.data(a).iter().copied().sum();
        Ok(self.derived(Tensor::scalar(s), Op::Sum(a)))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.is_empty() {
            return Err(Error::invalid("mean of an empty tensor"));
        }
        let s: T = ta.data().iter().copied().sum();
        let m = s / T::lit(ta.len() as f64);
        Ok(self.derived(Tensor::scalar(m), Op::Mean(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape)?;
        Ok(self.derived(t, Op::Reshape(a)))
    }

    /// Contiguous flat slice of `src` starting at `offset`, viewed as `shape`.
    pub fn slice(&mut self, src: Var, offset: usize, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        let len: usize = shape.iter().product();
        let ts = self.value(src);
        if offset + len > ts.len() {
            return Err(mismatch("slice", ts.shape(), &shape));
        }
        let t = Tensor::new(shape, ts.data()[offset..offset + len].to_vec())?;
        Ok(self.derived(t, Op::Slice { src, offset }))
    }

    /// Mean softmax cross-entropy of `logits[batch, classes]` against `labels`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        let s = tl.shape();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(mismatch("cross_entropy", s, &[labels.len()]));
        }
        let classes = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let mut probs = vec![T::zero(); tl.len()];
        let mut total = T::zero();
        for (i, (row, p)) in tl.data().chunks(classes).zip(probs.chunks_mut(classes)).enumerate() {
            let lse = log_sum_exp(row);
            for (pj, &z) in p.iter_mut().zip(row) {
                *pj = (z - lse).exp();
            }
            total = total + lse - row[labels[i]];
        }
        let loss = total / T::lit(labels.len() as f64);
        Ok(self.derived(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Selective scan over `batch` sequences of length `seq`. Returns the
    /// per-step outputs `[batch*seq, d]` and the final states `[batch, d*n]`.
    #[allow(clippy::too_many_arguments)]
    pub fn selective_scan(
        &mut self,
        x: Var,
        delta: Var,
        b: Var,
        c: Var,
        a_log: Var,
        d_skip: Var,
        batch: usize,
        seq: usize,
        gate_override: Option<T>,
    ) -> Result<(Var, Var)> {
        let a_shape = self.shape(a_log).to_vec();
        if a_shape.len() != 2 {
            return Err(mismatch("selective_scan", &a_shape, &[0, 0]));
        }
        let (d, n) = (a_shape[0], a_shape[1]);
        let cache = {
            let inp = ScanInputs {
                x: self.data(x),
                delta: self.data(delta),
                b: self.data(b),
                c: self.data(c),
                a_log: self.data(a_log),
                d_skip: self.data(d_skip),
                batch,
                seq,
                d,
                n,
                gate_override,
            };
            scan_forward(&inp)?
        };
        let dn = d * n;
        let mut flat = cache.y.clone();
        for bi in 0..batch {
            flat.extend_from_slice(cache.final_state(bi, seq, dn));
        }
        let total = flat.len();
        let node = ScanNode {
            x,
            delta,
            b,
            c,
            a_log,
            d_skip,
            batch,
            seq,
            gate_override,
            cache,
        };
        let joint = self.derived(Tensor::new(vec![total], flat)?, Op::Scan(Box::new(node)));
        let y = self.slice(joint, 0, vec![batch * seq, d])?;
        let fin = self.slice(joint, batch * seq * d, vec![batch, dn])?;
        Ok((y, fin))
    }

    /// Clears all gradients so [`Tape::backward`] may run again.
    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.value.clear_grad();
        }
        self.backward_done = false;
    }

    /// Populates gradients of `loss` with respect to every value that
    /// requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Backward(
                "backward already ran on this tape; call reset_grads first".into(),
            ));
        }
        if self.nodes.is_empty() {
            return Err(Error::Backward("empty tape".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Backward(format!(
                "loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.visits.push(i);
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if let Some(g) = g {
                if node.requires_grad {
                    node.value.set_grad(g)?;
                }
            }
        }
        self.backward_done = true;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !wants(v) {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()]);
            f(slot);
        };
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |s| add_assign(s, g));
                acc(*b, &mut |s| add_assign(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_assign(s, g));
                acc(*b, &mut |s| {
                    for (x, &y) in s.iter_mut().zip(g) {
                        *x = *x - y;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (da, db) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                acc(*a, &mut |s| {
                    for ((x, &gy), &o) in s.iter_mut().zip(g).zip(db) {
                        *x = *x + gy * o;
                    }
                });
                acc(*b, &mut |s| {
                    for ((x, &gy), &o) in s.iter_mut().zip(g).zip(da) {
                        *x = *x + gy * o;
                    }
                });
            }
            Op::AddRow(a, row) => {
                acc(*a, &mut |s| add_assign(s, g));
                let n = nodes[row.0].value.len();
                acc(*row, &mut |s| {
                    for chunk in g.chunks(n) {
                        add_assign(s, chunk);
                    }
                });
            }
            Op::Scale(a, k) => acc(*a, &mut |s| {
                for (x, &gy) in s.iter_mut().zip(g) {
                    *x = *x + gy * *k;
                }
            }),
            Op::Matmul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                // dA = G B^T, dB = A^T G
                acc(*a, &mut |s| {
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &tb.data()[p * n..(p + 1) * n];
                            let dot: T = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                            s[r * k + p] = s[r * k + p] + dot;
                        }
                    }
                });
                acc(*b, &mut |s| {
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let av = ta.data()[r * k + p];
                            if av == T::zero() {
                                continue;
                            }
                            let srow = &mut s[p * n..(p + 1) * n];
                            for (x, &gy) in srow.iter_mut().zip(grow) {
                                *x = *x + av * gy;
                            }
                        }
                    }
                });
            }
            Op::Softplus(a) => {
                let da = nodes[a.0].value.data();
                acc(*a, &mut |s| {
                    for ((x, &gy), &z) in s.iter_mut().zip(g).zip(da) {
                        *x = *x + gy * sigmoid(z);
                    }
                });
            }
            Op::Exp(a) => {
                let out = nodes[i].value.data();
                acc(*a, &mut |s| {
                    for ((x, &gy), &o) in s.iter_mut().zip(g).zip(out) {
                        *x = *x + gy * o;
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |s| {
                for x in s.iter_mut() {
                    *x = *x + g[0];
                }
            }),
            Op::Mean(a) => {
                let k = g[0] / T::lit(nodes[a.0].value.len() as f64);
                acc(*a, &mut |s| {
                    for x in s.iter_mut() {
                        *x = *x + k;
                    }
                });
            }
            Op::Reshape(a) => acc(*a, &mut |s| add_assign(s, g)),
            Op::Slice { src, offset } => {
                acc(*src, &mut |s| add_assign(&mut s[*offset..*offset + g.len()], g));
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let classes = probs.len() / labels.len();
                let k = g[0] / T::lit(labels.len() as f64);
                acc(*logits, &mut |s| {
                    for (r, &label) in labels.iter().enumerate() {
                        for j in 0..classes {
                            let onehot = if j == label { T::one() } else { T::zero() };
                            let idx = r * classes + j;
                            s[idx] = s[idx] + k * (probs[idx] - onehot);
                        }
                    }
                });
            }
            Op::Scan(node) => {
                let (d, n) = (nodes[node.a_log.0].value.shape()[0], nodes[node.a_log.0].value.shape()[1]);
                let rows = node.batch * node.seq;
                let inp = ScanInputs {
                    x: nodes[node.x.0].value.data(),
                    delta: nodes[node.delta.0].value.data(),
                    b: nodes[node.b.0].value.data(),
                    c: nodes[node.c.0].value.data(),
                    a_log: nodes[node.a_log.0].value.data(),
                    d_skip: nodes[node.d_skip.0].value.data(),
                    batch: node.batch,
                    seq: node.seq,
                    d,
                    n,
                    gate_override: node.gate_override,
                };
                let (gy, gfin) = g.split_at(rows * d);
                let gr = scan_backward(&inp, &node.cache, gy, gfin);
                acc(node.x, &mut |s| add_assign(s, &gr.x));
                acc(node.delta, &mut |s| add_assign(s, &gr.delta));
                acc(node.b, &mut |s| add_assign(s, &gr.b));
                acc(node.c, &mut |s| add_assign(s, &gr.c));
                acc(node.a_log, &mut |s| add_assign(s, &gr.a_log));
                acc(node.d_skip, &mut |s| add_assign(s, &gr.d_skip));
            }
        }
    }

    /// Node indices in the order the last backward pass reached them.
    pub fn visits(&self) -> &[usize] {
        &self.visits
    }
}

fn add_assign<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (x, &y) in dst.iter_mut().zip(src) {
        *x = *x + y;
    }
}

/// `out[m, n] += a[m, k] * b[k, n]`.
pub fn matmul_into<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for r in 0..m {
        let orow = &mut out[r * n..(r + 1) * n];
        for p in 0..k {
            let av = a[r * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

pub fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = row.iter().map(|&z| (z - mx).exp()).sum();
    mx + s.ln()
}

/// Per-sample softmax cross-entropy of `logits[count, classes]`.
pub fn cross_entropy_per_sample<T: Scalar>(logits: &[T], classes: usize, labels: &[usize]) -> Vec<T> {
    logits
        .chunks(classes)
        .zip(labels)
        .map(|(row, &l)| log_sum_exp(row) - row[l])
        .collect()
}
