//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its forward value and the inputs
//! needed by its adjoint rule. [`Tape::backward`] walks the nodes in reverse
//! and accumulates gradients for every node reachable from a parameter.

use super::{NnError, Tensor};
use std::sync::Arc;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Exp(Var),
    Log(Var),
    Gather(Var, Arc<[usize]>),
    SegmentSum(Var, Arc<[usize]>),
    SegmentMean(Var, Arc<[usize]>, Arc<[f64]>),
    NeighborSoftmax(Var, Arc<[usize]>),
    Concat(Vec<Var>),
    Sum(Var),
    Mse(Var, Var, Arc<[bool]>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// How the right operand of a binary op is broadcast over the left.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    Row,
    Column,
    Scalar,
}

fn broadcast(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Broadcast, NnError> {
    match (b.rows(), b.cols()) {
        (r, c) if r == a.rows() && c == a.cols() => Ok(Broadcast::Same),
        (1, 1) => Ok(Broadcast::Scalar),
        (1, c) if c == a.cols() => Ok(Broadcast::Row),
        (r, 1) if r == a.rows() => Ok(Broadcast::Column),
        _ => Err(NnError::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        }),
    }
}

fn broadcast_index(mode: Broadcast, cols: usize, i: usize) -> usize {
    match mode {
        Broadcast::Same => i,
        Broadcast::Row => i % cols,
        Broadcast::Column => i / cols,
        Broadcast::Scalar => 0,
    }
}

/// Gradients indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros shaped like `like` when it received none.
    pub fn get_or_zeros(&self, var: Var, like: &Tensor) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.rows(), like.cols()))
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `a + b`, with `b` broadcast over rows, columns or as a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let value = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Elementwise `a * b`, broadcasting `b` like [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let value = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    fn binary(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, NnError> {
        let (x, y) = (self.value(a), self.value(b));
        let mode = broadcast(op, x, y)?;
        let cols = x.cols();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| f(v, y.data()[broadcast_index(mode, cols, i)]))
            .collect();
        Tensor::new(x.rows(), x.cols(), data)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let rg = self.needs(&[a]);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let rg = self.needs(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        let rg = self.needs(&[a]);
        self.push(value, Op::LeakyRelu(a, slope), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let rg = self.needs(&[a]);
        self.push(value, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        let rg = self.needs(&[a]);
        self.push(value, Op::Log(a), rg)
    }

    /// Rows of `a` picked by `index`.
    pub fn gather(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var, NnError> {
        let src = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= src.rows()) {
            return Err(NnError::IndexOutOfRange {
                index: bad,
                len: src.rows(),
            });
        }
        let value = src.gather_rows(&index);
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::Gather(a, index), rg))
    }

    fn check_segments(&self, a: Var, segment: &[usize], n: usize) -> Result<(), NnError> {
        let rows = self.value(a).rows();
        if segment.len() != rows {
            return Err(NnError::BadLength {
                expected: rows,
                got: segment.len(),
            });
        }
        match segment.iter().find(|&&s| s >= n) {
            Some(&bad) => Err(NnError::IndexOutOfRange { index: bad, len: n }),
            None => Ok(()),
        }
    }

    fn segment_sum_value(values: &Tensor, segment: &[usize], n: usize) -> Tensor {
        let mut out = Tensor::zeros(n, values.cols());
        for (r, &s) in segment.iter().enumerate() {
            for (o, &v) in out.row_mut(s).iter_mut().zip(values.row(r)) {
                *o += v;
            }
        }
        out
    }

    /// Sums rows of `a` into `n` segments; row `r` goes to `segment[r]`.
    pub fn segment_sum(&mut self, a: Var, segment: Arc<[usize]>, n: usize) -> Result<Var, NnError> {
        self.check_segments(a, &segment, n)?;
        let value = Self::segment_sum_value(self.value(a), &segment, n);
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::SegmentSum(a, segment), rg))
    }

    /// Mean of the rows in each segment; empty segments give zero rows.
    pub fn segment_mean(
        &mut self,
        a: Var,
        segment: Arc<[usize]>,
        n: usize,
    ) -> Result<Var, NnError> {
        self.check_segments(a, &segment, n)?;
        let mut counts = vec![0.0; n];
        segment.iter().for_each(|&s| counts[s] += 1.0);
        let inv: Arc<[f64]> = counts
            .iter()
            .map(|&c| if c > 0.0 { 1.0 / c } else { 0.0 })
            .collect();
        let mut value = Self::segment_sum_value(self.value(a), &segment, n);
        for (s, &k) in inv.iter().enumerate() {
            value.row_mut(s).iter_mut().for_each(|v| *v *= k);
        }
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::SegmentMean(a, segment, inv), rg))
    }

    /// Softmax of each column of `logits` over the rows sharing a segment
    /// (edges sharing a destination node).
    pub fn neighbor_softmax(
        &mut self,
        logits: Var,
        segment: Arc<[usize]>,
        n: usize,
    ) -> Result<Var, NnError> {
        self.check_segments(logits, &segment, n)?;
        let x = self.value(logits);
        let cols = x.cols();
        let mut max = Tensor::filled(n, cols, f64::NEG_INFINITY);
        for (r, &s) in segment.iter().enumerate() {
            for c in 0..cols {
                max.set(s, c, max.get(s, c).max(x.get(r, c)));
            }
        }
        let mut value = Tensor::zeros(x.rows(), cols);
        let mut total = Tensor::zeros(n, cols);
        for (r, &s) in segment.iter().enumerate() {
            for c in 0..cols {
                let e = (x.get(r, c) - max.get(s, c)).exp();
                value.set(r, c, e);
                total.set(s, c, total.get(s, c) + e);
            }
        }
        for (r, &s) in segment.iter().enumerate() {
            for c in 0..cols {
                value.set(r, c, value.get(r, c) / total.get(s, c));
            }
        }
        let rg = self.needs(&[logits]);
        Ok(self.push(value, Op::NeighborSoftmax(logits, segment), rg))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let rows = parts.first().map_or(0, |&p| self.value(p).rows());
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(NnError::ShapeMismatch {
                    op: "concat",
                    left: [rows, cols],
                    right: t.shape(),
                });
            }
            cols += t.cols();
        }
        let mut value = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                value.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        let rg = self.needs(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.needs(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    /// Mean squared error over the rows where `mask` is set, all columns.
    pub fn mse_loss(&mut self, pred: Var, target: Var, mask: Arc<[bool]>) -> Result<Var, NnError> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(NnError::ShapeMismatch {
                op: "mse_loss",
                left: p.shape(),
                right: t.shape(),
            });
        }
        if mask.len() != p.rows() {
            return Err(NnError::BadLength {
                expected: p.rows(),
                got: mask.len(),
            });
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(NnError::EmptyMask);
        }
        let mut total = 0.0;
        for r in (0..p.rows()).filter(|&r| mask[r]) {
            total += p
                .row(r)
                .iter()
                .zip(t.row(r))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        let value = Tensor::scalar(total / (count * p.cols()) as f64);
        let rg = self.needs(&[pred, target]);
        Ok(self.push(value, Op::Mse(pred, target, mask), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NnError> {
        let shape = self.value(loss).shape();
        if shape != [1, 1] {
            return Err(NnError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let out = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if self.nodes[a.0].requires_grad {
                        self.accumulate(&mut grads, *a, g.matmul(&vb.transpose())?);
                    }
                    if self.nodes[b.0].requires_grad {
                        self.accumulate(&mut grads, *b, va.transpose().matmul(&g)?);
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, g.clone());
                    let vb = self.value(*b);
                    let mode = broadcast("add", self.value(*a), vb)?;
                    self.accumulate(&mut grads, *b, reduce_broadcast(&g, mode, vb, |_| 1.0));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let mode = broadcast("mul", va, vb)?;
                    let cols = va.cols();
                    if self.nodes[a.0].requires_grad {
                        let data = g
                            .data()
                            .iter()
                            .enumerate()
                            .map(|(i, &gi)| gi * vb.data()[broadcast_index(mode, cols, i)])
                            .collect();
                        self.accumulate(&mut grads, *a, Tensor::new(va.rows(), cols, data)?);
                    }
                    if self.nodes[b.0].requires_grad {
                        let gb = reduce_broadcast(&g, mode, vb, |i| va.data()[i]);
                        self.accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Scale(a, f) => self.accumulate(&mut grads, *a, g.map(|x| x * f)),
                Op::Relu(a) => {
                    let x = self.value(*a);
                    self.accumulate(
                        &mut grads,
                        *a,
                        zip_map(&g, x, |gi, xi| if xi > 0.0 { gi } else { 0.0 }),
                    );
                }
                Op::LeakyRelu(a, slope) => {
                    let x = self.value(*a);
                    let s = *slope;
                    self.accumulate(
                        &mut grads,
                        *a,
                        zip_map(&g, x, |gi, xi| if xi > 0.0 { gi } else { s * gi }),
                    );
                }
                Op::Exp(a) => self.accumulate(&mut grads, *a, zip_map(&g, out, |gi, yi| gi * yi)),
                Op::Log(a) => {
                    let x = self.value(*a);
                    self.accumulate(&mut grads, *a, zip_map(&g, x, |gi, xi| gi / xi));
                }
                Op::Gather(a, index) => {
                    let n = self.value(*a).rows();
                    self.accumulate(&mut grads, *a, Self::segment_sum_value(&g, index, n));
                }
                Op::SegmentSum(a, segment) => {
                    self.accumulate(&mut grads, *a, g.gather_rows(segment));
                }
                Op::SegmentMean(a, segment, inv) => {
                    let mut ga = g.gather_rows(segment);
                    for (r, &s) in segment.iter().enumerate() {
                        ga.row_mut(r).iter_mut().for_each(|v| *v *= inv[s]);
                    }
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::NeighborSoftmax(a, segment) => {
                    let cols = out.cols();
                    let n = segment.iter().max().map_or(0, |&m| m + 1);
                    let mut dot = Tensor::zeros(n, cols);
                    for (r, &s) in segment.iter().enumerate() {
                        for c in 0..cols {
                            dot.set(s, c, dot.get(s, c) + out.get(r, c) * g.get(r, c));
                        }
                    }
                    let mut ga = Tensor::zeros(out.rows(), cols);
                    for (r, &s) in segment.iter().enumerate() {
                        for c in 0..cols {
                            ga.set(r, c, out.get(r, c) * (g.get(r, c) - dot.get(s, c)));
                        }
                    }
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let width = self.value(p).cols();
                        if self.nodes[p.0].requires_grad {
                            let mut gp = Tensor::zeros(g.rows(), width);
                            for r in 0..g.rows() {
                                gp.row_mut(r)
                                    .copy_from_slice(&g.row(r)[offset..offset + width]);
                            }
                            self.accumulate(&mut grads, p, gp);
                        }
                        offset += width;
                    }
                }
                Op::Sum(a) => {
                    let x = self.value(*a);
                    self.accumulate(
                        &mut grads,
                        *a,
                        Tensor::filled(x.rows(), x.cols(), g.get(0, 0)),
                    );
                }
                Op::Mse(pred, target, mask) => {
                    let (p, t) = (self.value(*pred), self.value(*target));
                    let count = mask.iter().filter(|&&m| m).count();
                    let k = 2.0 * g.get(0, 0) / (count * p.cols()) as f64;
                    let mut gp = Tensor::zeros(p.rows(), p.cols());
                    for r in (0..p.rows()).filter(|&r| mask[r]) {
                        for c in 0..p.cols() {
                            gp.set(r, c, k * (p.get(r, c) - t.get(r, c)));
                        }
                    }
                    if self.nodes[target.0].requires_grad {
                        self.accumulate(&mut grads, *target, gp.map(|x| -x));
                    }
                    self.accumulate(&mut grads, *pred, gp);
                }
            }
            // keep gradients of leaves for the caller
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => existing
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(e, x)| *e += x),
            slot => *slot = Some(g),
        }
    }
}

fn zip_map(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g
        .data()
        .iter()
        .zip(x.data())
        .map(|(&a, &b)| f(a, b))
        .collect();
    Tensor::new(g.rows(), g.cols(), data).expect("same shape")
}

/// Sums `g * factor(i)` back onto the broadcast operand's shape.
fn reduce_broadcast(
    g: &Tensor,
    mode: Broadcast,
    b: &Tensor,
    factor: impl Fn(usize) -> f64,
) -> Tensor {
    let mut out = Tensor::zeros(b.rows(), b.cols());
    let cols = g.cols();
    for (i, &gi) in g.data().iter().enumerate() {
        out.data_mut()[broadcast_index(mode, cols, i)] += gi * factor(i);
    }
    out
}
