//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every op appends a node whose inputs already exist, so node order is a
//! topological order and [`Graph::backward`] is a single reverse sweep.

use std::sync::Arc;

use rand::Rng;

use super::kernels::{self, BoolMatrix};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }

    #[cfg(test)]
    pub(crate) fn for_test(index: usize) -> Self {
        Self(index)
    }
}

/// Batched attention mask: `batch` independent `queries × keys` patterns.
///
/// A query row with no allowed key is only legal when it is flagged as padding;
/// its attention output is then zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    batch: usize,
    queries: usize,
    keys: usize,
    allow: Vec<bool>,
    padded_queries: Vec<bool>,
}

impl AttentionMask {
    pub fn new(masks: &[BoolMatrix], padded_queries: Vec<bool>) -> Result<Self> {
        let first = masks
            .first()
            .ok_or_else(|| Error::Contract("attention mask needs at least one pattern".into()))?;
        let (queries, keys) = (first.rows(), first.cols());
        let mut allow = Vec::with_capacity(masks.len() * queries * keys);
        for m in masks {
            if (m.rows(), m.cols()) != (queries, keys) {
                return Err(Error::Dimension {
                    op: "attention_mask",
                    left: vec![queries, keys],
                    right: vec![m.rows(), m.cols()],
                });
            }
            allow.extend_from_slice(m.as_slice());
        }
        if padded_queries.len() != masks.len() * queries {
            return Err(Error::Dimension {
                op: "attention_mask",
                left: vec![masks.len() * queries],
                right: vec![padded_queries.len()],
            });
        }
        Ok(Self {
            batch: masks.len(),
            queries,
            keys,
            allow,
            padded_queries,
        })
    }

    fn row(&self, b: usize, i: usize) -> &[bool] {
        let start = (b * self.queries + i) * self.keys;
        &self.allow[start..start + self.keys]
    }
}

/// Where a row of [`Graph::compose_rows`] comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSource {
    /// Row `i` of the source matrix.
    Row(usize),
    /// The (single-row) start vector.
    Start,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Relu(NodeId),
    Sigmoid(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        normalized: Vec<T>,
        inv_std: Vec<T>,
    },
    MaskedSoftmax(NodeId),
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        mask: Arc<AttentionMask>,
        probs: Vec<T>,
    },
    Gather {
        table: NodeId,
        indices: Vec<usize>,
    },
    ComposeRows {
        src: NodeId,
        start: NodeId,
        plan: Vec<RowSource>,
    },
    SelectRows {
        x: NodeId,
        rows: Vec<usize>,
    },
    Dropout {
        x: NodeId,
        keep: Vec<T>,
    },
    Sum(NodeId),
    Mean(NodeId),
    BceWithLogits {
        logits: NodeId,
        targets: Vec<T>,
    },
}

impl<T> Op<T> {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::LayerNorm { .. } => "layer_norm",
            Op::MaskedSoftmax(_) => "masked_softmax",
            Op::Attention { .. } => "attention",
            Op::Gather { .. } => "gather",
            Op::ComposeRows { .. } => "compose_rows",
            Op::SelectRows { .. } => "select_rows",
            Op::Dropout { .. } => "dropout",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::BceWithLogits { .. } => "bce_with_logits",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match *self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::MaskedSoftmax(a)
            | Op::Sum(a)
            | Op::Mean(a) => vec![a],
            Op::LayerNorm { x, gamma, beta, .. } => vec![x, gamma, beta],
            Op::Attention { q, k, v, .. } => vec![q, k, v],
            Op::Gather { table, .. } => vec![table],
            Op::ComposeRows { src, start, .. } => vec![src, start],
            Op::SelectRows { x, .. } | Op::Dropout { x, .. } => vec![x],
            Op::BceWithLogits { logits, .. } => vec![logits],
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Op records in creation order, each with its output and saved activations.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one scalar with respect to every node of a graph.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// The gradient of `id`, or `None` when no gradient reached it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// The gradient of `id`, zero-filled when no gradient reached it.
    pub fn wrt(&self, id: NodeId) -> Tensor<T> {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[id.0]))
    }

    pub fn take(&mut self, id: NodeId) -> Tensor<T> {
        self.grads[id.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[id.0]))
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Names of the ops in recording order.
    pub fn op_kinds(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.kind()).collect()
    }

    /// Inputs of `id`, all of which precede it.
    pub fn inputs(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id.0].op.inputs()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Adds an input tensor; it is differentiated iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> NodeId {
        let requires_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn param(&mut self, tensor: Tensor<T>) -> NodeId {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> NodeId {
        self.leaf(tensor.with_requires_grad(false))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Dimension {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let mut out = self.value(a).clone().with_requires_grad(false);
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a vector to every last-axis slice of `a`.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (x, b) = (self.value(a), self.value(bias));
        if b.len() != x.cols() {
            return Err(Error::Dimension {
                op: "add_row",
                left: x.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let c = x.cols();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b.data()[i % c])
            .collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data);
        Ok(self.push(out, Op::AddRow(a, bias)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, factor: T) -> NodeId {
        let out = self.value(a).map(|v| v * factor);
        self.push(out, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(kernels::sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: T) -> Result<NodeId> {
        let (out, stats) =
            kernels::layer_norm_forward(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized: stats.normalized,
                inv_std: stats.inv_std,
            },
        ))
    }

    pub fn masked_softmax(&mut self, scores: NodeId, mask: &BoolMatrix) -> Result<NodeId> {
        let out = kernels::masked_softmax(self.value(scores), mask)?;
        Ok(self.push(out, Op::MaskedSoftmax(scores)))
    }

    /// Multi-head scaled dot-product attention over a batch.
    ///
    /// `q` is `[batch·queries, d]`, `k` and `v` are `[batch·keys, d]`. Each of the
    /// `heads` heads attends over its own contiguous `d / heads` column slice and
    /// the head outputs are concatenated back to `[batch·queries, d]`.
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        mask: Arc<AttentionMask>,
    ) -> Result<NodeId> {
        let (qt, kt, vt) = (self.value(q), self.value(k), self.value(v));
        let d = qt.cols();
        if heads == 0 || d % heads != 0 {
            return Err(Error::Contract(format!(
                "model width {d} is not divisible by {heads} heads"
            )));
        }
        if kt.cols() != d || vt.cols() != d || kt.shape() != vt.shape() {
            return Err(Error::Dimension {
                op: "attention",
                left: qt.shape().to_vec(),
                right: kt.shape().to_vec(),
            });
        }
        let (b, nq, nk) = (mask.batch, mask.queries, mask.keys);
        if qt.rows() != b * nq || kt.rows() != b * nk {
            return Err(Error::Dimension {
                op: "attention",
                left: vec![qt.rows(), kt.rows()],
                right: vec![b * nq, b * nk],
            });
        }
        let dk = d / heads;
        let scale = T::one() / T::of(dk as f64).sqrt();
        let (qd, kd, vd) = (qt.data(), kt.data(), vt.data());
        let mut probs = vec![T::zero(); b * heads * nq * nk];
        let mut out = vec![T::zero(); b * nq * d];
        let mut scores = vec![T::zero(); nk];
        for bi in 0..b {
            for h in 0..heads {
                let off = h * dk;
                for i in 0..nq {
                    let qrow = &qd[(bi * nq + i) * d + off..][..dk];
                    for (j, s) in scores.iter_mut().enumerate() {
                        let krow = &kd[(bi * nk + j) * d + off..][..dk];
                        *s = qrow.iter().zip(krow).map(|(&x, &y)| x * y).sum::<T>() * scale;
                    }
                    let p = &mut probs[((bi * heads + h) * nq + i) * nk..][..nk];
                    if !kernels::softmax_row(&scores, mask.row(bi, i), p) {
                        if mask.padded_queries[bi * nq + i] {
                            continue;
                        }
                        return Err(Error::InvalidMask { row: bi * nq + i });
                    }
                    let orow = &mut out[(bi * nq + i) * d + off..][..dk];
                    for (j, &w) in p.iter().enumerate() {
                        if w == T::zero() {
                            continue;
                        }
                        let vrow = &vd[(bi * nk + j) * d + off..][..dk];
                        for (o, &x) in orow.iter_mut().zip(vrow) {
                            *o += w * x;
                        }
                    }
                }
            }
        }
        let out = Tensor::from_parts(vec![b * nq, d], out);
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                mask,
                probs,
            },
        ))
    }

    /// Embedding lookup: row `indices[i]` of `table` becomes output row `i`.
    pub fn gather(&mut self, table: NodeId, indices: Vec<usize>, name: &str) -> Result<NodeId> {
        let t = self.value(table);
        let (rows, d) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(indices.len() * d);
        for &ix in &indices {
            if ix >= rows {
                return Err(Error::Lookup {
                    table: name.to_string(),
                    index: ix,
                    rows,
                });
            }
            data.extend_from_slice(t.row(ix));
        }
        if indices.is_empty() {
            return Err(Error::Contract("gather with no indices".into()));
        }
        let out = Tensor::from_parts(vec![indices.len(), d], data);
        Ok(self.push(out, Op::Gather { table, indices }))
    }

    /// Builds a matrix whose rows are copied from `src` or from the one-row `start`.
    pub fn compose_rows(
        &mut self,
        src: NodeId,
        start: NodeId,
        plan: Vec<RowSource>,
    ) -> Result<NodeId> {
        let (s, st) = (self.value(src), self.value(start));
        let d = s.cols();
        if st.len() != d {
            return Err(Error::Dimension {
                op: "compose_rows",
                left: s.shape().to_vec(),
                right: st.shape().to_vec(),
            });
        }
        let mut data = Vec::with_capacity(plan.len() * d);
        for p in &plan {
            match *p {
                RowSource::Start => data.extend_from_slice(st.data()),
                RowSource::Row(r) if r < s.rows() => data.extend_from_slice(s.row(r)),
                RowSource::Row(r) => {
                    return Err(Error::Contract(format!(
                        "compose_rows: row {r} out of range for {} rows",
                        s.rows()
                    )))
                }
            }
        }
        let out = Tensor::new(vec![plan.len(), d], data)?;
        Ok(self.push(out, Op::ComposeRows { src, start, plan }))
    }

    pub fn select_rows(&mut self, x: NodeId, rows: Vec<usize>) -> Result<NodeId> {
        let t = self.value(x);
        let d = t.cols();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in &rows {
            if r >= t.rows() {
                return Err(Error::Contract(format!(
                    "select_rows: row {r} out of range for {} rows",
                    t.rows()
                )));
            }
            data.extend_from_slice(t.row(r));
        }
        let out = Tensor::new(vec![rows.len(), d], data)?;
        Ok(self.push(out, Op::SelectRows { x, rows }))
    }

    /// Inverted dropout: zeroes each element with probability `rate` and scales
    /// survivors by `1 / (1 - rate)`. A zero rate records nothing.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: NodeId, rate: f64, rng: &mut R) -> NodeId {
        if rate <= 0.0 {
            return x;
        }
        let survive = T::of(1.0 / (1.0 - rate));
        let keep: Vec<T> = (0..self.value(x).len())
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    T::zero()
                } else {
                    survive
                }
            })
            .collect();
        let t = self.value(x);
        let data = t.data().iter().zip(&keep).map(|(&v, &m)| v * m).collect();
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        self.push(out, Op::Dropout { x, keep })
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let s = t.data().iter().copied().sum::<T>() / T::of(t.len() as f64);
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`.
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: Vec<T>) -> Result<NodeId> {
        let z = self.value(logits);
        if z.len() != targets.len() || targets.is_empty() {
            return Err(Error::Dimension {
                op: "bce_with_logits",
                left: z.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let total: T = z
            .data()
            .iter()
            .zip(&targets)
            .map(|(&z, &y)| z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        let loss = total / T::of(targets.len() as f64);
        Ok(self.push(Tensor::scalar(loss), Op::BceWithLogits { logits, targets }))
    }

    /// Reverse sweep from the scalar node `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        backward(self, loss)
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Computes d`loss`/d(node) for every node that requires a gradient.
pub fn backward<T: Scalar>(graph: &Graph<T>, loss: NodeId) -> Result<Gradients<T>> {
    let n = graph.nodes.len();
    if loss.0 >= n {
        return Err(Error::Contract(format!("loss node {} does not exist", loss.0)));
    }
    if graph.value(loss).len() != 1 {
        return Err(Error::Contract(format!(
            "backward needs a scalar loss, got shape {:?}",
            graph.value(loss).shape()
        )));
    }
    let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
    grads[loss.0] = Some(Tensor::full(graph.value(loss).shape(), T::one()));

    for k in (0..=loss.0).rev() {
        let node = &graph.nodes[k];
        if !node.requires_grad {
            continue;
        }
        let Some(g) = grads[k].take() else { continue };
        let needs = |id: NodeId| graph.nodes[id.0].requires_grad;
        let val = |id: NodeId| &graph.nodes[id.0].value;

        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (at, bt) = (val(a), val(b));
                let (m, kk, nn) = (at.rows(), at.cols(), bt.cols());
                if needs(a) {
                    let mut da = vec![T::zero(); m * kk];
                    // dA = dC · Bᵀ
                    T::gemm(
                        m,
                        nn,
                        kk,
                        g.data(),
                        (nn as isize, 1),
                        bt.data(),
                        (1, nn as isize),
                        &mut da,
                        false,
                    );
                    accumulate(&mut grads, a, Tensor::from_parts(vec![m, kk], da));
                }
                if needs(b) {
                    let mut db = vec![T::zero(); kk * nn];
                    // dB = Aᵀ · dC
                    T::gemm(
                        kk,
                        m,
                        nn,
                        at.data(),
                        (1, kk as isize),
                        g.data(),
                        (nn as isize, 1),
                        &mut db,
                        false,
                    );
                    accumulate(&mut grads, b, Tensor::from_parts(vec![kk, nn], db));
                }
            }
            &Op::Add(a, b) => {
                if needs(a) {
                    accumulate(&mut grads, a, g.clone());
                }
                if needs(b) {
                    accumulate(&mut grads, b, g.clone());
                }
            }
            &Op::AddRow(a, bias) => {
                if needs(bias) {
                    let c = g.cols();
                    let mut db = vec![T::zero(); c];
                    for (i, &x) in g.data().iter().enumerate() {
                        db[i % c] += x;
                    }
                    accumulate(
                        &mut grads,
                        bias,
                        Tensor::from_parts(val(bias).shape().to_vec(), db),
                    );
                }
                if needs(a) {
                    accumulate(&mut grads, a, g.clone());
                }
            }
            &Op::Mul(a, b) => {
                if needs(a) {
                    let d = g.data().iter().zip(val(b).data()).map(|(&x, &y)| x * y);
                    accumulate(
                        &mut grads,
                        a,
                        Tensor::from_parts(g.shape().to_vec(), d.collect()),
                    );
                }
                if needs(b) {
                    let d = g.data().iter().zip(val(a).data()).map(|(&x, &y)| x * y);
                    accumulate(
                        &mut grads,
                        b,
                        Tensor::from_parts(g.shape().to_vec(), d.collect()),
                    );
                }
            }
            &Op::Scale(a, f) => {
                accumulate(&mut grads, a, g.map(|x| x * f));
            }
            &Op::Relu(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(val(a).data())
                    .map(|(&x, &v)| if v > T::zero() { x } else { T::zero() });
                accumulate(
                    &mut grads,
                    a,
                    Tensor::from_parts(g.shape().to_vec(), d.collect()),
                );
            }
            &Op::Sigmoid(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(&x, &s)| x * s * (T::one() - s));
                accumulate(
                    &mut grads,
                    a,
                    Tensor::from_parts(g.shape().to_vec(), d.collect()),
                );
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let d = g.cols();
                let rows = g.rows();
                let gam = val(*gamma).data();
                if needs(*gamma) || needs(*beta) {
                    let mut dg = vec![T::zero(); d];
                    let mut dbeta = vec![T::zero(); d];
                    for (i, &x) in g.data().iter().enumerate() {
                        dg[i % d] += x * normalized[i];
                        dbeta[i % d] += x;
                    }
                    if needs(*gamma) {
                        accumulate(
                            &mut grads,
                            *gamma,
                            Tensor::from_parts(val(*gamma).shape().to_vec(), dg),
                        );
                    }
                    if needs(*beta) {
                        accumulate(
                            &mut grads,
                            *beta,
                            Tensor::from_parts(val(*beta).shape().to_vec(), dbeta),
                        );
                    }
                }
                if needs(*x) {
                    let inv_d = T::one() / T::of(d as f64);
                    let mut dx = vec![T::zero(); rows * d];
                    for r in 0..rows {
                        let gr = &g.data()[r * d..(r + 1) * d];
                        let xh = &normalized[r * d..(r + 1) * d];
                        let mut mean_dxh = T::zero();
                        let mut mean_dxh_xh = T::zero();
                        for j in 0..d {
                            let dxh = gr[j] * gam[j];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xh[j];
                        }
                        mean_dxh *= inv_d;
                        mean_dxh_xh *= inv_d;
                        for j in 0..d {
                            let dxh = gr[j] * gam[j];
                            dx[r * d + j] = inv_std[r] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                        }
                    }
                    accumulate(
                        &mut grads,
                        *x,
                        Tensor::from_parts(val(*x).shape().to_vec(), dx),
                    );
                }
            }
            &Op::MaskedSoftmax(a) => {
                let p = &node.value;
                let c = p.cols();
                let mut dx = vec![T::zero(); p.len()];
                for r in 0..p.rows() {
                    let pr = p.row(r);
                    let gr = g.row(r);
                    let dot: T = pr.iter().zip(gr).map(|(&x, &y)| x * y).sum();
                    for j in 0..c {
                        dx[r * c + j] = pr[j] * (gr[j] - dot);
                    }
                }
                accumulate(
                    &mut grads,
                    a,
                    Tensor::from_parts(p.shape().to_vec(), dx),
                );
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                mask,
                probs,
            } => {
                let (dq, dk_, dv) = attention_backward(
                    val(*q),
                    val(*k),
                    val(*v),
                    *heads,
                    mask,
                    probs,
                    &g,
                );
                if needs(*q) {
                    accumulate(&mut grads, *q, dq);
                }
                if needs(*k) {
                    accumulate(&mut grads, *k, dk_);
                }
                if needs(*v) {
                    accumulate(&mut grads, *v, dv);
                }
            }
            Op::Gather { table, indices } => {
                let t = val(*table);
                let d = t.cols();
                let mut dt = vec![T::zero(); t.len()];
                for (i, &ix) in indices.iter().enumerate() {
                    let src = &g.data()[i * d..(i + 1) * d];
                    for (o, &x) in dt[ix * d..(ix + 1) * d].iter_mut().zip(src) {
                        *o += x;
                    }
                }
                accumulate(
                    &mut grads,
                    *table,
                    Tensor::from_parts(t.shape().to_vec(), dt),
                );
            }
            Op::ComposeRows { src, start, plan } => {
                let d = g.cols();
                let s = val(*src);
                let mut ds = vec![T::zero(); s.len()];
                let mut dstart = vec![T::zero(); d];
                for (i, p) in plan.iter().enumerate() {
                    let gr = &g.data()[i * d..(i + 1) * d];
                    let dst = match *p {
                        RowSource::Start => &mut dstart[..],
                        RowSource::Row(r) => &mut ds[r * d..(r + 1) * d],
                    };
                    for (o, &x) in dst.iter_mut().zip(gr) {
                        *o += x;
                    }
                }
                if needs(*src) {
                    accumulate(
                        &mut grads,
                        *src,
                        Tensor::from_parts(s.shape().to_vec(), ds),
                    );
                }
                if needs(*start) {
                    accumulate(
                        &mut grads,
                        *start,
                        Tensor::from_parts(val(*start).shape().to_vec(), dstart),
                    );
                }
            }
            Op::SelectRows { x, rows } => {
                let t = val(*x);
                let d = t.cols();
                let mut dx = vec![T::zero(); t.len()];
                for (i, &r) in rows.iter().enumerate() {
                    for (o, &v) in dx[r * d..(r + 1) * d]
                        .iter_mut()
                        .zip(&g.data()[i * d..(i + 1) * d])
                    {
                        *o += v;
                    }
                }
                accumulate(&mut grads, *x, Tensor::from_parts(t.shape().to_vec(), dx));
            }
            Op::Dropout { x, keep } => {
                let d = g.data().iter().zip(keep).map(|(&a, &m)| a * m).collect();
                accumulate(&mut grads, *x, Tensor::from_parts(g.shape().to_vec(), d));
            }
            &Op::Sum(a) => {
                let s = g.data()[0];
                accumulate(&mut grads, a, Tensor::full(val(a).shape(), s));
            }
            &Op::Mean(a) => {
                let t = val(a);
                let s = g.data()[0] / T::of(t.len() as f64);
                accumulate(&mut grads, a, Tensor::full(t.shape(), s));
            }
            Op::BceWithLogits { logits, targets } => {
                let z = val(*logits);
                let scale = g.data()[0] / T::of(targets.len() as f64);
                let d = z
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&z, &y)| (kernels::sigmoid(z) - y) * scale)
                    .collect();
                accumulate(
                    &mut grads,
                    *logits,
                    Tensor::from_parts(z.shape().to_vec(), d),
                );
            }
        }
        grads[k] = Some(g);
    }

    Ok(Gradients {
        grads,
        shapes: graph.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
    })
}

fn attention_backward<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
    mask: &AttentionMask,
    probs: &[T],
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let d = q.cols();
    let dk = d / heads;
    let scale = T::one() / T::of(dk as f64).sqrt();
    let (b, nq, nk) = (mask.batch, mask.queries, mask.keys);
    let (qd, kd, vd, gd) = (q.data(), k.data(), v.data(), g.data());
    let mut dq = vec![T::zero(); q.len()];
    let mut dkey = vec![T::zero(); k.len()];
    let mut dv = vec![T::zero(); v.len()];
    let mut dp = vec![T::zero(); nk];
    for bi in 0..b {
        for h in 0..heads {
            let off = h * dk;
            for i in 0..nq {
                let p = &probs[((bi * heads + h) * nq + i) * nk..][..nk];
                let grow = &gd[(bi * nq + i) * d + off..][..dk];
                let mut dot = T::zero();
                for j in 0..nk {
                    if p[j] == T::zero() {
                        dp[j] = T::zero();
                        continue;
                    }
                    let vrow = &vd[(bi * nk + j) * d + off..][..dk];
                    dp[j] = grow.iter().zip(vrow).map(|(&x, &y)| x * y).sum();
                    dot += p[j] * dp[j];
                    let dvrow = &mut dv[(bi * nk + j) * d + off..][..dk];
                    for (o, &x) in dvrow.iter_mut().zip(grow) {
                        *o += p[j] * x;
                    }
                }
                let qrow = &qd[(bi * nq + i) * d + off..][..dk];
                for j in 0..nk {
                    if p[j] == T::zero() {
                        continue;
                    }
                    let ds = p[j] * (dp[j] - dot) * scale;
                    let krow = &kd[(bi * nk + j) * d + off..][..dk];
                    let dqrow = &mut dq[(bi * nq + i) * d + off..][..dk];
                    for (o, &x) in dqrow.iter_mut().zip(krow) {
                        *o += ds * x;
                    }
                    let dkrow = &mut dkey[(bi * nk + j) * d + off..][..dk];
                    for (o, &x) in dkrow.iter_mut().zip(qrow) {
                        *o += ds * x;
                    }
                }
            }
        }
    }
    (
        Tensor::from_parts(q.shape().to_vec(), dq),
        Tensor::from_parts(k.shape().to_vec(), dkey),
        Tensor::from_parts(v.shape().to_vec(), dv),
    )
}
