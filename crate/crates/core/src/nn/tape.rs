//! Eager-forward, reverse-mode autodiff tape over 2-d arrays.
//!
//! Nodes are created through the builder methods; `backward` walks the tape
//! in reverse and accumulates parameter gradients into a [`Grads`] map.

use super::store::{Grads, ParamId, ParamStore};
use crate::scalar::Scalar;
use ndarray::{s, Array2, Axis};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op<S: Scalar> {
    Const,
    Param(ParamId),
    /// Row-gather straight from a parameter matrix (embedding lookup).
    ParamRows(ParamId, Vec<usize>),
    MatMul(NodeId, NodeId),
    /// a · bᵀ (tied-embedding output projection).
    MatMulTB(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// Matrix plus a broadcast 1×d row (bias).
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, S),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    Rows(NodeId, Vec<usize>),
    MeanRows(NodeId),
    SumAll(NodeId),
    /// Σᵢ wᵢ · BCE(σ(zᵢ), tᵢ) over an n×1 logit column.
    BceLogits {
        logits: NodeId,
        targets: Vec<S>,
        weights: Vec<S>,
    },
    /// Σᵢ wᵢ · (logsumexp(zᵢ) − zᵢ[tᵢ]) over n×k logits.
    SoftmaxCe {
        logits: NodeId,
        targets: Vec<usize>,
        weights: Vec<S>,
    },
}

struct Node<S: Scalar> {
    op: Op<S>,
    value: Array2<S>,
}

pub struct Tape<'a, S: Scalar> {
    store: &'a ParamStore<S>,
    nodes: Vec<Node<S>>,
}

impl<'a, S: Scalar> Tape<'a, S> {
    pub fn new(store: &'a ParamStore<S>) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, op: Op<S>, value: Array2<S>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Array2<S> {
        &self.nodes[id.0].value
    }

    pub fn constant(&mut self, v: Array2<S>) -> NodeId {
        self.push(Op::Const, v)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        let v = self.store.value(id).clone();
        self.push(Op::Param(id), v)
    }

    pub fn param_rows(&mut self, id: ParamId, rows: Vec<usize>) -> NodeId {
        let src = self.store.value(id);
        let v = gather_rows(src, &rows);
        self.push(Op::ParamRows(id, rows), v)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    pub fn matmul_tb(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(Op::MatMulTB(a, b), v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), v)
    }

    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.value(b).nrows(), 1);
        let v = self.value(a) + &self.value(b).row(0);
        self.push(Op::AddRow(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) - self.value(b);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), v)
    }

    pub fn scale(&mut self, a: NodeId, c: S) -> NodeId {
        let v = self.value(a).mapv(|x| x * c);
        self.push(Op::Scale(a, c), v)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| x.tanh());
        self.push(Op::Tanh(a), v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| if x > S::zero() { x } else { S::zero() });
        self.push(Op::Relu(a), v)
    }

    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> NodeId {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("column concat");
        self.push(Op::ConcatCols(parts), v)
    }

    pub fn concat_rows(&mut self, parts: Vec<NodeId>) -> NodeId {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("row concat");
        self.push(Op::ConcatRows(parts), v)
    }

    pub fn rows(&mut self, a: NodeId, rows: Vec<usize>) -> NodeId {
        let v = gather_rows(self.value(a), &rows);
        self.push(Op::Rows(a, rows), v)
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let src = self.value(a);
        let n = S::of_usize(src.nrows());
        let v = src
            .sum_axis(Axis(0))
            .insert_axis(Axis(0))
            .mapv(|x| x / n);
        self.push(Op::MeanRows(a), v)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let total: S = self.value(a).iter().copied().sum();
        self.push(Op::SumAll(a), Array2::from_elem((1, 1), total))
    }

    /// Linear layer `x·W + b` with a 1×d bias row.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    /// Weighted binary cross-entropy with logits; returns a 1×1 scalar node
    /// holding the weighted sum (not mean) over positions.
    pub fn bce_logits(&mut self, logits: NodeId, targets: Vec<S>, weights: Vec<S>) -> NodeId {
        let z = self.value(logits);
        assert_eq!(z.ncols(), 1);
        assert_eq!(z.nrows(), targets.len());
        assert_eq!(targets.len(), weights.len());
        let mut total = S::zero();
        for (i, (&t, &w)) in targets.iter().zip(&weights).enumerate() {
            total += w * bce_with_logit(z[(i, 0)], t);
        }
        self.push(
            Op::BceLogits {
                logits,
                targets,
                weights,
            },
            Array2::from_elem((1, 1), total),
        )
    }

    /// Weighted softmax cross-entropy; returns the weighted sum over rows.
    pub fn softmax_ce(&mut self, logits: NodeId, targets: Vec<usize>, weights: Vec<S>) -> NodeId {
        let z = self.value(logits);
        assert_eq!(z.nrows(), targets.len());
        assert_eq!(targets.len(), weights.len());
        let mut total = S::zero();
        for (i, (&t, &w)) in targets.iter().zip(&weights).enumerate() {
            if w == S::zero() {
                continue;
            }
            let row = z.row(i);
            total += w * (log_sum_exp(row.iter().copied()) - row[t]);
        }
        self.push(
            Op::SoftmaxCe {
                logits,
                targets,
                weights,
            },
            Array2::from_elem((1, 1), total),
        )
    }

    /// Reverse pass from a 1×1 loss node. Returns parameter gradients.
    pub fn backward(&self, loss: NodeId) -> Grads<S> {
        assert_eq!(self.value(loss).dim(), (1, 1), "loss must be scalar");
        let mut node_grads: Vec<Option<Array2<S>>> = vec![None; self.nodes.len()];
        node_grads[loss.0] = Some(Array2::from_elem((1, 1), S::one()));
        let mut grads = Grads::new();

        for id in (0..=loss.0).rev() {
            let Some(g) = node_grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            match &node.op {
                Op::Const => {}
                Op::Param(pid) => grads.accumulate(*pid, &g),
                Op::ParamRows(pid, rows) => {
                    let shape = self.store.value(*pid).raw_dim();
                    let mut scat = Array2::zeros(shape);
                    for (r, &src_row) in rows.iter().enumerate() {
                        let mut dst = scat.row_mut(src_row);
                        dst += &g.row(r);
                    }
                    grads.accumulate(*pid, &scat);
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.nodes[b.0].value.t());
                    let gb = self.nodes[a.0].value.t().dot(&g);
                    accum(&mut node_grads, *a, ga);
                    accum(&mut node_grads, *b, gb);
                }
                Op::MatMulTB(a, b) => {
                    let ga = g.dot(&self.nodes[b.0].value);
                    let gb = g.t().dot(&self.nodes[a.0].value);
                    accum(&mut node_grads, *a, ga);
                    accum(&mut node_grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accum(&mut node_grads, *a, g.clone());
                    accum(&mut node_grads, *b, g);
                }
                Op::AddRow(a, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accum(&mut node_grads, *a, g);
                    accum(&mut node_grads, *b, gb);
                }
                Op::Sub(a, b) => {
                    accum(&mut node_grads, *a, g.clone());
                    accum(&mut node_grads, *b, g.mapv(|x| -x));
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.nodes[b.0].value;
                    let gb = &g * &self.nodes[a.0].value;
                    accum(&mut node_grads, *a, ga);
                    accum(&mut node_grads, *b, gb);
                }
                Op::Scale(a, c) => accum(&mut node_grads, *a, g.mapv(|x| x * *c)),
                Op::Sigmoid(a) => {
                    let ga = &g * &node.value.mapv(|y| y * (S::one() - y));
                    accum(&mut node_grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = &g * &node.value.mapv(|y| S::one() - y * y);
                    accum(&mut node_grads, *a, ga);
                }
                Op::Relu(a) => {
                    let ga = &g
                        * &node
                            .value
                            .mapv(|y| if y > S::zero() { S::one() } else { S::zero() });
                    accum(&mut node_grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let w = self.nodes[p.0].value.ncols();
                        let gp = g.slice(s![.., col..col + w]).to_owned();
                        accum(&mut node_grads, p, gp);
                        col += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut row = 0;
                    for &p in parts {
                        let h = self.nodes[p.0].value.nrows();
                        let gp = g.slice(s![row..row + h, ..]).to_owned();
                        accum(&mut node_grads, p, gp);
                        row += h;
                    }
                }
                Op::Rows(a, rows) => {
                    let mut scat = Array2::zeros(self.nodes[a.0].value.raw_dim());
                    for (r, &src_row) in rows.iter().enumerate() {
                        let mut dst = scat.row_mut(src_row);
                        dst += &g.row(r);
                    }
                    accum(&mut node_grads, *a, scat);
                }
                Op::MeanRows(a) => {
                    let src = &self.nodes[a.0].value;
                    let inv = S::one() / S::of_usize(src.nrows());
                    let mut ga = Array2::zeros(src.raw_dim());
                    for mut row in ga.rows_mut() {
                        row.assign(&g.row(0).mapv(|x| x * inv));
                    }
                    accum(&mut node_grads, *a, ga);
                }
                Op::SumAll(a) => {
                    let ga = Array2::from_elem(self.nodes[a.0].value.raw_dim(), g[(0, 0)]);
                    accum(&mut node_grads, *a, ga);
                }
                Op::BceLogits {
                    logits,
                    targets,
                    weights,
                } => {
                    let z = &self.nodes[logits.0].value;
                    let scale = g[(0, 0)];
                    let mut gz = Array2::zeros(z.raw_dim());
                    for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        gz[(i, 0)] = scale * w * (sigmoid(z[(i, 0)]) - t);
                    }
                    accum(&mut node_grads, *logits, gz);
                }
                Op::SoftmaxCe {
                    logits,
                    targets,
                    weights,
                } => {
                    let z = &self.nodes[logits.0].value;
                    let scale = g[(0, 0)];
                    let mut gz = Array2::zeros(z.raw_dim());
                    for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        if w == S::zero() {
                            continue;
                        }
                        let row = z.row(i);
                        let lse = log_sum_exp(row.iter().copied());
                        for (j, &zj) in row.iter().enumerate() {
                            let p = (zj - lse).exp();
                            let delta = if j == t { S::one() } else { S::zero() };
                            gz[(i, j)] = scale * w * (p - delta);
                        }
                    }
                    accum(&mut node_grads, *logits, gz);
                }
            }
        }
        grads
    }
}

fn accum<S: Scalar>(grads: &mut [Option<Array2<S>>], id: NodeId, g: Array2<S>) {
    match &mut grads[id.0] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

fn gather_rows<S: Scalar>(src: &Array2<S>, rows: &[usize]) -> Array2<S> {
    let mut out = Array2::zeros((rows.len(), src.ncols()));
    for (r, &src_row) in rows.iter().enumerate() {
        out.row_mut(r).assign(&src.row(src_row));
    }
    out
}

pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Numerically stable binary cross-entropy from a logit:
/// max(z,0) − z·t + ln(1 + e^{−|z|}).
pub fn bce_with_logit<S: Scalar>(z: S, t: S) -> S {
    z.max(S::zero()) - z * t + (S::one() + (-z.abs()).exp()).ln()
}

pub fn log_sum_exp<S: Scalar, I: Iterator<Item = S> + Clone>(xs: I) -> S {
    let m = xs
        .clone()
        .fold(S::neg_infinity(), |a, b| if b > a { b } else { a });
    if m == S::neg_infinity() {
        return S::neg_infinity();
    }
    let s: S = xs.map(|x| (x - m).exp()).sum();
    m + s.ln()
}
