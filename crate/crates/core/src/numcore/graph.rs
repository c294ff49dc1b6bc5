use std::collections::BTreeMap;

use super::{Tensor, PROB_FLOOR};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafKind {
    Param,
    Data,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { name: String, kind: LeafKind },
    /// `input [n, in]`, `weight [out, in]`, `bias [out]` -> `[n, out]`.
    Affine { input: NodeId, weight: NodeId, bias: NodeId },
    Relu(NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    Mean(NodeId),
    /// Column slice `[start, start + len)` of a `[n, c]` tensor.
    Columns { input: NodeId, start: usize, len: usize },
    /// Row-wise softmax over the last dimension.
    Softmax(NodeId),
    /// Row-wise `-Σ t log softmax(z)` with the log floored at `ln 1e-12`;
    /// `[n, c] x [n, c] -> [n]`.
    SoftmaxCrossEntropy { logits: NodeId, targets: NodeId },
}

/// Leaf id -> bound value.
pub type Bindings = BTreeMap<NodeId, Tensor>;

/// Append-only computation graph. The root is the most recently added node.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Op>,
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

    pub fn root(&self) -> Option<NodeId> {
        self.nodes.len().checked_sub(1).map(NodeId)
    }

    fn push(&mut self, op: Op) -> NodeId {
        for input in inputs(&op) {
            assert!(input.0 < self.nodes.len(), "node {} does not belong to this graph", input.0);
        }
        self.nodes.push(op);
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, name: impl Into<String>, kind: LeafKind) -> NodeId {
        self.push(Op::Leaf { name: name.into(), kind })
    }

    pub fn param(&mut self, name: impl Into<String>) -> NodeId {
        self.leaf(name, LeafKind::Param)
    }

    pub fn data(&mut self, name: impl Into<String>) -> NodeId {
        self.leaf(name, LeafKind::Data)
    }

    pub fn affine(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> NodeId {
        self.push(Op::Affine { input, weight, bias })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Relu(x))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        self.push(Op::Scale(x, factor))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sum(x))
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Mean(x))
    }

    pub fn columns(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        self.push(Op::Columns { input: x, start, len })
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Softmax(x))
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, targets: NodeId) -> NodeId {
        self.push(Op::SoftmaxCrossEntropy { logits, targets })
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        matches!(self.nodes.get(id.0), Some(Op::Leaf { .. }))
    }

    pub fn leaf_kind(&self, id: NodeId) -> Option<LeafKind> {
        match self.nodes.get(id.0) {
            Some(Op::Leaf { kind, .. }) => Some(*kind),
            _ => None,
        }
    }

    /// Leaves in graph order.
    pub fn leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, op)| matches!(op, Op::Leaf { .. }))
            .map(|(i, _)| NodeId(i))
    }

    /// Human-readable label used in error messages.
    pub fn label(&self, id: NodeId) -> String {
        match self.nodes.get(id.0) {
            Some(Op::Leaf { name, .. }) => name.clone(),
            Some(op) => format!("{}#{}", op_name(op), id.0),
            None => format!("#{}", id.0),
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf { .. } => "leaf",
        Op::Affine { .. } => "affine",
        Op::Relu(_) => "relu",
        Op::Add(..) => "add",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::Sum(_) => "sum",
        Op::Mean(_) => "mean",
        Op::Columns { .. } => "columns",
        Op::Softmax(_) => "softmax",
        Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
    }
}

fn inputs(op: &Op) -> Vec<NodeId> {
    match *op {
        Op::Leaf { .. } => vec![],
        Op::Affine { input, weight, bias } => vec![input, weight, bias],
        Op::Relu(x) | Op::Scale(x, _) | Op::Sum(x) | Op::Mean(x) | Op::Softmax(x) => vec![x],
        Op::Columns { input, .. } => vec![input],
        Op::Add(a, b) | Op::Mul(a, b) => vec![a, b],
        Op::SoftmaxCrossEntropy { logits, targets } => vec![logits, targets],
    }
}

/// Rows over the last dimension: `(rows, width)`.
fn row_layout(t: &Tensor) -> (usize, usize) {
    let width = *t.shape().last().expect("tensors have rank >= 1");
    (t.len() / width, width)
}

fn shape_err(graph: &Graph, id: NodeId, detail: String) -> Error {
    Error::Shape { node: graph.label(id), detail }
}

/// Evaluates every node; `values[i]` is the value of node `i`.
pub fn evaluate(graph: &Graph, bindings: &Bindings) -> Result<Vec<Tensor>> {
    let mut values: Vec<Tensor> = Vec::with_capacity(graph.nodes.len());
    for (i, op) in graph.nodes.iter().enumerate() {
        let id = NodeId(i);
        let v = match op {
            Op::Leaf { name, .. } => bindings
                .get(&id)
                .cloned()
                .ok_or_else(|| Error::UnboundLeaf(name.clone()))?,
            Op::Affine { input, weight, bias } => {
                let (x, w, b) = (&values[input.0], &values[weight.0], &values[bias.0]);
                if x.shape().len() != 2 || w.shape().len() != 2 || b.shape().len() != 1 {
                    return Err(shape_err(
                        graph,
                        id,
                        format!("expected [n,in]x[out,in]+[out], got {:?}, {:?}, {:?}", x.shape(), w.shape(), b.shape()),
                    ));
                }
                let (n, din) = (x.shape()[0], x.shape()[1]);
                let (dout, win) = (w.shape()[0], w.shape()[1]);
                if win != din || b.len() != dout {
                    return Err(shape_err(
                        graph,
                        id,
                        format!("input {:?} incompatible with weight {:?} and bias {:?}", x.shape(), w.shape(), b.shape()),
                    ));
                }
                let mut out = vec![0.0; n * dout];
                for r in 0..n {
                    let xr = x.row(r);
                    for o in 0..dout {
                        let wr = w.row(o);
                        let acc: f64 = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
                        out[r * dout + o] = acc + b.data()[o];
                    }
                }
                Tensor::new(vec![n, dout], out)?
            }
            Op::Relu(x) => values[x.0].map(|v| if v > 0.0 { v } else { 0.0 }),
            Op::Add(a, b) | Op::Mul(a, b) => {
                let (x, y) = (&values[a.0], &values[b.0]);
                if x.shape() != y.shape() {
                    return Err(shape_err(graph, id, format!("operands {:?} and {:?}", x.shape(), y.shape())));
                }
                let add = matches!(op, Op::Add(..));
                let data = x
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(p, q)| if add { p + q } else { p * q })
                    .collect();
                Tensor::new(x.shape().to_vec(), data)?
            }
            Op::Scale(x, f) => values[x.0].map(|v| v * f),
            Op::Sum(x) => Tensor::scalar(values[x.0].data().iter().sum()),
            Op::Mean(x) => {
                let t = &values[x.0];
                Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64)
            }
            Op::Columns { input, start, len } => {
                let x = &values[input.0];
                if x.shape().len() != 2 || *len == 0 || start + len > x.shape()[1] {
                    return Err(shape_err(
                        graph,
                        id,
                        format!("columns {start}..{} of {:?}", start + len, x.shape()),
                    ));
                }
                let mut data = Vec::with_capacity(x.rows() * len);
                for r in x.iter_rows() {
                    data.extend_from_slice(&r[*start..start + len]);
                }
                Tensor::new(vec![x.rows(), *len], data)?
            }
            Op::Softmax(x) => {
                let t = &values[x.0];
                let (_, width) = row_layout(t);
                let mut data = Vec::with_capacity(t.len());
                for row in t.data().chunks(width) {
                    data.extend(softmax_row(row));
                }
                Tensor::new(t.shape().to_vec(), data)?
            }
            Op::SoftmaxCrossEntropy { logits, targets } => {
                let (z, t) = (&values[logits.0], &values[targets.0]);
                if z.shape() != t.shape() {
                    return Err(shape_err(graph, id, format!("logits {:?} vs targets {:?}", z.shape(), t.shape())));
                }
                let (rows, width) = row_layout(z);
                let mut out = Vec::with_capacity(rows);
                for (zr, tr) in z.data().chunks(width).zip(t.data().chunks(width)) {
                    let logp = floored_log_softmax(zr);
                    out.push(-tr.iter().zip(&logp).map(|(ti, (lp, _))| ti * lp).sum::<f64>());
                }
                Tensor::vector(out)
            }
        };
        values.push(v);
    }
    Ok(values)
}

/// Max-shifted softmax of one row.
pub(crate) fn softmax_row(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `(max(log p_k, ln floor), floored?)` per entry.
fn floored_log_softmax(z: &[f64]) -> Vec<(f64, bool)> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    let floor = PROB_FLOOR.ln();
    z.iter()
        .map(|v| {
            let lp = v - lse;
            if lp < floor {
                (floor, true)
            } else {
                (lp, false)
            }
        })
        .collect()
}

/// Value of the graph root.
pub fn forward(graph: &Graph, bindings: &Bindings) -> Result<Tensor> {
    if graph.is_empty() {
        return Err(invalid("empty graph"));
    }
    let mut values = evaluate(graph, bindings)?;
    Ok(values.pop().expect("nonempty"))
}

/// Gradients of the scalar root with respect to each leaf in `wrt`.
pub fn backward(graph: &Graph, bindings: &Bindings, wrt: &[NodeId]) -> Result<BTreeMap<NodeId, Tensor>> {
    let root = graph.root().ok_or_else(|| invalid("empty graph"))?;
    let values = evaluate(graph, bindings)?;
    backward_from_values(graph, &values, root, wrt)
}

/// Reverse pass over precomputed `values` (from [`evaluate`]) seeded at `root`.
pub fn backward_from_values(
    graph: &Graph,
    values: &[Tensor],
    root: NodeId,
    wrt: &[NodeId],
) -> Result<BTreeMap<NodeId, Tensor>> {
    for &leaf in wrt {
        if !graph.is_leaf(leaf) {
            return Err(Error::UnknownLeaf(graph.label(leaf)));
        }
    }
    if root.0 >= values.len() {
        return Err(invalid(format!("root #{} out of range", root.0)));
    }
    if !values[root.0].is_scalar() {
        return Err(Error::NonScalarRoot(values[root.0].shape().to_vec()));
    }

    let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
    grads[root.0] = Some(Tensor::filled(values[root.0].shape(), 1.0));

    for i in (0..=root.0).rev() {
        let Some(g) = grads[i].take() else { continue };
        let op = &graph.nodes[i];
        match *op {
            Op::Leaf { .. } => {
                grads[i] = Some(g);
                continue;
            }
            Op::Affine { input, weight, bias } => {
                let (x, w) = (&values[input.0], &values[weight.0]);
                let (n, din) = (x.shape()[0], x.shape()[1]);
                let dout = w.shape()[0];
                let mut dx = vec![0.0; n * din];
                let mut dw = vec![0.0; dout * din];
                let mut db = vec![0.0; dout];
                for r in 0..n {
                    let xr = x.row(r);
                    let gr = g.row(r);
                    let dxr = &mut dx[r * din..(r + 1) * din];
                    for o in 0..dout {
                        let go = gr[o];
                        if go == 0.0 {
                            continue;
                        }
                        db[o] += go;
                        let wr = w.row(o);
                        let dwr = &mut dw[o * din..(o + 1) * din];
                        for j in 0..din {
                            dxr[j] += go * wr[j];
                            dwr[j] += go * xr[j];
                        }
                    }
                }
                accumulate(&mut grads, input, Tensor::new(vec![n, din], dx)?);
                accumulate(&mut grads, weight, Tensor::new(vec![dout, din], dw)?);
                accumulate(&mut grads, bias, Tensor::vector(db));
            }
            Op::Relu(x) => {
                let xv = &values[x.0];
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 })
                    .collect();
                accumulate(&mut grads, x, Tensor::new(xv.shape().to_vec(), data)?);
            }
            Op::Add(a, b) => {
                accumulate(&mut grads, a, g.clone());
                accumulate(&mut grads, b, g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&values[a.0], &values[b.0]);
                let ga = g.data().iter().zip(bv.data()).map(|(p, q)| p * q).collect();
                let gb = g.data().iter().zip(av.data()).map(|(p, q)| p * q).collect();
                accumulate(&mut grads, a, Tensor::new(av.shape().to_vec(), ga)?);
                accumulate(&mut grads, b, Tensor::new(bv.shape().to_vec(), gb)?);
            }
            Op::Scale(x, f) => accumulate(&mut grads, x, g.map(|v| v * f)),
            Op::Sum(x) => {
                let s = g.data()[0];
                accumulate(&mut grads, x, Tensor::filled(values[x.0].shape(), s));
            }
            Op::Mean(x) => {
                let n = values[x.0].len() as f64;
                let s = g.data()[0] / n;
                accumulate(&mut grads, x, Tensor::filled(values[x.0].shape(), s));
            }
            Op::Columns { input, start, len } => {
                let xv = &values[input.0];
                let width = xv.shape()[1];
                let mut d = Tensor::zeros(xv.shape());
                for r in 0..xv.rows() {
                    d.data_mut()[r * width + start..r * width + start + len].copy_from_slice(g.row(r));
                }
                accumulate(&mut grads, input, d);
            }
            Op::Softmax(x) => {
                let p = &values[i];
                let (_, width) = row_layout(p);
                let mut d = Vec::with_capacity(p.len());
                for (pr, gr) in p.data().chunks(width).zip(g.data().chunks(width)) {
                    let dot: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    d.extend(pr.iter().zip(gr).map(|(pk, gk)| pk * (gk - dot)));
                }
                accumulate(&mut grads, x, Tensor::new(p.shape().to_vec(), d)?);
            }
            Op::SoftmaxCrossEntropy { logits, targets } => {
                let (z, t) = (&values[logits.0], &values[targets.0]);
                let (_, width) = row_layout(z);
                let mut dz = Vec::with_capacity(z.len());
                let mut dt = Vec::with_capacity(t.len());
                for ((zr, tr), gi) in z.data().chunks(width).zip(t.data().chunks(width)).zip(g.data()) {
                    let logp = floored_log_softmax(zr);
                    let live_mass: f64 = tr
                        .iter()
                        .zip(&logp)
                        .filter(|(_, (_, floored))| !floored)
                        .map(|(tk, _)| tk)
                        .sum();
                    let p = softmax_row(zr);
                    for k in 0..width {
                        let own = if logp[k].1 { 0.0 } else { tr[k] };
                        dz.push(gi * (p[k] * live_mass - own));
                        dt.push(-gi * logp[k].0);
                    }
                }
                accumulate(&mut grads, logits, Tensor::new(z.shape().to_vec(), dz)?);
                accumulate(&mut grads, targets, Tensor::new(t.shape().to_vec(), dt)?);
            }
        }
    }

    Ok(wrt
        .iter()
        .map(|&leaf| {
            let g = grads
                .get(leaf.0)
                .and_then(|g| g.clone())
                .unwrap_or_else(|| Tensor::zeros(values[leaf.0].shape()));
            (leaf, g)
        })
        .collect())
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Central-difference estimate `(f(x + h e_i) - f(x - h e_i)) / 2h` of the
/// root gradient for every coordinate of every leaf in `wrt`.
pub fn finite_difference_gradient(
    graph: &Graph,
    bindings: &Bindings,
    wrt: &[NodeId],
    h: f64,
) -> Result<BTreeMap<NodeId, Tensor>> {
    if !(h > 0.0) {
        return Err(invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let base = forward(graph, bindings)?;
    if !base.is_scalar() {
        return Err(Error::NonScalarRoot(base.shape().to_vec()));
    }
    let mut out = BTreeMap::new();
    let mut probe = bindings.clone();
    for &leaf in wrt {
        if !graph.is_leaf(leaf) {
            return Err(Error::UnknownLeaf(graph.label(leaf)));
        }
        let original = bindings
            .get(&leaf)
            .ok_or_else(|| Error::UnboundLeaf(graph.label(leaf)))?
            .clone();
        let mut grad = Tensor::zeros(original.shape());
        for k in 0..original.len() {
            let x0 = original.data()[k];
            probe.get_mut(&leaf).expect("bound").data_mut()[k] = x0 + h;
            let up = forward(graph, &probe)?.data()[0];
            probe.get_mut(&leaf).expect("bound").data_mut()[k] = x0 - h;
            let down = forward(graph, &probe)?.data()[0];
            probe.get_mut(&leaf).expect("bound").data_mut()[k] = x0;
            grad.data_mut()[k] = (up - down) / (2.0 * h);
        }
        out.insert(leaf, grad);
    }
    Ok(out)
}
