//! MLP classifier with `K + M` output logits.
//!
//! The first `K` logits score content classes; the trailing `M` score
//! operation labels (label augmentation). Predictions only ever look at
//! the content logits.

mod checkpoint;

use serde::{Deserialize, Serialize};

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::error::{invalid, Error, Result};
use crate::numcore::{self, Bindings, Graph, NodeId, Tensor, PROB_FLOOR};
use crate::rng;

/// Number of content classes `K` and operation classes `M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSpace {
    k: usize,
    m: usize,
}

impl ClassSpace {
    pub fn new(k: usize, m: usize) -> Result<Self> {
        if k < 2 {
            return Err(invalid(format!("need at least 2 content classes, got {k}")));
        }
        Ok(Self { k, m })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn width(&self) -> usize {
        self.k + self.m
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
}

impl Arch {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output: usize) -> Self {
        Self { input_dim, hidden, output }
    }

    /// `(fan_in, fan_out)` of every affine layer in order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden);
        widths.push(self.output);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(invalid(format!("zero-width layer in architecture {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `[fan_out, fan_in]`
    pub weight: Tensor,
    /// `[fan_out]`
    pub bias: Tensor,
}

/// Which logits enter the cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Soft-label cross-entropy over all `K + M` logits.
    Full,
    /// Cross-entropy over the first `K` logits only (operation logits ignored).
    Content,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Arch,
    pub class_space: ClassSpace,
    pub seed: u64,
    pub layers: Vec<Layer>,
    /// Operation label names, one per operation logit (`len == M`).
    pub operations: Vec<String>,
}

/// Glorot-uniform weights, zero biases. Layer `l` draws from substream `l`
/// of `seed`, row-major over `[fan_out, fan_in]`.
pub fn init_params(arch: &Arch, class_space: ClassSpace, operations: Vec<String>, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    if arch.output != class_space.width() {
        return Err(invalid(format!(
            "output width {} does not match K+M = {}",
            arch.output,
            class_space.width()
        )));
    }
    if operations.len() != class_space.m() {
        return Err(invalid(format!(
            "{} operation names for M = {}",
            operations.len(),
            class_space.m()
        )));
    }
    let layers = arch
        .layer_dims()
        .into_iter()
        .enumerate()
        .map(|(l, (fan_in, fan_out))| {
            let bound = glorot_bound(fan_in, fan_out);
            let mut r = rng::substream(seed, l as u64);
            let w = (0..fan_in * fan_out).map(|_| rng::uniform(&mut r, -bound, bound)).collect();
            Layer {
                weight: Tensor::matrix(fan_out, fan_in, w).expect("sized"),
                bias: Tensor::zeros(&[fan_out]),
            }
        })
        .collect();
    Ok(ModelParams { arch: arch.clone(), class_space, seed, layers, operations })
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Graph of the forward pass plus loss, with handles to its leaves.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    pub graph: Graph,
    pub input: NodeId,
    pub targets: NodeId,
    pub layers: Vec<(NodeId, NodeId)>,
    pub logits: NodeId,
    pub losses: NodeId,
    pub root: NodeId,
}

impl ModelGraph {
    pub fn build(arch: &Arch, class_space: ClassSpace, objective: Objective, reduction: Reduction) -> Self {
        let mut graph = Graph::new();
        let input = graph.data("x");
        let mut h = input;
        let mut layers = Vec::new();
        let n_layers = arch.layer_dims().len();
        for l in 0..n_layers {
            let w = graph.param(format!("w{l}"));
            let b = graph.param(format!("b{l}"));
            layers.push((w, b));
            h = graph.affine(h, w, b);
            if l + 1 < n_layers {
                h = graph.relu(h);
            }
        }
        let logits = h;
        let scored = match objective {
            Objective::Content if class_space.m() > 0 => graph.columns(logits, 0, class_space.k()),
            _ => logits,
        };
        let targets = graph.data("targets");
        let losses = graph.softmax_cross_entropy(scored, targets);
        let root = match reduction {
            Reduction::Mean => graph.mean(losses),
            Reduction::Sum => graph.sum(losses),
        };
        Self { graph, input, targets, layers, logits, losses, root }
    }

    pub fn bind(&self, params: &ModelParams, x: &Tensor, targets: &Tensor) -> Bindings {
        let mut b = Bindings::new();
        b.insert(self.input, x.clone());
        b.insert(self.targets, targets.clone());
        for (&(w, bias), layer) in self.layers.iter().zip(&params.layers) {
            b.insert(w, layer.weight.clone());
            b.insert(bias, layer.bias.clone());
        }
        b
    }
}

/// Outputs of one forward/backward pass.
#[derive(Debug, Clone)]
pub struct Pass {
    pub logits: Tensor,
    /// Per-example loss.
    pub losses: Vec<f64>,
    /// Reduced loss (mean or sum).
    pub loss: f64,
}

impl ModelParams {
    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    fn check_batch(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.arch.input_dim {
            return Err(Error::Shape {
                node: "x".into(),
                detail: format!("batch {:?} but model expects [n, {}]", x.shape(), self.arch.input_dim),
            });
        }
        Ok(())
    }

    /// Pre-softmax outputs, `[n, K + M]`.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.check_batch(x)?;
        let mut graph = Graph::new();
        let input = graph.data("x");
        let mut bindings = Bindings::new();
        bindings.insert(input, x.clone());
        let mut h = input;
        let n_layers = self.layers.len();
        for (l, layer) in self.layers.iter().enumerate() {
            let w = graph.param(format!("w{l}"));
            let b = graph.param(format!("b{l}"));
            bindings.insert(w, layer.weight.clone());
            bindings.insert(b, layer.bias.clone());
            h = graph.affine(h, w, b);
            if l + 1 < n_layers {
                h = graph.relu(h);
            }
        }
        numcore::forward(&graph, &bindings)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let z = self.logits(x)?;
        z.iter_rows().map(|row| predict_class(row, self.class_space)).collect()
    }

    /// Loss and gradients with respect to every weight and bias.
    pub fn param_gradients(&self, x: &Tensor, targets: &Tensor, objective: Objective) -> Result<(Pass, Vec<Layer>)> {
        self.check_batch(x)?;
        let mg = ModelGraph::build(&self.arch, self.class_space, objective, Reduction::Mean);
        let values = numcore::evaluate(&mg.graph, &mg.bind(self, x, targets))?;
        let wrt: Vec<NodeId> = mg.layers.iter().flat_map(|&(w, b)| [w, b]).collect();
        let mut grads = numcore::graph_backward(&mg.graph, &values, mg.root, &wrt)?;
        let layers = mg
            .layers
            .iter()
            .map(|(w, b)| Layer {
                weight: grads.remove(w).expect("requested"),
                bias: grads.remove(b).expect("requested"),
            })
            .collect();
        Ok((pass_from(&mg, &values), layers))
    }

    /// Gradient of the summed per-example loss with respect to the input.
    /// Row `i` of the result is the input gradient of example `i`'s own loss.
    pub fn input_gradient(&self, x: &Tensor, targets: &Tensor, objective: Objective) -> Result<(Pass, Tensor)> {
        self.check_batch(x)?;
        let mg = ModelGraph::build(&self.arch, self.class_space, objective, Reduction::Sum);
        let values = numcore::evaluate(&mg.graph, &mg.bind(self, x, targets))?;
        let mut grads = numcore::graph_backward(&mg.graph, &values, mg.root, &[mg.input])?;
        Ok((pass_from(&mg, &values), grads.remove(&mg.input).expect("requested")))
    }

    /// Per-example losses without gradients.
    pub fn losses(&self, x: &Tensor, targets: &Tensor, objective: Objective) -> Result<Pass> {
        self.check_batch(x)?;
        let mg = ModelGraph::build(&self.arch, self.class_space, objective, Reduction::Mean);
        let values = numcore::evaluate(&mg.graph, &mg.bind(self, x, targets))?;
        Ok(pass_from(&mg, &values))
    }
}

fn pass_from(mg: &ModelGraph, values: &[Tensor]) -> Pass {
    Pass {
        logits: values[mg.logits.index()].clone(),
        losses: values[mg.losses.index()].data().to_vec(),
        loss: values[mg.root.index()].data()[0],
    }
}

/// One-hot rows `[n, width]` for class indices.
pub fn one_hot(labels: &[usize], width: usize) -> Result<Tensor> {
    if labels.is_empty() {
        return Err(invalid("empty label batch"));
    }
    let mut data = vec![0.0; labels.len() * width];
    for (i, &y) in labels.iter().enumerate() {
        if y >= width {
            return Err(invalid(format!("label {y} out of range for width {width}")));
        }
        data[i * width + y] = 1.0;
    }
    Tensor::matrix(labels.len(), width, data)
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    numcore::graph_softmax_row(logits)
}

/// `-Σ y_k ln max(p_k, 1e-12)`.
pub fn cross_entropy_soft(p: &[f64], y: &[f64]) -> Result<f64> {
    if p.len() != y.len() {
        return Err(invalid(format!("prediction length {} vs target length {}", p.len(), y.len())));
    }
    Ok(-p
        .iter()
        .zip(y)
        .map(|(pk, yk)| if *yk == 0.0 { 0.0 } else { yk * pk.max(PROB_FLOOR).ln() })
        .sum::<f64>())
}

/// Argmax over the first `K` entries; ties go to the lowest index.
pub fn predict_class(row: &[f64], class_space: ClassSpace) -> Result<usize> {
    let k = class_space.k();
    if k > row.len() {
        return Err(invalid(format!("K = {k} exceeds row length {}", row.len())));
    }
    let mut best = 0;
    for j in 1..k {
        if row[j] > row[best] {
            best = j;
        }
    }
    Ok(best)
}
