//! Dense tensors and a tape-free reverse-mode differentiation engine.
//!
//! A [`Graph`] is an append-only list of primitive nodes; the list order
//! is the topological order. Leaves are either parameters or data inputs
//! and receive their values from a [`Bindings`] map at evaluation time, so
//! one graph serves every forward/backward pass of a model.

mod graph;
mod tensor;

pub use graph::{backward, backward_from_values, evaluate, finite_difference_gradient, forward, Bindings, Graph, LeafKind, NodeId};
pub(crate) use graph::backward_from_values as graph_backward;
pub(crate) use graph::softmax_row as graph_softmax_row;
pub use tensor::Tensor;

/// Lower bound applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;
