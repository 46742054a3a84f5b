//! The gradient tape.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and backward is a single reverse sweep.

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct BackwardCtx<'a, T> {
    pub inputs: Vec<&'a Tensor<T>>,
    pub output: &'a Tensor<T>,
    pub grad: &'a Tensor<T>,
    pub needs: Vec<bool>,
}

pub(crate) type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Tensor<T>,
    op: &'static str,
    inputs: Vec<Var>,
    backward: Option<BackwardFn<T>>,
    needs_grad: bool,
}

pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf. It participates in backward iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let needs_grad = t.requires_grad();
        self.nodes.push(Node {
            value: t,
            op: "leaf",
            inputs: Vec::new(),
            backward: None,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_requires_grad(true))
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.dims()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records an op application. The output must be finite.
    pub(crate) fn push(
        &mut self,
        op: &'static str,
        value: Tensor<T>,
        inputs: &[Var],
        backward: BackwardFn<T>,
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric { op: op.to_string() });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value: value.with_requires_grad(false),
            op,
            inputs: inputs.to_vec(),
            backward: needs_grad.then_some(backward),
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        let out = &self.nodes[loss.0];
        if out.value.numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar output, got dims {:?}",
                out.value.dims()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut visited = Vec::new();
        grads[loss.0] = Some(Tensor::full(out.value.dims(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            visited.push(idx);
            let ctx = BackwardCtx {
                inputs: node.inputs.iter().map(|v| &self.nodes[v.0].value).collect(),
                output: &node.value,
                grad: &grad,
                needs: node
                    .inputs
                    .iter()
                    .map(|v| self.nodes[v.0].needs_grad)
                    .collect(),
            };
            let input_grads = backward(&ctx);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "op {}", node.op);
            for (input, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                if !g.is_finite() {
                    return Err(Error::Numeric {
                        op: format!("{} (backward)", node.op),
                    });
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += *b;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
            }
        }
        // Leaves have no backward fn, so their gradients are still in place.
        for (idx, node) in self.nodes.iter().enumerate() {
            if !node.inputs.is_empty() {
                grads[idx] = None;
            }
        }
        Ok(Grads { grads, visited })
    }
}

/// Gradients of leaf variables after a backward sweep.
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
    visited: Vec<usize>,
}

impl<T: Real> Grads<T> {
    /// Gradient with respect to a leaf, `None` if it does not influence the output.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    /// Node indices whose backward ran, in the order they ran.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

/// Sums `g` (shaped like the op output) into the shape of a broadcast
/// operand that spans the trailing `c` elements.
pub(crate) fn reduce_to_channels<T: Real>(g: &Tensor<T>, c: usize) -> Tensor<T> {
    let mut out = vec![T::zero(); c];
    for row in g.data().chunks_exact(c) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += *v;
        }
    }
    Tensor::new(vec![c], out).expect("channel reduction")
}
