//! Reverse-mode differentiation over a tape of recorded operations.
//!
//! Every operation pushes one node holding its output value, the ids of its
//! parents, and a backward closure that turns the gradient w.r.t. the output
//! into gradient contributions for the parents. Replaying the closures in
//! reverse execution order yields gradients for every `requires_grad` leaf.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor5;

/// Handle to a value recorded on a [`GradGraph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor5<T>, &mut GradStore<T>)>;

struct Node<T: Scalar> {
    value: Tensor5<T>,
    backward: Option<BackwardFn<T>>,
    needs_grad: bool,
    is_leaf: bool,
}

/// Per-variable gradient accumulator used during backward.
pub struct GradStore<T: Scalar> {
    slots: Vec<Option<Tensor5<T>>>,
}

impl<T: Scalar> GradStore<T> {
    fn new(len: usize) -> Self {
        GradStore { slots: (0..len).map(|_| None).collect() }
    }

    /// Add `g` into the slot for `var` (gradients of fan-out sum).
    pub fn accumulate(&mut self, var: Var, g: Tensor5<T>) {
        match &mut self.slots[var.0] {
            Some(acc) => acc.add_assign(&g).expect("gradient shape mismatch"),
            slot @ None => *slot = Some(g),
        }
    }

    pub fn get(&self, var: Var) -> Option<&Tensor5<T>> {
        self.slots[var.0].as_ref()
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor5<T>> {
        self.slots[var.0].take()
    }
}

/// Tape of recorded operations; see the module docs.
pub struct GradGraph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for GradGraph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> GradGraph<T> {
    pub fn new() -> Self {
        GradGraph { nodes: Vec::new() }
    }

    /// Record an input value. Its `requires_grad` flag decides whether a
    /// gradient is produced for it by [`GradGraph::backward`].
    pub fn leaf(&mut self, value: Tensor5<T>) -> Var {
        let needs_grad = value.requires_grad();
        self.nodes.push(Node { value, backward: None, needs_grad, is_leaf: true });
        Var(self.nodes.len() - 1)
    }

    /// Record a value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor5<T>) -> Var {
        self.leaf(value.with_requires_grad(false))
    }

    pub fn value(&self, var: Var) -> &Tensor5<T> {
        &self.nodes[var.0].value
    }

    pub fn needs_grad(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Push an op result. `backward` is dropped when no parent needs a
    /// gradient, so inference-only passes record values but no closures.
    pub(crate) fn push_op(
        &mut self,
        value: Tensor5<T>,
        parents: &[Var],
        backward: impl FnOnce() -> BackwardFn<T>,
    ) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        let backward = needs_grad.then(backward);
        self.nodes.push(Node { value, backward, needs_grad, is_leaf: false });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar output; returns gradients for every
    /// `requires_grad` leaf reachable from `out`.
    pub fn backward(&self, out: Var) -> Result<GradStore<T>> {
        let out_node = &self.nodes[out.0];
        if !out_node.value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar output, got shape {}",
                out_node.value.shape()
            )));
        }
        let mut store = GradStore::new(self.nodes.len());
        store.accumulate(out, Tensor5::scalar(T::one()));
        for id in (0..=out.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                store.slots[id] = None;
                continue;
            }
            if let Some(backward) = &node.backward {
                // Intermediate grads are dropped after use to bound memory.
                if let Some(g) = store.take(Var(id)) {
                    backward(&g, &mut store);
                }
            } else if !node.is_leaf {
                store.slots[id] = None;
            }
        }
        Ok(store)
    }
}
