//! The tape itself: node storage, leaf construction, reverse pass.

use super::Scalar;
use ndarray::{ArrayD, IxDyn};
use std::cell::{Ref, RefCell};

/// One recorded operation (or leaf) on the tape.
pub(super) struct Node<S: Scalar> {
    pub value: ArrayD<S>,
    pub parents: Vec<usize>,
    pub back: Option<Box<dyn BackOp<S>>>,
    pub needs_grad: bool,
}

/// Backward rule of one op: given the output gradient, the output value and
/// the parent values, produce one gradient per parent (aligned with
/// `Node::parents`).
pub(super) trait BackOp<S: Scalar> {
    fn back(
        &self,
        grad_out: &ArrayD<S>,
        out_value: &ArrayD<S>,
        parent_values: &[&ArrayD<S>],
    ) -> Vec<ArrayD<S>>;
}

/// Gradient tape. Create one per forward pass.
pub struct Tape<S: Scalar> {
    pub(super) nodes: RefCell<Vec<Node<S>>>,
    grad_enabled: bool,
}

/// Handle to a value on a tape. Copyable; tied to the tape's lifetime.
#[derive(Clone, Copy)]
pub struct Tensor<'t, S: Scalar> {
    pub(super) tape: &'t Tape<S>,
    pub(super) idx: usize,
}

impl<S: Scalar> Tape<S> {
    /// Tape that records backward rules.
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), grad_enabled: true }
    }

    /// Tape for inference: ops compute values but record nothing, so no
    /// backward caches are kept alive.
    pub fn inference() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), grad_enabled: false }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    /// Leaf that does not receive a gradient (data, constants, masks).
    pub fn input(&self, value: ArrayD<S>) -> Tensor<'_, S> {
        self.push_leaf(value, false)
    }

    /// Leaf that accumulates a gradient (model parameters, free embeddings).
    pub fn param(&self, value: ArrayD<S>) -> Tensor<'_, S> {
        self.push_leaf(value, self.grad_enabled)
    }

    /// Scalar constant as a 0-d leaf.
    pub fn scalar(&self, value: S) -> Tensor<'_, S> {
        self.input(ArrayD::from_elem(IxDyn(&[]), value))
    }

    fn push_leaf(&self, value: ArrayD<S>, needs_grad: bool) -> Tensor<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, parents: Vec::new(), back: None, needs_grad });
        Tensor { tape: self, idx: nodes.len() - 1 }
    }

    pub(super) fn push_op(
        &self,
        value: ArrayD<S>,
        parents: Vec<usize>,
        back: Box<dyn BackOp<S>>,
    ) -> Tensor<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        if self.grad_enabled {
            let needs_grad = parents.iter().any(|&p| nodes[p].needs_grad);
            nodes.push(Node {
                value,
                parents,
                back: if needs_grad { Some(back) } else { None },
                needs_grad,
            });
        } else {
            nodes.push(Node { value, parents: Vec::new(), back: None, needs_grad: false });
        }
        Tensor { tape: self, idx: nodes.len() - 1 }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reverse pass from a scalar root. Returns gradients for every node
    /// that needed one; read them back through [`GradStore::grad`].
    ///
    /// Panics if `root` is not a single-element tensor.
    pub fn backward(&self, root: Tensor<'_, S>) -> GradStore<S> {
        let nodes = self.nodes.borrow();
        assert!(
            nodes[root.idx].value.len() == 1,
            "backward root must be scalar, got shape {:?}",
            nodes[root.idx].value.shape()
        );
        let mut grads: Vec<Option<ArrayD<S>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.idx] = Some(ArrayD::from_elem(nodes[root.idx].value.raw_dim(), S::one()));

        for idx in (0..=root.idx).rev() {
            let node = &nodes[idx];
            let Some(back) = node.back.as_ref() else { continue };
            let Some(grad_out) = grads[idx].take() else { continue };
            let parent_values: Vec<&ArrayD<S>> =
                node.parents.iter().map(|&p| &nodes[p].value).collect();
            let parent_grads = back.back(&grad_out, &node.value, &parent_values);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, g) in node.parents.iter().zip(parent_grads) {
                if !nodes[p].needs_grad {
                    continue;
                }
                debug_assert_eq!(
                    g.shape(),
                    nodes[p].value.shape(),
                    "gradient shape mismatch for parent {p}"
                );
                match &mut grads[p] {
                    Some(acc) => acc.zip_mut_with(&g, |a, &b| *a = *a + b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        GradStore { grads }
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'t, S: Scalar> Tensor<'t, S> {
    pub fn tape(&self) -> &'t Tape<S> {
        self.tape
    }

    /// Borrow the value in place.
    pub fn value(&self) -> Ref<'t, ArrayD<S>> {
        Ref::map(self.tape.nodes.borrow(), |nodes| &nodes[self.idx].value)
    }

    /// Owned copy of the value.
    pub fn to_array(&self) -> ArrayD<S> {
        self.value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn len(&self) -> usize {
        self.value().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> S {
        let v = self.value();
        assert!(v.len() == 1, "item() on non-scalar tensor of shape {:?}", v.shape());
        *v.iter().next().unwrap()
    }

    pub fn needs_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.idx].needs_grad
    }
}

/// Gradients produced by one reverse pass.
pub struct GradStore<S: Scalar> {
    grads: Vec<Option<ArrayD<S>>>,
}

impl<S: Scalar> GradStore<S> {
    /// Gradient of the root with respect to `t`, if one was accumulated.
    pub fn grad(&self, t: Tensor<'_, S>) -> Option<&ArrayD<S>> {
        self.grads.get(t.idx).and_then(|g| g.as_ref())
    }

    /// Like [`GradStore::grad`] but panics when absent.
    pub fn grad_of(&self, t: Tensor<'_, S>) -> &ArrayD<S> {
        self.grad(t).expect("no gradient recorded for tensor")
    }

    pub fn take(&mut self, t: Tensor<'_, S>) -> Option<ArrayD<S>> {
        self.grads.get_mut(t.idx).and_then(|g| g.take())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn leaf_roundtrip() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.param(arr1(&[1.0, 2.0]).into_dyn());
        assert_eq!(x.shape(), vec![2]);
        assert!(x.needs_grad());
        let c = tape.input(arr1(&[3.0]).into_dyn());
        assert!(!c.needs_grad());
    }

    #[test]
    fn inference_tape_records_no_grads() {
        let tape: Tape<f64> = Tape::inference();
        let x = tape.param(arr1(&[1.0, 2.0]).into_dyn());
        let y = x.add(x);
        assert!(!y.needs_grad());
    }

    #[test]
    #[should_panic(expected = "must be scalar")]
    fn backward_requires_scalar_root() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.param(arr1(&[1.0, 2.0]).into_dyn());
        let _ = tape.backward(x);
    }
}
