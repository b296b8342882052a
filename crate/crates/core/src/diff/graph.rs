//! Reverse-mode differentiation over a tape of tensor-valued nodes.
//!
//! Nodes are appended in evaluation order, so every node's inputs have
//! smaller ids than the node itself and the tape is acyclic by construction.
//! [`Graph::backward`] walks the tape once in reverse and hands each
//! tracked node's accumulated gradient to its [`Backward`] rule.

use alloc::borrow::Cow;
use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of the op that produced a node.
///
/// `needs[i]` is false for inputs that carry no gradient; rules may return
/// `None` for those entries and skip the work.
pub trait Backward {
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>>;
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    inputs: Vec<NodeId>,
    rule: Option<Box<dyn Backward + 'p>>,
    tracked: bool,
}

/// A single computation. Parameters may be borrowed for the graph's lifetime.
#[derive(Default)]
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn leaf(&mut self, value: Cow<'p, Tensor>, tracked: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            rule: None,
            tracked,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(Cow::Owned(value), false)
    }

    pub fn constant_ref(&mut self, value: &'p Tensor) -> NodeId {
        self.leaf(Cow::Borrowed(value), false)
    }

    /// Leaf whose gradient is collected by [`Graph::backward`].
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.leaf(Cow::Owned(value), true)
    }

    pub fn param(&mut self, value: &'p Tensor) -> NodeId {
        self.leaf(Cow::Borrowed(value), true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn is_tracked(&self, id: NodeId) -> bool {
        self.nodes[id.0].tracked
    }

    /// Appends the result of an op. Untracked when none of its inputs are tracked.
    pub fn push(
        &mut self,
        value: Tensor,
        inputs: Vec<NodeId>,
        rule: impl Backward + 'p,
        op: &'static str,
    ) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op });
        }
        let tracked = inputs.iter().any(|i| self.nodes[i.0].tracked);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            inputs,
            rule: if tracked { Some(Box::new(rule)) } else { None },
            tracked,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Gradients of the scalar `root` with respect to every tracked node.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(root_value.shape(), 1.0));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            let Some(rule) = node.rule.as_ref() else {
                continue;
            };
            let (lower, upper) = grads.split_at_mut(i);
            let Some(grad) = upper[0].as_ref() else {
                continue;
            };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|id| self.value(*id)).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|id| self.nodes[id.0].tracked).collect();
            let input_grads = rule.backward(&inputs, &node.value, grad, &needs);
            for ((id, g), need) in node.inputs.iter().zip(input_grads).zip(&needs) {
                let (Some(g), true) = (g, *need) else {
                    continue;
                };
                debug_assert_eq!(g.shape(), self.value(*id).shape());
                match &mut lower[id.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }
        for (i, node) in self.nodes.iter().enumerate().take(root.0 + 1) {
            if !node.tracked {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

/// Result of a backward pass, indexed by [`NodeId`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the node is untracked or not reachable from the root.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}
