use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::Hasher;

use super::params::{ParamId, ParamStore};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable primitive.
///
/// `forward` computes the output value from the input values. `backward`
/// receives the same inputs, the forward output and the gradient flowing into
/// the output, and returns one entry per input. An entry may be `None` when
/// `wanted[i]` is false.
pub trait Op<T: Scalar> {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>>;

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        wanted: &[bool],
    ) -> Vec<Option<Tensor<T>>>;

    /// Writes which piece of a piecewise definition each element took.
    /// Smooth ops write nothing.
    fn branches(&self, _inputs: &[&Tensor<T>], _state: &mut dyn Hasher) {}
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Option<Box<dyn Op<T>>>,
    inputs: Vec<Var>,
    requires_grad: bool,
}

/// Recording of one forward evaluation.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order: every input of a node has a smaller index.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    param_nodes: HashMap<ParamId, Var>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, node: Node<T>) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient (images, targets).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Node {
            value,
            op: None,
            inputs: Vec::new(),
            requires_grad: false,
        })
    }

    /// Leaf that receives a gradient but is not backed by a parameter.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(Node {
            value,
            op: None,
            inputs: Vec::new(),
            requires_grad: true,
        })
    }

    /// Leaf holding the current value of a parameter. Reading the same
    /// parameter twice yields the same node, so fan-out gradients add up.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let v = self.push(Node {
            value: store.get(id).value.clone(),
            op: None,
            inputs: Vec::new(),
            requires_grad: true,
        });
        self.param_nodes.insert(id, v);
        v
    }

    /// Records `op` applied to `inputs`.
    pub fn apply(&mut self, op: impl Op<T> + 'static, inputs: &[Var]) -> Result<Var> {
        let value = {
            let values: Vec<&Tensor<T>> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            op.forward(&values)?
        };
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(Node {
            value,
            op: Some(Box::new(op)),
            inputs: inputs.to_vec(),
            requires_grad,
        }))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Name of the primitive that produced `v`, or `"leaf"`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.as_ref().map_or("leaf", |op| op.name())
    }

    /// Hash of the branch taken by every piecewise op on the tape. Two
    /// evaluations with equal fingerprints lie on the same smooth piece.
    pub fn branch_fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            if let Some(op) = &node.op {
                let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                op.branches(&inputs, &mut h);
            }
        }
        h.finish()
    }

    /// Propagates d(loss)/d(node) to every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(loss_value.map(|_| T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(op) = node.op.as_ref() else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = grads[i].take() else { continue };
            let wanted: Vec<bool> = node
                .inputs
                .iter()
                .map(|v| self.nodes[v.0].requires_grad)
                .collect();
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let input_grads = op.backward(&inputs, &node.value, &grad, &wanted);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for ((input, g), want) in node.inputs.iter().zip(input_grads).zip(&wanted) {
                let Some(g) = g else { continue };
                if !want {
                    continue;
                }
                debug_assert_eq!(
                    g.shape(),
                    self.nodes[input.0].value.shape(),
                    "{} produced a gradient of the wrong shape",
                    op.name()
                );
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
            grads[i] = Some(grad);
        }
        self.grads = grads;
        Ok(())
    }

    /// Adds the gradients of every parameter leaf into `store`.
    pub fn write_param_grads(&self, store: &mut ParamStore<T>) {
        for (&id, &v) in &self.param_nodes {
            if let Some(g) = self.grad(v) {
                store.get_mut(id).grad.add_assign(g);
            }
        }
    }

    /// `backward` followed by `write_param_grads`.
    pub fn backward_into(&mut self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        self.backward(loss)?;
        self.write_param_grads(store);
        Ok(())
    }
}
