//! Reverse-mode automatic differentiation over a dynamically recorded tape.
//!
//! Every op appends one node holding its forward value, its parents and (when
//! gradients are wanted) a closure mapping the output gradient to parent
//! gradients. Node order is a topological order, so a reverse sweep visits
//! every node after all of its consumers. A tape lives for one iteration and
//! is dropped after `backward`.

use super::{Scalar, Tensor};
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a backward closure sees: the incoming gradient, the parents' forward
/// values, and the op's own forward value.
pub struct BackwardCtx<'a, T> {
    pub grad: &'a Tensor<T>,
    pub output: &'a Tensor<T>,
    inputs: Vec<&'a Tensor<T>>,
    needs: Vec<bool>,
}

impl<'a, T> BackwardCtx<'a, T> {
    pub fn input(&self, i: usize) -> &'a Tensor<T> {
        self.inputs[i]
    }

    /// Whether parent `i` wants a gradient; closures may skip work otherwise.
    pub fn needs(&self, i: usize) -> bool {
        self.needs[i]
    }
}

pub type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Tensor<T>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
    kink_tracking: bool,
    kink_hash: u64,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
            kink_tracking: false,
            kink_hash: FNV_OFFSET,
        }
    }

    /// A tape that records values only; no backward closures are built.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            requires_grad: requires_grad && self.grad_enabled,
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Record an op. Fails if the forward value is not finite.
    pub fn custom<F>(
        &mut self,
        op: &'static str,
        inputs: &[Var],
        value: Tensor<T>,
        backward: F,
    ) -> Result<Var>
    where
        F: Fn(&BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> + 'static,
    {
        value.ensure_finite(op)?;
        let requires_grad =
            self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            parents: inputs.iter().map(|v| v.0).collect(),
            requires_grad,
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Fold the activation pattern of a non-smooth op into the kink
    /// signature, when tracking is on. Gradient checks compare signatures of
    /// perturbed evaluations to detect finite differences that straddle a
    /// kink.
    pub(crate) fn record_kinks(&mut self, pattern: impl Iterator<Item = bool>) {
        if !self.kink_tracking {
            return;
        }
        let mut h = self.kink_hash;
        for bit in pattern {
            h ^= bit as u64 + 1;
            h = h.wrapping_mul(FNV_PRIME);
        }
        self.kink_hash = h;
    }

    pub fn track_kinks(&mut self, on: bool) {
        self.kink_tracking = on;
    }

    pub fn kink_signature(&self) -> u64 {
        self.kink_hash
    }

    /// Populate gradients of the scalar `loss` with respect to every
    /// reachable node that requires one. Gradients from multiple uses of a
    /// node accumulate additively.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(root.value.shape().to_vec(), T::one()));

        for i in (0..=loss.0).rev() {
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            let Some(backward) = &node.backward else {
                if node.requires_grad {
                    grads[i] = Some(grad);
                }
                continue;
            };
            let ctx = BackwardCtx {
                grad: &grad,
                output: &node.value,
                inputs: node.parents.iter().map(|&p| &self.nodes[p].value).collect(),
                needs: node
                    .parents
                    .iter()
                    .map(|&p| self.nodes[p].requires_grad)
                    .collect(),
            };
            let parent_grads = backward(&ctx);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, g) in node.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.shape(), self.nodes[p].value.shape());
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of one backward sweep, indexed by [`Var`]. Only leaves that
/// requested gradients keep theirs.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}
