use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::{AdError, Tensor};

/// Arguments handed to an adjoint closure during the reverse sweep.
pub struct BackwardArgs<'a> {
    /// Gradient of the root with respect to this node's output.
    pub grad: &'a Tensor,
    /// This node's forward value.
    pub output: &'a Tensor,
    /// Forward values of the parents, in registration order.
    pub inputs: Vec<&'a Tensor>,
    /// Whether each parent needs a gradient at all.
    pub needs: Vec<bool>,
}

/// Adjoint of a recorded operation: one optional gradient per parent.
///
/// Returning `None` for a parent means "no contribution" and is only allowed
/// when `needs[i]` is false or the contribution is identically zero.
pub type BackwardFn = Box<dyn Fn(&BackwardArgs<'_>) -> Vec<Option<Tensor>>>;

struct Node {
    op: &'static str,
    value: Rc<Tensor>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

/// Define-by-run recording of tensor operations.
///
/// Nodes are appended in execution order, so every node's parents precede
/// it. [`Tape::backward`] visits nodes in exact reverse recording order,
/// which makes gradients bitwise reproducible for a given recording.
///
/// Leaf gradients accumulate across repeated `backward` calls until
/// [`Tape::zero_grad`] is called.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    leaf_grads: RefCell<Vec<Option<Tensor>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let nodes = self.tape.nodes.borrow();
        let node = &nodes[self.id];
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("op", &node.op)
            .field("shape", &node.value.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a trainable leaf.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push("leaf", value, Vec::new(), true, None)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push("constant", value, Vec::new(), false, None)
    }

    /// Records an operation with a caller-supplied adjoint.
    ///
    /// If no parent requires a gradient the adjoint is dropped and the
    /// result is a constant.
    pub fn custom<'t, F>(&'t self, op: &'static str, parents: &[Var<'t>], value: Tensor, backward: F) -> Var<'t>
    where
        F: Fn(&BackwardArgs<'_>) -> Vec<Option<Tensor>> + 'static,
    {
        for p in parents {
            debug_assert!(std::ptr::eq(p.tape, self), "parent recorded on another tape");
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        let backward: Option<BackwardFn> = if requires_grad {
            Some(Box::new(backward))
        } else {
            None
        };
        self.push(
            op,
            value,
            parents.iter().map(|p| p.id).collect(),
            requires_grad,
            backward,
        )
    }

    fn push(
        &self,
        op: &'static str,
        value: Tensor,
        parents: Vec<usize>,
        requires_grad: bool,
        backward: Option<BackwardFn>,
    ) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            op,
            value: Rc::new(value),
            parents,
            requires_grad,
            backward,
        });
        self.leaf_grads.borrow_mut().push(None);
        Var { tape: self, id }
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse sweep from a single-element root.
    pub fn backward(&self, root: Var<'_>) -> Result<(), AdError> {
        debug_assert!(std::ptr::eq(root.tape, self));
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.id].value;
        if !root_value.is_scalar_like() {
            return Err(AdError::NonScalarRoot {
                shape: root_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..=root.id).map(|_| None).collect();
        grads[root.id] = Some(Tensor::full(root_value.shape(), 1.0));
        let mut leaf_grads = self.leaf_grads.borrow_mut();

        for id in (0..=root.id).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(backward) = &node.backward else {
                // trainable leaf
                match &mut leaf_grads[id] {
                    Some(acc) => acc.add_assign(&grad),
                    slot @ None => *slot = Some(grad),
                }
                continue;
            };
            let args = BackwardArgs {
                grad: &grad,
                output: &node.value,
                inputs: node.parents.iter().map(|&p| nodes[p].value.as_ref()).collect(),
                needs: node.parents.iter().map(|&p| nodes[p].requires_grad).collect(),
            };
            let parent_grads = backward(&args);
            debug_assert_eq!(parent_grads.len(), node.parents.len(), "adjoint arity of {}", node.op);
            for (&p, g) in node.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(
                    g.len(),
                    nodes[p].value.len(),
                    "adjoint of {} returned a mis-sized gradient",
                    node.op
                );
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    /// Accumulated gradient of a trainable leaf, if any has been produced.
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        self.leaf_grads.borrow()[var.id].clone()
    }

    /// Accumulated gradient, or zeros shaped like the leaf.
    pub fn grad_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.grad(var)
            .unwrap_or_else(|| Tensor::zeros_like(&self.value_of(var.id)))
    }

    pub fn zero_grad(&self) {
        self.leaf_grads.borrow_mut().iter_mut().for_each(|g| *g = None);
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Value of a single-element variable.
    pub fn item(&self) -> f64 {
        self.value().item()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_scalar_root_is_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(AdError::NonScalarRoot { .. })));
    }

    #[test]
    fn root_gradient_is_one() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(4.0));
        tape.backward(x).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 1.0);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::scalar(2.0));
        let y = tape.custom("twice", &[c], Tensor::scalar(4.0), |_| vec![None]);
        assert!(!y.requires_grad());
        tape.backward(y).unwrap();
        assert!(tape.grad(c).is_none());
    }
}
