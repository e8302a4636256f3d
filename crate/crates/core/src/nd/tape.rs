use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::Tensor;
use crate::error::{bail, Result};

/// Gradient rule of a recorded op: receives the upstream gradient of the
/// output and a per-input mask of which inputs need a gradient, and returns
/// one optional gradient buffer per input.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    value: Rc<Tensor>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    grad: Option<Vec<f64>>,
}

/// Linear record of every value produced during one forward pass.
///
/// Nodes are appended in execution order, so parents always precede their
/// children and a reverse scan is a reverse topological order.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that accumulates a gradient on backward.
    pub fn var(&self, t: Tensor) -> Var<'_> {
        self.leaf(t, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.leaf(t, false)
    }

    pub fn leaf(&self, t: Tensor, requires_grad: bool) -> Var<'_> {
        self.shared_leaf(Rc::new(t), requires_grad)
    }

    /// Constant leaf sharing an existing buffer.
    pub fn constant_rc(&self, t: Rc<Tensor>) -> Var<'_> {
        self.shared_leaf(t, false)
    }

    fn shared_leaf(&self, value: Rc<Tensor>, requires_grad: bool) -> Var<'_> {
        self.insert(Node {
            value,
            requires_grad,
            parents: Vec::new(),
            backward: None,
            grad: None,
        })
    }

    fn insert(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// Records an op output. The gradient rule is dropped when no input
    /// requires a gradient.
    pub(crate) fn push_op<'t>(
        &'t self,
        value: Tensor,
        inputs: &[Var<'t>],
        backward: impl Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Var<'t> {
        debug_assert!(inputs.iter().all(|v| std::ptr::eq(v.tape, self)));
        let requires_grad = inputs.iter().any(|v| v.requires_grad());
        let (parents, backward): (Vec<usize>, Option<BackwardFn>) = if requires_grad {
            (inputs.iter().map(|v| v.id).collect(), Some(Box::new(backward)))
        } else {
            (Vec::new(), None)
        };
        self.insert(Node { value: Rc::new(value), requires_grad, parents, backward, grad: None })
    }

    /// Reverse pass from a scalar. Gradients are added into the leaf
    /// accumulators, so repeated calls without [`Tape::zero_grad`] accumulate.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        if nodes[loss.id].value.numel() != 1 {
            bail!(Contract, "backward needs a scalar loss, got shape {:?}", nodes[loss.id].value.shape());
        }
        if !nodes[loss.id].requires_grad {
            return Ok(());
        }
        let mut adjoint: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        adjoint[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let Some(g) = adjoint[id].take() else { continue };
            if nodes[id].backward.is_none() {
                let node = &mut nodes[id];
                if node.requires_grad {
                    match &mut node.grad {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => node.grad = Some(g),
                    }
                }
                continue;
            }
            let node = &nodes[id];
            let mask: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let grads = (node.backward.as_ref().unwrap())(&g, &mask);
            debug_assert_eq!(grads.len(), node.parents.len());
            for ((&p, pg), need) in node.parents.iter().zip(grads).zip(mask) {
                let (Some(pg), true) = (pg, need) else { continue };
                match &mut adjoint[p] {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(pg),
                }
            }
        }
        Ok(())
    }

    pub fn zero_grad(&self) {
        for n in self.nodes.borrow_mut().iter_mut() {
            n.grad = None;
        }
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
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    /// Accumulated gradient of a leaf, zeros if backward never reached it.
    pub fn grad(&self) -> Option<Tensor> {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.id];
        if !n.requires_grad || n.backward.is_some() {
            return None;
        }
        let data = n.grad.clone().unwrap_or_else(|| vec![0.0; n.value.numel()]);
        Some(Tensor::new(n.value.shape(), data).expect("grad shape"))
    }
}
