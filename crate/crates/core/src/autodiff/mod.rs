//! Reverse-mode automatic differentiation over real-valued tensors.
//!
//! Operations are recorded on a [`Tape`]; every node stores a real
//! `ArrayD<f64>` value. Complex quantities live in [`ComplexTensor`] as
//! (re, im) pairs whose arithmetic lowers to real ops, so the tape itself
//! never contains a complex-valued primitive.
//!
//! A tape is single-threaded: build the graph, call [`backward`], drop it.
//! Distinct tapes are independent and may run on distinct threads.

mod check;
mod complex;
mod ops;
#[cfg(test)]
mod tests;

pub use check::{grad_check, op_suite_grad_check};
pub use complex::ComplexTensor;
pub use ops::SymSolveFn;

use std::cell::RefCell;
use std::rc::Rc;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

/// Gradient sink used by backward rules: `sink(parent_id, contribution)`.
type Sink<'a> = dyn FnMut(usize, ArrayD<f64>) + 'a;

/// Backward rule of one node: receives the upstream gradient and pushes
/// contributions to parent nodes.
type BackwardFn = Box<dyn Fn(&ArrayD<f64>, &mut Sink)>;

struct Node {
    op: &'static str,
    backward: BackwardFn,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
    values: Vec<Rc<ArrayD<f64>>>,
}

/// Computation tape. Cheap to clone (shared handle).
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Op names of all recorded nodes, in creation order.
    pub fn ops(&self) -> Vec<&'static str> {
        self.inner.borrow().nodes.iter().map(|n| n.op).collect()
    }

    fn push(&self, op: &'static str, value: Rc<ArrayD<f64>>, backward: BackwardFn) -> usize {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node { op, backward });
        inner.values.push(value);
        inner.nodes.len() - 1
    }

    /// Create a differentiable leaf (e.g. a network parameter).
    pub fn leaf(&self, value: ArrayD<f64>) -> Tensor {
        let value = Rc::new(value);
        let id = self.push("leaf", value.clone(), Box::new(|_, _| {}));
        Tensor {
            value,
            node: Some((self.clone(), id)),
        }
    }

    fn same_tape(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

/// A real-valued tensor, optionally linked to a tape node.
#[derive(Clone)]
pub struct Tensor {
    value: Rc<ArrayD<f64>>,
    node: Option<(Tape, usize)>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.value.shape())
            .field("on_tape", &self.node.is_some())
            .finish()
    }
}

impl Tensor {
    /// A constant (not differentiated) tensor.
    pub fn constant(value: ArrayD<f64>) -> Self {
        Tensor {
            value: Rc::new(value),
            node: None,
        }
    }

    /// A constant scalar (0-dimensional).
    pub fn scalar_const(x: f64) -> Self {
        Tensor::constant(ArrayD::from_elem(IxDyn(&[]), x))
    }

    pub fn value(&self) -> &ArrayD<f64> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn is_on_tape(&self) -> bool {
        self.node.is_some()
    }

    pub fn node_id(&self) -> Option<usize> {
        self.node.as_ref().map(|(_, id)| *id)
    }

    /// Extract the value of a one-element tensor.
    pub fn scalar(&self) -> Result<f64> {
        if self.value.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "expected scalar tensor, got shape {:?}",
                self.shape()
            )));
        }
        Ok(*self.value.iter().next().unwrap())
    }

    /// The tape shared by `self` and `others`, if any operand is on one.
    /// Panics if operands live on different tapes (a programming error).
    fn joint_tape(operands: &[&Tensor]) -> Option<Tape> {
        let mut found: Option<Tape> = None;
        for t in operands {
            if let Some((tape, _)) = &t.node {
                match &found {
                    None => found = Some(tape.clone()),
                    Some(prev) => assert!(
                        prev.same_tape(tape),
                        "operands from different tapes cannot be combined"
                    ),
                }
            }
        }
        found
    }
}

/// Gradients produced by [`backward`], indexed by tape node.
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    /// Empty map (constant loss: nothing to differentiate).
    pub fn empty() -> Self {
        Gradients { grads: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.grads.iter().all(|g| g.is_none())
    }

    /// Gradient of the loss w.r.t. `t`, if `t` was reached.
    pub fn get(&self, t: &Tensor) -> Option<&ArrayD<f64>> {
        let id = t.node_id()?;
        self.grads.get(id)?.as_ref()
    }

    /// Gradient of the loss w.r.t. `t`; zeros if `t` was not reached.
    pub fn get_or_zero(&self, t: &Tensor) -> ArrayD<f64> {
        match self.get(t) {
            Some(g) => g.clone(),
            None => ArrayD::zeros(t.value.raw_dim()),
        }
    }
}

/// Run reverse-mode accumulation from a scalar loss.
///
/// Visits each tape node at most once, in reverse creation order (a valid
/// reverse topological order, since parents always precede children).
pub fn backward(loss: &Tensor) -> Result<Gradients> {
    if loss.value.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "backward requires a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    let (tape, loss_id) = match &loss.node {
        Some((tape, id)) => (tape.clone(), *id),
        None => return Ok(Gradients::empty()),
    };
    let inner = tape.inner.borrow();
    if !loss.value.iter().all(|x| x.is_finite()) {
        // Walk forward to name the first node that went non-finite.
        for (id, v) in inner.values.iter().enumerate().take(loss_id + 1) {
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite {
                    node: id,
                    op: inner.nodes[id].op,
                });
            }
        }
        unreachable!("loss is non-finite but no tape value is");
    }

    let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; loss_id + 1];
    grads[loss_id] = Some(ArrayD::from_elem(loss.value.raw_dim(), 1.0));

    for id in (0..=loss_id).rev() {
        let Some(g) = grads[id].take() else { continue };
        if !g.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite {
                node: id,
                op: inner.nodes[id].op,
            });
        }
        {
            let mut sink = |parent: usize, contribution: ArrayD<f64>| {
                debug_assert!(parent < id, "backward edge must point to an earlier node");
                debug_assert_eq!(
                    contribution.shape(),
                    inner.values[parent].shape(),
                    "gradient shape mismatch for op `{}`",
                    inner.nodes[parent].op
                );
                match &mut grads[parent] {
                    Some(acc) => *acc += &contribution,
                    slot @ None => *slot = Some(contribution),
                }
            };
            (inner.nodes[id].backward)(&g, &mut sink);
        }
        grads[id] = Some(g);
    }

    Ok(Gradients { grads })
}
