//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheap, reference-counted handle. Operations on tensors
//! that track gradients record a backward node pointing at their inputs, so
//! the graph is built implicitly during the forward pass and is acyclic by
//! construction (a node can only reference tensors that already exist).
//!
//! ```
//! use lmse_core::tensor::Tensor;
//!
//! let w = Tensor::param(vec![1], vec![3.0]).unwrap();
//! let loss = w.square().sum();
//! loss.backward().unwrap();
//! assert_eq!(w.grad().unwrap(), vec![6.0]);
//! ```
//!
//! Gradients accumulate into leaf parameters across `backward` calls until
//! [`Tensor::zero_grad`] is called; training loops zero them explicitly at the
//! start of every step.

mod conv;
mod gemm;
mod ops;

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

pub use conv::ConvParams;
pub use ops::Activation;

use crate::error::{Error, Result};
use ops::Op;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Run `f` without recording backward nodes. Used for evaluation passes.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

struct Node {
    op: Op,
    parents: Vec<Tensor>,
}

struct Inner {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    node: Option<Node>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish_non_exhaustive()
    }
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, node: Option<Node>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor(Rc::new(Inner {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            node,
        }))
    }

    fn checked(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {n} elements but {} were given",
                data.len()
            )));
        }
        Ok(Tensor::build(shape, data, requires_grad, None))
    }

    /// Constant tensor (no gradient tracking).
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        Tensor::checked(shape, data, false)
    }

    /// Leaf tensor whose gradient is collected by [`Tensor::backward`].
    pub fn param(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        Tensor::checked(shape, data, true)
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::build(shape, vec![0.0; n], false, None)
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::build(vec![], vec![value], false, None)
    }

    /// Result of an operation; records `op` when any parent tracks gradients.
    fn from_op(shape: Vec<usize>, data: Vec<f64>, op: Op, parents: &[&Tensor]) -> Tensor {
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        let node = track.then(|| Node {
            op,
            parents: parents.iter().map(|&p| p.clone()).collect(),
        });
        Tensor::build(shape, data, track, node)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn len(&self) -> usize {
        self.0.data.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        let d = self.data();
        match d.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            ))),
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// In-place update of a leaf's values (optimizer steps, checkpoint loads).
    pub fn update_data(&self, f: impl FnOnce(&mut [f64])) -> Result<()> {
        if self.0.node.is_some() {
            return Err(Error::Contract("cannot mutate a non-leaf tensor".into()));
        }
        f(&mut self.0.data.borrow_mut());
        Ok(())
    }

    /// Copy of this tensor's values with no graph attached.
    pub fn detach(&self) -> Tensor {
        Tensor::build(self.0.shape.clone(), self.to_vec(), false, None)
    }

    fn key(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    /// Reverse-mode sweep from a scalar loss. Each leaf parameter reachable
    /// from `self` has `d self / d leaf` added into its gradient buffer.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::Contract(format!(
                "backward() needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::Contract("loss has no backward graph".into()));
        }

        let order = self.topo_order();
        let mut grads: HashMap<usize, Vec<f64>> = HashMap::with_capacity(order.len());
        grads.insert(self.key(), vec![1.0]);

        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.key()) else {
                continue;
            };
            match &t.0.node {
                Some(node) => {
                    let parent_grads = ops::backward(&node.op, &node.parents, t, &g);
                    for (parent, pg) in node.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        match grads.get_mut(&parent.key()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                grads.insert(parent.key(), pg);
                            }
                        }
                    }
                }
                None => {
                    let mut slot = t.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => *slot = Some(g),
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over the tracked subgraph (parents before children).
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen = std::collections::HashSet::new();
        // (tensor, children_pushed)
        let mut stack = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = &t.0.node {
                for p in &node.parents {
                    if p.requires_grad() && !seen.contains(&p.key()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}
