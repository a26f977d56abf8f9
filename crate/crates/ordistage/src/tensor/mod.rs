//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheaply clonable handle to row-major f64 storage plus an
//! optional gradient buffer. Differentiable operations live on [`Tape`]: each
//! call computes the forward value immediately and, when gradients are being
//! tracked, records a node holding the backward closure. [`Tape::backward`]
//! replays the nodes in reverse insertion order (which is a topological order
//! by construction) and accumulates gradients with `+=`, so repeated backward
//! calls without [`Tensor::zero_grad`] double the gradients.
//!
//! Everything is 64-bit and single-threaded per tape; determinism is bitwise
//! for a fixed seed.

mod gradcheck;
mod ops;

pub use gradcheck::{finite_diff_check, FD_DEFAULT_H};
pub use ops::{unpatchify, UpsampleMode};

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_TENSOR_ID: AtomicU64 = AtomicU64::new(1);

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    requires_grad: Cell<bool>,
    grad: RefCell<Option<Vec<f64>>>,
}

/// Handle to an n-dimensional f64 value, optionally participating in a tape.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad.get())
            .finish()
    }
}

impl Tensor {
    /// Build a tensor from row-major data. Fails if the shape does not
    /// account for every element.
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dim(format!(
                "shape {:?} implies {} elements, data has {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Self::raw(data, shape.to_vec(), false))
    }

    /// Leaf tensor that will receive a gradient on backward.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let t = Self::from_vec(data, shape)?;
        t.inner.requires_grad.set(true);
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel = shape.iter().product();
        Self::raw(vec![0.0; numel], shape.to_vec(), false)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let numel = shape.iter().product();
        Self::raw(vec![value; numel], shape.to_vec(), false)
    }

    /// Rank-0-like scalar, stored as shape `[1]`.
    pub fn scalar(value: f64) -> Tensor {
        Self::raw(vec![value], vec![1], false)
    }

    fn raw(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Tensor {
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_TENSOR_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                requires_grad: Cell::new(requires_grad),
                grad: RefCell::new(None),
            }),
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// Borrow the raw data. Panics if a mutable borrow is live.
    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.inner.data.borrow()
    }

    /// Mutable access to the raw data. Mutating a tensor that already sits on
    /// a tape invalidates the recorded forward values; callers (optimizers,
    /// finite differencing) only do this between tapes.
    pub fn data_mut(&self) -> RefMut<'_, Vec<f64>> {
        self.inner.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().clone()
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar(), "item() on non-scalar tensor");
        self.inner.data.borrow()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad.get()
    }

    pub fn set_requires_grad(&self, value: bool) {
        self.inner.requires_grad.set(value);
    }

    /// Copy of the accumulated gradient, if any backward pass reached this
    /// tensor since the last [`Tensor::zero_grad`].
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Detached copy: same values, no gradient tracking, fresh identity.
    pub fn detach(&self) -> Tensor {
        Self::raw(self.to_vec(), self.inner.shape.clone(), false)
    }

    pub fn all_finite(&self) -> bool {
        self.inner.data.borrow().iter().all(|v| v.is_finite())
    }

    /// Accumulate `delta` into the gradient buffer (allocating zeros first if
    /// the buffer does not exist yet).
    fn accumulate_grad(&self, delta: &[f64]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(buf) => {
                for (g, d) in buf.iter_mut().zip(delta) {
                    *g += d;
                }
            }
            None => {
                *slot = Some(delta.to_vec());
            }
        }
    }

    /// Snapshot of the gradient flowing out of this tensor during backward;
    /// `None` means no downstream node contributed anything.
    fn grad_snapshot(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }
}

struct Node {
    #[allow(dead_code)]
    op: &'static str,
    #[allow(dead_code)]
    inputs: Vec<u64>,
    output: Tensor,
    backward: Box<dyn Fn()>,
}

/// Records differentiable operations in execution order.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// Tape that tracks gradients.
    pub fn new() -> Tape {
        Tape {
            nodes: RefCell::new(Vec::new()),
            enabled: true,
        }
    }

    /// Tape that records nothing; use for inference and frozen submodels.
    pub fn no_grad() -> Tape {
        Tape {
            nodes: RefCell::new(Vec::new()),
            enabled: false,
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Record a node if tracking is on and any input needs a gradient.
    /// The output tensor is marked `requires_grad` so downstream ops chain.
    fn record(
        &self,
        op: &'static str,
        inputs: &[&Tensor],
        output: &Tensor,
        backward: impl Fn() + 'static,
    ) {
        if !self.enabled || !inputs.iter().any(|t| t.requires_grad()) {
            return;
        }
        output.set_requires_grad(true);
        self.nodes.borrow_mut().push(Node {
            op,
            inputs: inputs.iter().map(|t| t.id()).collect(),
            output: output.clone(),
            backward: Box::new(backward),
        });
    }

    /// Reverse pass from a scalar loss. Seeds the loss gradient with 1 and
    /// visits every node exactly once in reverse insertion order,
    /// accumulating into the gradients of all `requires_grad` ancestors.
    ///
    /// Gradients of node outputs (intermediates) are recomputed from scratch
    /// per pass; leaf gradients accumulate across passes until
    /// [`Tensor::zero_grad`].
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if !loss.is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let nodes = self.nodes.borrow();
        let on_tape = loss.requires_grad()
            && (nodes.iter().any(|n| n.output.id() == loss.id()) || nodes.is_empty());
        if !on_tape {
            return Err(Error::Contract(
                "loss is not on this tape (no recorded operation produced it)".into(),
            ));
        }
        // Leaf grads persist; intermediate grads are per-pass scratch.
        for node in nodes.iter() {
            node.output.zero_grad();
        }
        loss.accumulate_grad(&[1.0]);
        for node in nodes.iter().rev() {
            (node.backward)();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_shape_mismatch() {
        assert!(Tensor::from_vec(vec![1.0, 2.0, 3.0], &[2, 2]).is_err());
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let tape = Tape::new();
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let y = tape.mul(&x, &x).unwrap();
        assert!(matches!(tape.backward(&y), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_rejects_off_tape_loss() {
        let tape = Tape::new();
        let x = Tensor::param(vec![1.0], &[1]).unwrap();
        let _ = tape.mul(&x, &x).unwrap();
        let stray = Tensor::scalar(3.0);
        assert!(tape.backward(&stray).is_err());
    }

    #[test]
    fn grad_accumulates_across_backward_calls() {
        let tape = Tape::new();
        let x = Tensor::param(vec![1.0, 2.0, 3.0], &[3]).unwrap();
        let sq = tape.mul(&x, &x).unwrap();
        let loss = tape.sum_all(&sq).unwrap();
        tape.backward(&loss).unwrap();
        let g1 = x.grad().unwrap();
        assert_eq!(g1, vec![2.0, 4.0, 6.0]);
        tape.backward(&loss).unwrap();
        let g2 = x.grad().unwrap();
        assert_eq!(g2, vec![4.0, 8.0, 12.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn no_grad_tape_records_nothing() {
        let tape = Tape::no_grad();
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let y = tape.mul(&x, &x).unwrap();
        assert!(!y.requires_grad());
        assert_eq!(tape.len(), 0);
    }
}
