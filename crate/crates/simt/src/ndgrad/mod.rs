//! Dense multi-dimensional arrays with reverse-mode automatic differentiation.
//!
//! The op set is exactly what a small encoder-decoder transformer needs:
//! matmul (plain and batched), softmax, layer normalization, elementwise
//! arithmetic, embedding gather, and label-smoothed cross-entropy. Everything
//! is 64-bit: at desk scale speed is a non-issue and gradient checks against
//! central finite differences become reliable to tight tolerances.
//!
//! Tensors are cheap handles (`Rc`) onto reference-counted nodes. An op whose
//! inputs require gradients records a backward rule on its output node;
//! calling [`Tensor::backward`] on a scalar loss replays the rules in reverse
//! topological order. Graph construction is single-threaded per training
//! step; inference runs inside [`no_grad`] and records nothing.

mod matmul;
mod nn;
mod ops;

pub mod check;

pub use ops::concat_last;

use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Scope guard that disables gradient recording on the current thread.
pub struct NoGradGuard {
    prev: bool,
}

/// Disable gradient recording until the returned guard is dropped.
pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    NoGradGuard { prev }
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        let prev = self.prev;
        GRAD_ENABLED.with(|g| g.set(prev));
    }
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Backward rule: maps the output gradient to per-parent contributions
/// (aligned with the node's parent list; `None` = not differentiable there).
type BackwardFn = Box<dyn FnOnce(&[f64]) -> Vec<Option<Vec<f64>>>>;

struct Inner {
    id: u64,
    data: Vec<f64>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// A dense f64 array, optionally attached to a gradient graph.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<Inner>>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &inner.shape)
            .field("requires_grad", &inner.requires_grad)
            .finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn new_inner(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Tensor {
        assert_eq!(
            data.len(),
            numel_of(&shape),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            inner: Rc::new(RefCell::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                data,
                shape,
                requires_grad,
                grad: None,
                parents: Vec::new(),
                backward: None,
            })),
        }
    }

    /// Constant tensor (no gradient).
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Tensor {
        Tensor::new_inner(data, shape.to_vec(), false)
    }

    /// Trainable leaf tensor.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Tensor {
        Tensor::new_inner(data, shape.to_vec(), true)
    }

    /// Rank-0 scalar constant.
    pub fn scalar(v: f64) -> Tensor {
        Tensor::new_inner(vec![v], vec![], false)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::from_vec(vec![0.0; numel_of(shape)], shape)
    }

    /// Output node of an op: records the backward rule when any parent is
    /// tracked and gradient mode is on, otherwise yields a detached constant.
    pub(crate) fn from_op<F>(
        data: Vec<f64>,
        shape: Vec<usize>,
        parents: Vec<Tensor>,
        backward: F,
    ) -> Tensor
    where
        F: FnOnce(&[f64]) -> Vec<Option<Vec<f64>>> + 'static,
    {
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if !track {
            return Tensor::new_inner(data, shape, false);
        }
        let t = Tensor::new_inner(data, shape, true);
        {
            let mut inner = t.inner.borrow_mut();
            inner.parents = parents;
            inner.backward = Some(Box::new(backward));
        }
        t
    }

    pub fn id(&self) -> u64 {
        self.inner.borrow().id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn rank(&self) -> usize {
        self.inner.borrow().shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    /// Copy of the stored values.
    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.borrow().data.clone()
    }

    /// Run `f` against the stored values without copying.
    pub fn with_data<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.inner.borrow().data)
    }

    /// The single value of a scalar (numel == 1) tensor.
    pub fn item(&self) -> f64 {
        let inner = self.inner.borrow();
        assert_eq!(inner.data.len(), 1, "item() on non-scalar tensor");
        inner.data[0]
    }

    /// Accumulated gradient, if this node was reached by a backward pass.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    /// Gradient with absent-means-zero semantics: a parameter that never
    /// entered the graph has an exactly-zero gradient.
    pub fn grad_or_zeros(&self) -> Vec<f64> {
        let inner = self.inner.borrow();
        match &inner.grad {
            Some(g) => g.clone(),
            None => vec![0.0; inner.data.len()],
        }
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Flip leaf trainability (freezing a pretrained backbone).
    pub fn set_requires_grad(&self, value: bool) {
        self.inner.borrow_mut().requires_grad = value;
    }

    /// Overwrite the stored values (optimizer step, test perturbations).
    /// Only valid between training steps, once the graph has been dropped.
    pub fn set_data(&self, data: &[f64]) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(
            data.len(),
            inner.data.len(),
            "set_data length mismatch for shape {:?}",
            inner.shape
        );
        inner.data.copy_from_slice(data);
    }

    /// Apply `f` to the stored values in place.
    pub fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.inner.borrow_mut().data);
    }

    /// Same values, detached from any gradient graph.
    pub fn detach(&self) -> Tensor {
        Tensor::from_vec(self.to_vec(), &self.shape())
    }

    fn accumulate_grad(&self, contrib: &[f64]) {
        let mut inner = self.inner.borrow_mut();
        debug_assert_eq!(contrib.len(), inner.data.len());
        match &mut inner.grad {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contrib) {
                    *gi += ci;
                }
            }
            None => inner.grad = Some(contrib.to_vec()),
        }
    }

    /// Reverse-mode backward pass from a scalar loss. Populates `grad` on
    /// every tracked ancestor; consumes the recorded graph.
    pub fn backward(&self) -> Result<()> {
        {
            let inner = self.inner.borrow();
            if inner.data.len() != 1 {
                return Err(Error::Usage(format!(
                    "backward requires a scalar loss, got shape {:?}",
                    inner.shape
                )));
            }
            if !inner.requires_grad {
                return Err(Error::Usage(
                    "loss is not attached to a gradient graph".into(),
                ));
            }
        }

        // Reverse post-order: every consumer is processed before the node it
        // consumes, so gradients are fully accumulated on arrival.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            let inner = t.inner.borrow();
            if inner.backward.is_some() {
                for p in &inner.parents {
                    let pb = p.inner.borrow();
                    if pb.backward.is_some() && !visited.contains(&pb.id) {
                        drop(pb);
                        stack.push((p.clone(), false));
                    }
                }
            }
        }

        self.accumulate_grad(&[1.0]);

        for t in order.iter().rev() {
            let (bw, grad, parents) = {
                let mut inner = t.inner.borrow_mut();
                (inner.backward.take(), inner.grad.clone(), inner.parents.clone())
            };
            let (Some(bw), Some(grad)) = (bw, grad) else {
                continue;
            };
            let contribs = bw(&grad);
            debug_assert_eq!(contribs.len(), parents.len());
            for (p, c) in parents.iter().zip(contribs) {
                if let Some(c) = c {
                    if p.requires_grad() {
                        p.accumulate_grad(&c);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_of_sum_is_ones() {
        let w = Tensor::param(vec![2.0, -1.0, 0.5], &[3]);
        let loss = w.sum_all();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn unused_parameter_gets_exact_zero() {
        let w = Tensor::param(vec![1.0, 2.0], &[2]);
        let unused = Tensor::param(vec![3.0, 4.0], &[2]);
        let loss = w.sum_all();
        loss.backward().unwrap();
        assert!(unused.grad().is_none());
        assert_eq!(unused.grad_or_zeros(), vec![0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_a_usage_error() {
        let w = Tensor::param(vec![1.0, 2.0], &[2]);
        let doubled = w.scale(2.0);
        assert!(matches!(doubled.backward(), Err(Error::Usage(_))));
    }

    #[test]
    fn no_grad_suppresses_recording() {
        let w = Tensor::param(vec![1.0, 2.0], &[2]);
        let guard = no_grad();
        let y = w.scale(3.0).sum_all();
        drop(guard);
        assert!(!y.requires_grad());
        assert!(y.backward().is_err());
    }

    #[test]
    fn shared_parameter_accumulates_both_paths() {
        // loss = sum(w) + sum(2w) -> grad = 3 everywhere
        let w = Tensor::param(vec![1.0, 1.0], &[2]);
        let loss = w.sum_all().add(&w.scale(2.0).sum_all()).unwrap();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![3.0, 3.0]);
    }
}
