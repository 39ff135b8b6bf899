//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Tensors are row-major, immutable once created (parameter buffers are the
//! one exception: the optimizer writes them in place between steps), and
//! carry an implicit tape: every op node remembers its parents and a
//! backward closure. Node ids increase monotonically at creation, so the
//! reachable subgraph sorted by descending id is a valid reverse
//! topological order — replaying it is the backward pass.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Ref, RefCell};
use core::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

mod conv;
mod nn;
mod ops;

pub use conv::{avg_pool2d, conv2d, global_avg_pool, ConvArgs};
pub use nn::{batch_norm, linear, softmax_cross_entropy, BnPhase, BnStats};
pub use ops::{
    add, concat_channels, leaky_relu, mul, normalize_filter, permute_flat, reshape, scale, slice,
    sum_all,
};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Context handed to a backward closure: upstream gradient plus the node's
/// parents and which of them need a gradient at all.
pub(crate) struct BackwardCtx<'a, T: Scalar> {
    pub grad_out: &'a [T],
    pub parents: &'a [Tensor<T>],
    pub needs: &'a [bool],
}

/// Computes per-parent gradient contributions. `None` entries are parents
/// that do not need a gradient (the closure may skip the work).
pub(crate) type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>>>;

struct Node<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: Rc<RefCell<Vec<T>>>,
    /// Leaf flag: gradients are materialized here by `backward`.
    requires_grad: bool,
    /// True if this node or any ancestor requires a gradient.
    needs_grad: bool,
    grad: RefCell<Option<Vec<T>>>,
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
}

/// A dense N-dimensional array with optional gradient. Cloning is cheap
/// (reference-counted handle).
pub struct Tensor<T: Scalar> {
    node: Rc<Node<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor { node: Rc::clone(&self.node) }
    }
}

impl<T: Scalar> core::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "Tensor<{}>(id={}, shape={:?}, requires_grad={})",
            T::NAME,
            self.node.id,
            self.node.shape,
            self.node.requires_grad
        )
    }
}

impl<T: Scalar> Tensor<T> {
    fn new_inner(
        shape: Vec<usize>,
        data: Rc<RefCell<Vec<T>>>,
        requires_grad: bool,
        needs_grad: bool,
        parents: Vec<Tensor<T>>,
        backward: Option<BackwardFn<T>>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.borrow().len());
        Tensor {
            node: Rc::new(Node {
                id: fresh_id(),
                shape,
                data,
                requires_grad,
                needs_grad,
                grad: RefCell::new(None),
                parents,
                backward,
            }),
        }
    }

    /// Constant leaf (no gradient tracking).
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "element count {} does not match shape {:?}",
            data.len(),
            shape
        );
        Self::new_inner(shape.to_vec(), Rc::new(RefCell::new(data)), false, false, vec![], None)
    }

    /// Learnable leaf: `backward` populates its gradient and the optimizer
    /// may update its buffer in place.
    pub fn parameter(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self::new_inner(shape.to_vec(), Rc::new(RefCell::new(data)), true, true, vec![], None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_vec(shape, vec![T::zero(); n])
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self::from_vec(shape, vec![value; n])
    }

    pub fn scalar(value: T) -> Self {
        Self::from_vec(&[1], vec![value])
    }

    /// Result of an op: gradient plumbing is kept only if some parent needs it.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        let needs = parents.iter().any(|p| p.node.needs_grad);
        let (parents, backward) = if needs { (parents, Some(backward)) } else { (vec![], None) };
        Self::new_inner(shape, Rc::new(RefCell::new(data)), false, needs, parents, backward)
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn numel(&self) -> usize {
        self.node.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    #[allow(dead_code)]
    pub(crate) fn needs_grad(&self) -> bool {
        self.node.needs_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.node.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        let d = self.node.data.borrow();
        assert_eq!(d.len(), 1, "item() on tensor with {} elements", d.len());
        d[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    /// In-place buffer update, used by the optimizer. The shape is fixed.
    pub fn set_data(&self, new: &[T]) {
        let mut d = self.node.data.borrow_mut();
        assert_eq!(d.len(), new.len());
        d.copy_from_slice(new);
    }

    /// Apply `f` to the raw buffer in place (optimizer update rule).
    pub fn update_data(&self, f: impl FnOnce(&mut [T])) {
        f(&mut self.node.data.borrow_mut());
    }

    /// A leaf view of the same buffer with gradient tracking disabled.
    /// Forward passes through detached parameters build no graph.
    pub fn detach(&self) -> Tensor<T> {
        Self::new_inner(
            self.node.shape.clone(),
            Rc::clone(&self.node.data),
            false,
            false,
            vec![],
            None,
        )
    }

    /// Same buffer reinterpreted as a gradient-requiring leaf (used by the
    /// encoding-gradient diagnostic).
    pub fn requiring_grad(&self) -> Tensor<T> {
        Self::new_inner(
            self.node.shape.clone(),
            Rc::clone(&self.node.data),
            true,
            true,
            vec![],
            None,
        )
    }

    /// Reverse pass from a scalar loss. Gradients of all reachable
    /// gradient-requiring leaves are (re)populated exactly once.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss { numel: self.numel() });
        }

        // Collect the reachable subgraph that participates in gradients.
        let mut visited: BTreeSet<u64> = BTreeSet::new();
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut stack: Vec<Tensor<T>> = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !t.node.needs_grad && !t.node.requires_grad && !Rc::ptr_eq(&t.node, &self.node) {
                continue;
            }
            if visited.insert(t.node.id) {
                for p in &t.node.parents {
                    if p.node.needs_grad {
                        stack.push(p.clone());
                    }
                }
                order.push(t);
            }
        }
        // Children always have larger ids than their parents.
        order.sort_by(|a, b| b.node.id.cmp(&a.node.id));

        let mut grads: BTreeMap<u64, Vec<T>> = BTreeMap::new();
        grads.insert(self.node.id, vec![T::one()]);

        for t in &order {
            let Some(g) = grads.remove(&t.node.id) else { continue };
            if t.node.requires_grad {
                *t.node.grad.borrow_mut() = Some(g.clone());
            }
            let Some(back) = &t.node.backward else { continue };
            let needs: Vec<bool> = t.node.parents.iter().map(|p| p.node.needs_grad).collect();
            let ctx = BackwardCtx { grad_out: &g, parents: &t.node.parents, needs: &needs };
            let contribs = back(&ctx);
            debug_assert_eq!(contribs.len(), t.node.parents.len());
            for (p, c) in t.node.parents.iter().zip(contribs) {
                let Some(c) = c else { continue };
                debug_assert_eq!(c.len(), p.numel());
                match grads.get_mut(&p.node.id) {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(&c) {
                            *a += *v;
                        }
                    }
                    None => {
                        grads.insert(p.node.id, c);
                    }
                }
            }
        }
        Ok(())
    }

    pub(crate) fn same_shape_check(&self, other: &Tensor<T>, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", self.shape(), other.shape()),
            });
        }
        Ok(())
    }
}

/// Convert a buffer between scalar types (used to move f32 checkpoints into
/// f64 gradient-check runs and back).
pub fn convert_buffer<A: Scalar, B: Scalar>(src: &[A]) -> Vec<B> {
    src.iter().map(|v| B::from_f64(v.as_f64())).collect()
}
