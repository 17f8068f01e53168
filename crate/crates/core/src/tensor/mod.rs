//! N-dimensional float tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheap-to-clone handle to an immutable value plus the
//! record of the operation that produced it. Leaves (inputs, parameters) are
//! created directly; every operation appends a node whose creation id is
//! strictly larger than its inputs', so the implicit graph is topologically
//! ordered by id and [`backward`] visits it in exact reverse creation order.
//!
//! Rank-4 tensors use row-major N,C,H,W layout. Values are never mutated
//! while part of a live graph; optimizers update leaf data between graphs.

mod gradcheck;
pub(crate) mod ops;
pub mod shape;

pub use gradcheck::grad_check;
pub use ops::{concat_channels, ewise, EwiseOp};

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub(crate) use ops::Op;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(1) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let v = c.get();
        c.set(v + 1);
        v
    })
}

struct Inner<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    requires_grad: Cell<bool>,
    op: Op<T>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
}

/// Handle to one tensor value in a computation graph.
pub struct Tensor<T: Scalar> {
    inner: Rc<Inner<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={:?}, requires_grad={})",
            self.inner.id,
            self.inner.shape,
            self.inner.requires_grad.get()
        )
    }
}

impl<T: Scalar> Tensor<T> {
    fn leaf(shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Self {
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape,
                requires_grad: Cell::new(requires_grad),
                op: Op::Leaf,
                data: RefCell::new(data),
                grad: RefCell::new(None),
            }),
        }
    }

    /// Build a tensor from raw contents. Fails when the element count does
    /// not match the shape.
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "dimension sizes must be at least 1, got {:?}",
                shape
            )));
        }
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::Shape(format!(
                "expected {} elements, got {}",
                n,
                data.len()
            )));
        }
        Ok(Self::leaf(shape, data, false))
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        assert!(
            shape.iter().all(|&d| d >= 1),
            "dimension sizes must be at least 1, got {:?}",
            shape
        );
        let n = shape.iter().product();
        Self::leaf(shape, vec![value; n], false)
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    /// Scalar tensor of shape `[1]`.
    pub fn scalar(value: T) -> Self {
        Self::leaf(vec![1], vec![value], false)
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        assert!(shape.iter().all(|&d| d >= 1));
        let n: usize = shape.iter().product();
        Self::leaf(shape, (0..n).map(|i| f(i)).collect(), false)
    }

    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<T>, op: Op<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        #[cfg(debug_assertions)]
        for v in &data {
            debug_assert!(!v.is_nan(), "NaN produced by {}", op.name());
        }
        let track = op.requires_grad();
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape,
                requires_grad: Cell::new(track),
                op: if track { op } else { Op::Leaf },
                data: RefCell::new(data),
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

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad.get()
    }

    /// Mark a leaf as a gradient target. Meaningful for leaves only;
    /// intermediate nodes derive their flag from their inputs.
    pub fn set_requires_grad(&self, flag: bool) {
        self.inner.requires_grad.set(flag);
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.inner.data.borrow()
    }

    /// Mutable value access for leaves (parameter updates, test setup).
    /// Tensors participating in a live graph must not be mutated.
    pub fn data_mut(&self) -> RefMut<'_, Vec<T>> {
        self.inner.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() requires a single-element tensor, got {:?}",
                self.shape()
            )));
        }
        Ok(self.inner.data.borrow()[0])
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Add into the gradient slot (allocating zeros first if absent).
    pub fn accumulate_grad(&self, delta: &[T]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gv, dv) in g.iter_mut().zip(delta) {
                    *gv = *gv + *dv;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    pub(crate) fn op(&self) -> &Op<T> {
        &self.inner.op
    }

    /// Copy of the channel band `[start, start+len)` as a fresh leaf.
    /// Plain data utility, not recorded on the graph.
    pub fn narrow_channels(&self, start: usize, len: usize) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::Shape(format!(
                "narrow_channels expects rank-4 tensor, got {:?}",
                s
            )));
        }
        if start + len > s[1] || len == 0 {
            return Err(Error::Shape(format!(
                "channel range {}..{} out of bounds for {} channels",
                start,
                start + len,
                s[1]
            )));
        }
        let plane = s[2] * s[3];
        let data = self.data();
        let mut out = Vec::with_capacity(s[0] * len * plane);
        for n in 0..s[0] {
            let base = (n * s[1] + start) * plane;
            out.extend_from_slice(&data[base..base + len * plane]);
        }
        Tensor::from_vec(vec![s[0], len, s[2], s[3]], out)
    }
}

/// Reverse-mode gradient pass from a scalar loss.
///
/// Every gradient-tracked tensor reachable from `loss` accumulates
/// `d loss / d tensor` into its `grad` slot (additively, so fan-out and
/// repeated backward calls sum). Nodes are visited in exact reverse
/// creation order, which is a valid topological order by construction.
pub fn backward<T: Scalar>(loss: &Tensor<T>) -> Result<()> {
    if loss.numel() != 1 {
        return Err(Error::Contract(format!(
            "backward requires a scalar loss, got {} elements",
            loss.numel()
        )));
    }
    if !loss.requires_grad() {
        return Err(Error::Contract(
            "loss is not connected to any gradient-tracked tensor".into(),
        ));
    }

    let mut nodes: Vec<Tensor<T>> = Vec::new();
    let mut seen: HashSet<u64> = HashSet::new();
    let mut stack = vec![loss.clone()];
    seen.insert(loss.id());
    while let Some(t) = stack.pop() {
        for p in t.op().parents() {
            if p.requires_grad() && seen.insert(p.id()) {
                stack.push(p.clone());
            }
        }
        nodes.push(t);
    }
    nodes.sort_by(|a, b| b.id().cmp(&a.id()));

    // Output gradients are staged in a local table so repeated backward
    // calls on one graph stay independent; they land in the tensors' grad
    // slots only once fully accumulated.
    let mut table: HashMap<u64, Vec<T>> = HashMap::new();
    table.insert(loss.id(), vec![T::one()]);
    for node in &nodes {
        let Some(g) = table.remove(&node.id()) else {
            continue;
        };
        ops::propagate(node, &g, &mut table);
        node.accumulate_grad(&g);
    }
    Ok(())
}

#[cfg(test)]
mod tests;
