//! Dense row-major tensors with reverse-mode differentiation.
//!
//! Every operation computes its result eagerly and, when any input is
//! tracked, records a backward rule on an implicit tape (the graph of
//! [`Node`]s reachable from the result). Node ids increase monotonically as
//! operations run, so replaying nodes in descending id order visits the tape
//! in reverse and accumulates gradients by the chain rule.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use crate::element::Element;
use crate::param::Parameter;
use crate::TensorError;

thread_local! {
    static NEXT_NODE_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn fresh_node_id() -> u64 {
    NEXT_NODE_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

struct GradGuard(bool);

impl Drop for GradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|c| c.set(self.0));
    }
}

/// Runs `f` with gradient recording disabled: no nodes are created, values
/// come out untracked. Restores the previous state on exit, including on
/// panic.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let previous = GRAD_ENABLED.with(|c| c.replace(false));
    let _guard = GradGuard(previous);
    f()
}

/// Backward rule: maps this node's cotangent to one cotangent per tracked
/// parent, in parent order.
type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Vec<T>>>;

pub(crate) struct Node<T: Element> {
    id: u64,
    len: usize,
    grad: RefCell<Option<Vec<T>>>,
    parents: Vec<Rc<Node<T>>>,
    backward: Option<BackwardFn<T>>,
    /// Present on leaves created from a [`Parameter`]; gradients reaching the
    /// leaf are flushed into the parameter's persistent accumulator.
    param: Option<Rc<Parameter<T>>>,
}

/// Dense multi-dimensional array. Values are immutable once produced; clones
/// share the underlying buffer.
#[derive(Clone)]
pub struct Tensor<T: Element> {
    shape: Vec<usize>,
    data: Rc<[T]>,
    node: Option<Rc<Node<T>>>,
}

impl<T: Element> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("requires_grad", &self.node.is_some())
            .field("data", &&self.data[..self.data.len().min(8)])
            .finish()
    }
}

pub(crate) fn check_shape(op: &'static str, shape: &[usize], len: usize) -> Result<(), TensorError> {
    if shape.iter().any(|&e| e == 0) {
        return Err(TensorError::InvalidShape {
            op,
            shape: shape.to_vec(),
            reason: "extents must be positive".into(),
        });
    }
    let numel: usize = shape.iter().product();
    if numel != len {
        return Err(TensorError::InvalidShape {
            op,
            shape: shape.to_vec(),
            reason: format!("shape holds {} values but {} were given", numel, len),
        });
    }
    Ok(())
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0usize; shape.len()];
    let mut acc = 1usize;
    for ax in (0..shape.len()).rev() {
        strides[ax] = acc;
        acc *= shape[ax];
    }
    strides
}

/// Copies `count` elements walking `src` with the given (possibly zero)
/// strides over `shape`, writing densely into `dst`.
fn strided_gather<T: Element>(src: &[T], dst: &mut [T], shape: &[usize], strides: &[usize]) {
    let rank = shape.len();
    if rank == 0 {
        dst[0] = src[0];
        return;
    }
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for d in dst.iter_mut() {
        *d = src[off];
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += strides[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            off -= strides[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
}

/// Adjoint of [`strided_gather`]: accumulates dense `grad` back through the
/// same walk into `acc`.
fn strided_scatter_add<T: Element>(grad: &[T], acc: &mut [T], shape: &[usize], strides: &[usize]) {
    let rank = shape.len();
    if rank == 0 {
        acc[0] = acc[0] + grad[0];
        return;
    }
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for g in grad.iter() {
        acc[off] = acc[off] + *g;
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += strides[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            off -= strides[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
}

// ── matrix kernels ───────────────────────────────────────────────────

/// out += a(m×k) @ b(k×n)
pub(crate) fn mm_nn<T: Element>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bpj) in o_row.iter_mut().zip(b_row) {
                *o = *o + aip * bpj;
            }
        }
    }
}

/// out += a(m×k) @ b(n×k)ᵀ
fn mm_nt<T: Element>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        for (j, o) in o_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc = acc + av * bv;
            }
            *o = *o + acc;
        }
    }
}

/// out += a(m×k)ᵀ @ b(m×n)
fn mm_tn<T: Element>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &aip) in a_row.iter().enumerate() {
            let o_row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o = *o + aip * bv;
            }
        }
    }
}

impl<T: Element> Tensor<T> {
    // ── construction ─────────────────────────────────────────────────

    pub fn from_vec(values: Vec<T>, shape: &[usize]) -> Result<Self, TensorError> {
        check_shape("from_vec", shape, values.len())?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: values.into(),
            node: None,
        })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel].into(),
            node: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn scalar(value: T) -> Self {
        Self::full(&[1], value)
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Rc<[T]>, node: Option<Rc<Node<T>>>) -> Self {
        Tensor { shape, data, node }
    }

    /// Marks this tensor as a differentiation leaf: after a backward pass its
    /// cotangent can be read with [`Tensor::grad`].
    pub fn tracked(mut self) -> Self {
        if self.node.is_none() && grad_enabled() {
            self.node = Some(Rc::new(Node {
                id: fresh_node_id(),
                len: self.data.len(),
                grad: RefCell::new(None),
                parents: Vec::new(),
                backward: None,
                param: None,
            }));
        }
        self
    }

    /// Leaf tensor bound to a parameter: gradients accumulate into the
    /// parameter when a backward pass reaches it. Untracked when recording is
    /// disabled via [`no_grad`].
    pub(crate) fn param_leaf(param: Rc<Parameter<T>>) -> Self {
        let data = param.value();
        let shape = param.shape().to_vec();
        let node = if grad_enabled() {
            Some(Rc::new(Node {
                id: fresh_node_id(),
                len: data.len(),
                grad: RefCell::new(None),
                parents: Vec::new(),
                backward: None,
                param: Some(param),
            }))
        } else {
            None
        };
        Tensor { shape, node, data }
    }

    // ── accessors ────────────────────────────────────────────────────

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data.to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// Scalar value; panics unless the tensor holds exactly one element.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of {} elements", self.data.len());
        self.data[0]
    }

    /// Cotangent stored on this tensor's node after a backward pass.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.as_ref().and_then(|n| n.grad.borrow().clone())
    }

    fn result(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Rc<Node<T>>>,
        backward: Option<BackwardFn<T>>,
    ) -> Self {
        let node = if (parents.is_empty() && backward.is_none()) || !grad_enabled() {
            None
        } else {
            Some(Rc::new(Node {
                id: fresh_node_id(),
                len: data.len(),
                grad: RefCell::new(None),
                parents,
                backward,
                param: None,
            }))
        };
        Tensor {
            shape,
            data: data.into(),
            node,
        }
    }

    // ── reverse pass ─────────────────────────────────────────────────

    /// Accumulates ∂self/∂leaf into every reachable tracked leaf and
    /// parameter. `self` must be scalar. Repeated calls on live graphs keep
    /// accumulating into parameters until their grads are cleared.
    pub fn backward(&self) -> Result<(), TensorError> {
        if self.data.len() != 1 {
            return Err(TensorError::NonScalarLoss {
                elements: self.data.len(),
            });
        }
        let Some(root) = &self.node else {
            // Constant loss: nothing reachable, all gradients are zero.
            return Ok(());
        };

        let mut reachable: HashMap<u64, Rc<Node<T>>> = HashMap::new();
        let mut stack = vec![root.clone()];
        while let Some(n) = stack.pop() {
            if reachable.insert(n.id, n.clone()).is_none() {
                for p in &n.parents {
                    stack.push(p.clone());
                }
            }
        }

        let mut order: Vec<u64> = reachable.keys().copied().collect();
        order.sort_unstable_by(|a, b| b.cmp(a));

        for node in reachable.values() {
            *node.grad.borrow_mut() = None;
        }
        *root.grad.borrow_mut() = Some(vec![T::one()]);

        for id in &order {
            let node = &reachable[id];
            let grad = node.grad.borrow().clone();
            let Some(grad) = grad else { continue };
            debug_assert_eq!(grad.len(), node.len);
            if let Some(param) = &node.param {
                param.accumulate_grad(&grad);
            }
            if let Some(backward) = &node.backward {
                let parent_grads = backward(&grad);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (parent, pg) in node.parents.iter().zip(parent_grads) {
                    debug_assert_eq!(pg.len(), parent.len);
                    let mut slot = parent.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => {
                            for (a, v) in acc.iter_mut().zip(&pg) {
                                *a = *a + *v;
                            }
                        }
                        None => *slot = Some(pg),
                    }
                }
            }
        }
        Ok(())
    }

    // ── elementwise binary ───────────────────────────────────────────

    fn zip_same_shape(&self, rhs: &Self, op: &'static str) -> Result<(), TensorError> {
        if self.shape != rhs.shape {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&self, rhs: &Self) -> Result<Self, TensorError> {
        self.zip_same_shape(rhs, "add")?;
        let data: Vec<T> = self.data.iter().zip(rhs.data.iter()).map(|(&a, &b)| a + b).collect();
        let track_a = self.node.is_some();
        let track_b = rhs.node.is_some();
        let parents: Vec<_> = [self.node.clone(), rhs.node.clone()].into_iter().flatten().collect();
        let backward: Option<BackwardFn<T>> = if parents.is_empty() {
            None
        } else {
            Some(Box::new(move |g: &[T]| {
                let mut out = Vec::new();
                if track_a {
                    out.push(g.to_vec());
                }
                if track_b {
                    out.push(g.to_vec());
                }
                out
            }))
        };
        Ok(Self::result(self.shape.clone(), data, parents, backward))
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self, TensorError> {
        self.zip_same_shape(rhs, "sub")?;
        let data: Vec<T> = self.data.iter().zip(rhs.data.iter()).map(|(&a, &b)| a - b).collect();
        let track_a = self.node.is_some();
        let track_b = rhs.node.is_some();
        let parents: Vec<_> = [self.node.clone(), rhs.node.clone()].into_iter().flatten().collect();
        let backward: Option<BackwardFn<T>> = if parents.is_empty() {
            None
        } else {
            Some(Box::new(move |g: &[T]| {
                let mut out = Vec::new();
                if track_a {
                    out.push(g.to_vec());
                }
                if track_b {
                    out.push(g.iter().map(|&v| -v).collect());
                }
                out
            }))
        };
        Ok(Self::result(self.shape.clone(), data, parents, backward))
    }

    pub fn mul(&self, rhs: &Self) -> Result<Self, TensorError> {
        self.zip_same_shape(rhs, "mul")?;
        let data: Vec<T> = self.data.iter().zip(rhs.data.iter()).map(|(&a, &b)| a * b).collect();
        let track_a = self.node.is_some();
        let track_b = rhs.node.is_some();
        let parents: Vec<_> = [self.node.clone(), rhs.node.clone()].into_iter().flatten().collect();
        let backward: Option<BackwardFn<T>> = if parents.is_empty() {
            None
        } else {
            let a = self.data.clone();
            let b = rhs.data.clone();
            Some(Box::new(move |g: &[T]| {
                let mut out = Vec::new();
                if track_a {
                    out.push(g.iter().zip(b.iter()).map(|(&gv, &bv)| gv * bv).collect());
                }
                if track_b {
                    out.push(g.iter().zip(a.iter()).map(|(&gv, &av)| gv * av).collect());
                }
                out
            }))
        };
        Ok(Self::result(self.shape.clone(), data, parents, backward))
    }

    pub fn div(&self, rhs: &Self) -> Result<Self, TensorError> {
        self.zip_same_shape(rhs, "div")?;
        let data: Vec<T> = self.data.iter().zip(rhs.data.iter()).map(|(&a, &b)| a / b).collect();
        let track_a = self.node.is_some();
        let track_b = rhs.node.is_some();
        let parents: Vec<_> = [self.node.clone(), rhs.node.clone()].into_iter().flatten().collect();
        let backward: Option<BackwardFn<T>> = if parents.is_empty() {
            None
        } else {
            let a = self.data.clone();
            let b = rhs.data.clone();
            Some(Box::new(move |g: &[T]| {
                let mut out = Vec::new();
                if track_a {
                    out.push(g.iter().zip(b.iter()).map(|(&gv, &bv)| gv / bv).collect());
                }
                if track_b {
                    out.push(
                        g.iter()
                            .zip(a.iter().zip(b.iter()))
                            .map(|(&gv, (&av, &bv))| -gv * av / (bv * bv))
                            .collect(),
                    );
                }
                out
            }))
        };
        Ok(Self::result(self.shape.clone(), data, parents, backward))
    }

    // ── elementwise unary ────────────────────────────────────────────

    fn unary(
        &self,
        data: Vec<T>,
        backward: impl Fn(&[T]) -> Vec<T> + 'static,
    ) -> Self {
        let parents: Vec<_> = self.node.clone().into_iter().collect();
        let bf: Option<BackwardFn<T>> = if parents.is_empty() {
            None
        } else {
            Some(Box::new(move |g: &[T]| vec![backward(g)]))
        };
        Self::result(self.shape.clone(), data, parents, bf)
    }

    pub fn add_scalar(&self, c: T) -> Self {
        let data = self.data.iter().map(|&v| v + c).collect();
        self.unary(data, |g| g.to_vec())
    }

    pub fn mul_scalar(&self, c: T) -> Self {
        let data = self.data.iter().map(|&v| v * c).collect();
        self.unary(data, move |g| g.iter().map(|&v| v * c).collect())
    }

    pub fn neg(&self) -> Self {
        self.mul_scalar(-T::one())
    }

    /// Elementwise max(x, 0); the subgradient at exactly 0 is 0.
    pub fn relu(&self) -> Self {
        let data: Vec<T> = self.data.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let x = self.data.clone();
        self.unary(data, move |g| {
            g.iter()
                .zip(x.iter())
                .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                .collect()
        })
    }

    /// Elementwise |x|; the subgradient at exactly 0 is 0.
    pub fn abs(&self) -> Self {
        let data: Vec<T> = self.data.iter().map(|&v| v.abs()).collect();
        let x = self.data.clone();
        self.unary(data, move |g| {
            g.iter()
                .zip(x.iter())
                .map(|(&gv, &xv)| {
                    if xv > T::zero() {
                        gv
                    } else if xv < T::zero() {
                        -gv
                    } else {
                        T::zero()
                    }
                })
                .collect()
        })
    }

    // ── shape operators ──────────────────────────────────────────────

    pub fn reshape(&self, shape: &[usize]) -> Result<Self, TensorError> {
        check_shape("reshape", shape, self.data.len())?;
        let parents: Vec<_> = self.node.clone().into_iter().collect();
        let bf: Option<BackwardFn<T>> = if parents.is_empty() {
            None
        } else {
            Some(Box::new(move |g: &[T]| vec![g.to_vec()]))
        };
        let node = if parents.is_empty() && bf.is_none() {
            None
        } else {
            Some(Rc::new(Node {
                id: fresh_node_id(),
                len: self.data.len(),
                grad: RefCell::new(None),
                parents,
                backward: bf,
                param: None,
            }))
        };
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
            node,
        })
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Self, TensorError> {
        let rank = self.shape.len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(TensorError::InvalidShape {
                op: "permute",
                shape: self.shape.clone(),
                reason: format!("{:?} is not a permutation of the axes", axes),
            });
        }
        let in_strides = row_major_strides(&self.shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let walk: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let mut data = vec![T::zero(); self.data.len()];
        strided_gather(&self.data, &mut data, &out_shape, &walk);

        let parents: Vec<_> = self.node.clone().into_iter().collect();
        let bf: Option<BackwardFn<T>> = if parents.is_empty() {
            None
        } else {
            let out_shape_b = out_shape.clone();
            let walk_b = walk.clone();
            let numel = self.data.len();
            Some(Box::new(move |g: &[T]| {
                let mut acc = vec![T::zero(); numel];
                strided_scatter_add(g, &mut acc, &out_shape_b, &walk_b);
                vec![acc]
            }))
        };
        Ok(Self::result(out_shape, data, parents, bf))
    }

    /// Numpy-style broadcast: `shape` is right-aligned against the target;
    /// missing leading axes and size-1 axes are expanded. The backward pass
    /// sums over the expanded axes.
    pub fn broadcast_to(&self, target: &[usize]) -> Result<Self, TensorError> {
        if target.len() < self.shape.len() {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast_to",
                lhs: self.shape.clone(),
                rhs: target.to_vec(),
            });
        }
        let offset = target.len() - self.shape.len();
        let src_strides = row_major_strides(&self.shape);
        let mut walk = vec![0usize; target.len()];
        for (ax, &t) in target.iter().enumerate() {
            if ax < offset {
                continue;
            }
            let s = self.shape[ax - offset];
            if s == t {
                walk[ax] = src_strides[ax - offset];
            } else if s == 1 {
                walk[ax] = 0;
            } else {
                return Err(TensorError::ShapeMismatch {
                    op: "broadcast_to",
                    lhs: self.shape.clone(),
                    rhs: target.to_vec(),
                });
            }
        }
        let numel: usize = target.iter().product();
        let mut data = vec![T::zero(); numel];
        strided_gather(&self.data, &mut data, target, &walk);

        let parents: Vec<_> = self.node.clone().into_iter().collect();
        let bf: Option<BackwardFn<T>> = if parents.is_empty() {
            None
        } else {
            let target_b = target.to_vec();
            let walk_b = walk.clone();
            let src_len = self.data.len();
            Some(Box::new(move |g: &[T]| {
                let mut acc = vec![T::zero(); src_len];
                strided_scatter_add(g, &mut acc, &target_b, &walk_b);
                vec![acc]
            }))
        };
        Ok(Self::result(target.to_vec(), data, parents, bf))
    }

    /// Concatenates along the last axis; all other extents must agree.
    pub fn concat_last(parts: &[&Self]) -> Result<Self, TensorError> {
        let first = parts.first().ok_or_else(|| TensorError::InvalidShape {
            op: "concat_last",
            shape: vec![],
            reason: "no tensors given".into(),
        })?;
        let rank = first.shape.len();
        let lead = &first.shape[..rank - 1];
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            if p.shape.len() != rank || &p.shape[..rank - 1] != lead {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_last",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            widths.push(p.shape[rank - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = vec![T::zero(); rows * total];
        for r in 0..rows {
            let mut at = r * total;
            for (p, &w) in parts.iter().zip(&widths) {
                data[at..at + w].copy_from_slice(&p.data[r * w..(r + 1) * w]);
                at += w;
            }
        }
        let mut out_shape = lead.to_vec();
        out_shape.push(total);

        let tracked: Vec<bool> = parts.iter().map(|p| p.node.is_some()).collect();
        let parents: Vec<_> = parts.iter().filter_map(|p| p.node.clone()).collect();
        let bf: Option<BackwardFn<T>> = if parents.is_empty() {
            None
        } else {
            let widths_b = widths.clone();
            Some(Box::new(move |g: &[T]| {
                let mut out = Vec::new();
                let mut start = 0usize;
                for (&w, &is_tracked) in widths_b.iter().zip(&tracked) {
                    if is_tracked {
                        let mut part = vec![T::zero(); rows * w];
                        for r in 0..rows {
                            part[r * w..(r + 1) * w]
                                .copy_from_slice(&g[r * total + start..r * total + start + w]);
                        }
                        out.push(part);
                    }
                    start += w;
                }
                out
            }))
        };
        Ok(Self::result(out_shape, data, parents, bf))
    }

    /// Takes `[start, start+len)` of the last axis.
    pub fn slice_last(&self, start: usize, len: usize) -> Result<Self, TensorError> {
        let rank = self.shape.len();
        let width = self.shape[rank - 1];
        if len == 0 || start + len > width {
            return Err(TensorError::InvalidShape {
                op: "slice_last",
                shape: self.shape.clone(),
                reason: format!("slice [{start}, {}) out of 0..{width}", start + len),
            });
        }
        let rows: usize = self.shape[..rank - 1].iter().product();
        let mut data = vec![T::zero(); rows * len];
        for r in 0..rows {
            data[r * len..(r + 1) * len]
                .copy_from_slice(&self.data[r * width + start..r * width + start + len]);
        }
        let mut out_shape = self.shape.clone();
        out_shape[rank - 1] = len;

        let parents: Vec<_> = self.node.clone().into_iter().collect();
        let bf: Option<BackwardFn<T>> = if parents.is_empty() {
            None
        } else {
            let numel = self.data.len();
            Some(Box::new(move |g: &[T]| {
                let mut acc = vec![T::zero(); numel];
                for r in 0..rows {
                    acc[r * width + start..r * width + start + len]
                        .copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                vec![acc]
            }))
        };
        Ok(Self::result(out_shape, data, parents, bf))
    }

    /// Row lookup into a rank-2 table: `self` is `[rows, width]`, the result
    /// is `[indices.len(), width]`. The backward pass scatter-adds.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Self, TensorError> {
        if self.shape.len() != 2 {
            return Err(TensorError::InvalidShape {
                op: "gather_rows",
                shape: self.shape.clone(),
                reason: "table must be rank 2".into(),
            });
        }
        let (rows, width) = (self.shape[0], self.shape[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(TensorError::InvalidShape {
                op: "gather_rows",
                shape: self.shape.clone(),
                reason: format!("index {bad} out of 0..{rows}"),
            });
        }
        let mut data = vec![T::zero(); indices.len() * width];
        for (k, &i) in indices.iter().enumerate() {
            data[k * width..(k + 1) * width].copy_from_slice(&self.data[i * width..(i + 1) * width]);
        }
        let parents: Vec<_> = self.node.clone().into_iter().collect();
        let bf: Option<BackwardFn<T>> = if parents.is_empty() {
            None
        } else {
            let idx = indices.to_vec();
            Some(Box::new(move |g: &[T]| {
                let mut acc = vec![T::zero(); rows * width];
                for (k, &i) in idx.iter().enumerate() {
                    for (a, &gv) in acc[i * width..(i + 1) * width].iter_mut().zip(&g[k * width..(k + 1) * width]) {
                        *a = *a + gv;
                    }
                }
                vec![acc]
            }))
        };
        Ok(Self::result(vec![indices.len(), width], data, parents, bf))
    }

    // ── reductions ───────────────────────────────────────────────────

    pub fn sum_all(&self) -> Self {
        let total: T = self.data.iter().copied().sum();
        let numel = self.data.len();
        let parents: Vec<_> = self.node.clone().into_iter().collect();
        let bf: Option<BackwardFn<T>> = if parents.is_empty() {
            None
        } else {
            Some(Box::new(move |g: &[T]| vec![vec![g[0]; numel]]))
        };
        Self::result(vec![1], vec![total], parents, bf)
    }

    pub fn mean_all(&self) -> Self {
        let inv = T::one() / T::of(self.data.len() as f64);
        self.sum_all().mul_scalar(inv)
    }

    // ── structured operators ─────────────────────────────────────────

    /// Batched matrix product over the two trailing axes. Leading axes must
    /// match exactly, or `rhs` may be rank-2 and is then shared across the
    /// whole batch.
    pub fn matmul(&self, rhs: &Self) -> Result<Self, TensorError> {
        let ar = self.shape.len();
        let br = rhs.shape.len();
        if ar < 2 || br < 2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        let (m, k) = (self.shape[ar - 2], self.shape[ar - 1]);
        let (k2, n) = (rhs.shape[br - 2], rhs.shape[br - 1]);
        let a_lead = &self.shape[..ar - 2];
        let b_lead = &rhs.shape[..br - 2];
        let shared_rhs = b_lead.is_empty();
        if k != k2 || (!shared_rhs && a_lead != b_lead) {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        let batch: usize = a_lead.iter().product();
        let mut data = vec![T::zero(); batch * m * n];
        for bi in 0..batch {
            let a = &self.data[bi * m * k..(bi + 1) * m * k];
            let b = if shared_rhs {
                &rhs.data[..]
            } else {
                &rhs.data[bi * k * n..(bi + 1) * k * n]
            };
            mm_nn(a, b, &mut data[bi * m * n..(bi + 1) * m * n], m, k, n);
        }
        let mut out_shape = a_lead.to_vec();
        out_shape.push(m);
        out_shape.push(n);

        let track_a = self.node.is_some();
        let track_b = rhs.node.is_some();
        let parents: Vec<_> = [self.node.clone(), rhs.node.clone()].into_iter().flatten().collect();
        let bf: Option<BackwardFn<T>> = if parents.is_empty() {
            None
        } else {
            let a_data = self.data.clone();
            let b_data = rhs.data.clone();
            Some(Box::new(move |g: &[T]| {
                let mut out = Vec::new();
                if track_a {
                    // dA[bi] = g[bi] @ B[bi]ᵀ
                    let mut da = vec![T::zero(); batch * m * k];
                    for bi in 0..batch {
                        let b = if shared_rhs {
                            &b_data[..]
                        } else {
                            &b_data[bi * k * n..(bi + 1) * k * n]
                        };
                        mm_nt(
                            &g[bi * m * n..(bi + 1) * m * n],
                            b,
                            &mut da[bi * m * k..(bi + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    out.push(da);
                }
                if track_b {
                    // dB[bi] = A[bi]ᵀ @ g[bi]; shared weights reduce over the batch.
                    let width = if shared_rhs { k * n } else { batch * k * n };
                    let mut db = vec![T::zero(); width];
                    for bi in 0..batch {
                        let dst = if shared_rhs {
                            &mut db[..]
                        } else {
                            &mut db[bi * k * n..(bi + 1) * k * n]
                        };
                        mm_tn(
                            &a_data[bi * m * k..(bi + 1) * m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            dst,
                            m,
                            k,
                            n,
                        );
                    }
                    out.push(db);
                }
                out
            }))
        };
        Ok(Self::result(out_shape, data, parents, bf))
    }

    /// Softmax over the last axis with max-subtraction. Rows of the result
    /// are nonnegative and sum to 1.
    pub fn softmax_last(&self) -> Result<Self, TensorError> {
        if self.data.iter().any(|v| v.is_nan()) {
            return Err(TensorError::NotANumber { op: "softmax_last" });
        }
        let width = *self.shape.last().expect("softmax on rank-0 tensor");
        let rows = self.data.len() / width;
        let mut data = vec![T::zero(); self.data.len()];
        for r in 0..rows {
            let x = &self.data[r * width..(r + 1) * width];
            let out = &mut data[r * width..(r + 1) * width];
            let mut hi = x[0];
            for &v in &x[1..] {
                if v > hi {
                    hi = v;
                }
            }
            let mut total = T::zero();
            for (o, &v) in out.iter_mut().zip(x) {
                let e = (v - hi).exp();
                *o = e;
                total = total + e;
            }
            for o in out.iter_mut() {
                *o = *o / total;
            }
        }
        let parents: Vec<_> = self.node.clone().into_iter().collect();
        let bf: Option<BackwardFn<T>> = if parents.is_empty() {
            None
        } else {
            let y: Rc<[T]> = data.clone().into();
            Some(Box::new(move |g: &[T]| {
                let mut dx = vec![T::zero(); y.len()];
                for r in 0..rows {
                    let ys = &y[r * width..(r + 1) * width];
                    let gs = &g[r * width..(r + 1) * width];
                    let mut dot = T::zero();
                    for (&yv, &gv) in ys.iter().zip(gs) {
                        dot = dot + yv * gv;
                    }
                    for ((d, &yv), &gv) in dx[r * width..(r + 1) * width].iter_mut().zip(ys).zip(gs) {
                        *d = yv * (gv - dot);
                    }
                }
                vec![dx]
            }))
        };
        Ok(Self::result(self.shape.clone(), data, parents, bf))
    }

    /// Layer normalization over the last axis followed by an elementwise
    /// affine: `gain ⊙ x̂ + bias`, with `gain`/`bias` of the last-axis width.
    pub fn layer_norm(&self, gain: &Self, bias: &Self, eps: T) -> Result<Self, TensorError> {
        let width = *self.shape.last().expect("layer_norm on rank-0 tensor");
        if gain.shape != [width] || bias.shape != [width] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: self.shape.clone(),
                rhs: gain.shape.clone(),
            });
        }
        let rows = self.data.len() / width;
        let inv_w = T::one() / T::of(width as f64);
        let mut data = vec![T::zero(); self.data.len()];
        let mut normalized = vec![T::zero(); self.data.len()];
        let mut inv_std = vec![T::zero(); rows];
        for r in 0..rows {
            let x = &self.data[r * width..(r + 1) * width];
            let mut mean = T::zero();
            for &v in x {
                mean = mean + v;
            }
            mean = mean * inv_w;
            let mut var = T::zero();
            for &v in x {
                let d = v - mean;
                var = var + d * d;
            }
            var = var * inv_w;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[r] = inv;
            for (j, &v) in x.iter().enumerate() {
                let xn = (v - mean) * inv;
                normalized[r * width + j] = xn;
                data[r * width + j] = xn * gain.data[j] + bias.data[j];
            }
        }

        let track_x = self.node.is_some();
        let track_gain = gain.node.is_some();
        let track_bias = bias.node.is_some();
        let parents: Vec<_> = [self.node.clone(), gain.node.clone(), bias.node.clone()]
            .into_iter()
            .flatten()
            .collect();
        let bf: Option<BackwardFn<T>> = if parents.is_empty() {
            None
        } else {
            let xn: Rc<[T]> = normalized.into();
            let inv: Rc<[T]> = inv_std.into();
            let gain_data = gain.data.clone();
            Some(Box::new(move |g: &[T]| {
                let mut out = Vec::new();
                if track_x {
                    let mut dx = vec![T::zero(); xn.len()];
                    for r in 0..rows {
                        let gs = &g[r * width..(r + 1) * width];
                        let xns = &xn[r * width..(r + 1) * width];
                        let mut sum_gg = T::zero();
                        let mut sum_ggx = T::zero();
                        for (j, &gv) in gs.iter().enumerate() {
                            let gg = gv * gain_data[j];
                            sum_gg = sum_gg + gg;
                            sum_ggx = sum_ggx + gg * xns[j];
                        }
                        let mean_gg = sum_gg * inv_w;
                        let mean_ggx = sum_ggx * inv_w;
                        for (j, &gv) in gs.iter().enumerate() {
                            let gg = gv * gain_data[j];
                            dx[r * width + j] = (gg - mean_gg - xns[j] * mean_ggx) * inv[r];
                        }
                    }
                    out.push(dx);
                }
                if track_gain {
                    let mut dg = vec![T::zero(); width];
                    for r in 0..rows {
                        for j in 0..width {
                            dg[j] = dg[j] + g[r * width + j] * xn[r * width + j];
                        }
                    }
                    out.push(dg);
                }
                if track_bias {
                    let mut db = vec![T::zero(); width];
                    for r in 0..rows {
                        for j in 0..width {
                            db[j] = db[j] + g[r * width + j];
                        }
                    }
                    out.push(db);
                }
                out
            }))
        };
        Ok(Self::result(self.shape.clone(), data, parents, bf))
    }
}

/// Per-time-slice graph convolution: `out[b,t,i,:] = Σ_j g[t,i,j]·z[b,t,j,:]`,
/// i.e. the graph stack `g: [T,N,N]` multiplies each time slice of
/// `z: [B,T,N,D]` in parallel.
pub fn contract_time_graph<T: Element>(g: &Tensor<T>, z: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let gs = g.shape();
    let zs = z.shape();
    let ok = gs.len() == 3 && zs.len() == 4 && gs[0] == zs[1] && gs[1] == gs[2] && gs[1] == zs[2];
    if !ok {
        return Err(TensorError::ShapeMismatch {
            op: "contract_time_graph",
            lhs: gs.to_vec(),
            rhs: zs.to_vec(),
        });
    }
    let (b, t, n, d) = (zs[0], zs[1], zs[2], zs[3]);
    let mut data = vec![T::zero(); z.len()];
    for bi in 0..b {
        for ti in 0..t {
            let g_slice = &g.data()[ti * n * n..(ti + 1) * n * n];
            let z_slice = &z.data()[(bi * t + ti) * n * d..(bi * t + ti + 1) * n * d];
            mm_nn(g_slice, z_slice, &mut data[(bi * t + ti) * n * d..(bi * t + ti + 1) * n * d], n, n, d);
        }
    }

    let track_g = g.node.is_some();
    let track_z = z.node.is_some();
    let parents: Vec<_> = [g.node.clone(), z.node.clone()].into_iter().flatten().collect();
    let bf: Option<BackwardFn<T>> = if parents.is_empty() {
        None
    } else {
        let g_data = g.data.clone();
        let z_data = z.data.clone();
        Some(Box::new(move |grad: &[T]| {
            let mut out = Vec::new();
            if track_g {
                // dG[t,i,j] = Σ_b dot(grad[b,t,i,:], z[b,t,j,:])
                let mut dg = vec![T::zero(); t * n * n];
                for bi in 0..b {
                    for ti in 0..t {
                        mm_nt(
                            &grad[(bi * t + ti) * n * d..(bi * t + ti + 1) * n * d],
                            &z_data[(bi * t + ti) * n * d..(bi * t + ti + 1) * n * d],
                            &mut dg[ti * n * n..(ti + 1) * n * n],
                            n,
                            d,
                            n,
                        );
                    }
                }
                out.push(dg);
            }
            if track_z {
                // dZ[b,t] = g[t]ᵀ @ grad[b,t]
                let mut dz = vec![T::zero(); b * t * n * d];
                for bi in 0..b {
                    for ti in 0..t {
                        mm_tn(
                            &g_data[ti * n * n..(ti + 1) * n * n],
                            &grad[(bi * t + ti) * n * d..(bi * t + ti + 1) * n * d],
                            &mut dz[(bi * t + ti) * n * d..(bi * t + ti + 1) * n * d],
                            n,
                            n,
                            d,
                        );
                    }
                }
                out.push(dz);
            }
            out
        }))
    };
    let (shape, _) = (zs.to_vec(), ());
    Ok(Tensor::result(shape, data, parents, bf))
}
