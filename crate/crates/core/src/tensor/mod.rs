//! Reverse-mode autodiff tensor engine.
//!
//! Tensors are dense N,C,H,W arrays generic over the scalar type. Every
//! differentiable op records a tape node linking the output to its parents;
//! [`Tensor::backward`] walks the tape once in reverse topological order and
//! accumulates gradients. The tape is built per forward pass and consumed by
//! a single backward pass; higher-order gradients are out of scope.

pub mod conv;
pub mod ops;
pub mod pool;
pub mod resize;

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// True when newly created ops should record tape nodes.
pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

/// Runs `f` with tape recording disabled, restoring the previous state after.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|c| c.replace(false));
    let out = f();
    GRAD_ENABLED.with(|c| c.set(prev));
    out
}

/// Dense 4-axis shape: batch, channels, height, width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn count(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Flat row-major index of (n, c, h, w).
    #[inline]
    pub const fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Gradient rule for one recorded op.
///
/// `backward` returns one optional gradient per parent, in parent order;
/// entries for parents with `needs[i] == false` may be `None` to skip work.
pub(crate) trait GradFn<T: Scalar> {
    fn name(&self) -> &'static str;
    fn backward(&self, grad_out: &[T], parents: &[Tensor<T>], needs: &[bool]) -> Vec<Option<Vec<T>>>;
}

struct Node<T: Scalar> {
    grad_fn: Box<dyn GradFn<T>>,
    parents: Vec<Tensor<T>>,
}

struct Inner<T: Scalar> {
    id: u64,
    shape: Shape,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    node: RefCell<Option<Node<T>>>,
    requires_grad: Cell<bool>,
    leaf: bool,
}

/// Reference-counted tensor; clones share storage and gradient state.
pub struct Tensor<T: Scalar = f32>(Rc<Inner<T>>);

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad.get())
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    fn new_leaf(shape: Shape, data: Vec<T>, requires_grad: bool) -> Self {
        debug_assert_eq!(shape.count(), data.len());
        Tensor(Rc::new(Inner {
            id: next_id(),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            node: RefCell::new(None),
            requires_grad: Cell::new(requires_grad),
            leaf: true,
        }))
    }

    /// Leaf tensor from raw data; checks length and finiteness.
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if shape.count() != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {} holds {} values, got {}",
                shape,
                shape.count(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "from_vec" });
        }
        Ok(Self::new_leaf(shape, data, false))
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::new_leaf(shape, vec![T::zero(); shape.count()], false)
    }

    pub fn full(shape: Shape, value: T) -> Self {
        assert!(value.is_finite(), "full() requires a finite value");
        Self::new_leaf(shape, vec![value; shape.count()], false)
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, T::one())
    }

    /// Scalar (1,1,1,1) tensor.
    pub fn scalar(value: T) -> Self {
        Self::full(Shape::new(1, 1, 1, 1), value)
    }

    /// Marks a leaf as a trainable input of the tape. Builder style.
    pub fn with_grad(self) -> Self {
        assert!(self.0.leaf, "with_grad applies to leaf tensors only");
        self.0.requires_grad.set(true);
        self
    }

    /// Output of a recorded op. Finiteness of every element is enforced so
    /// numerical blowups surface at the op that produced them.
    pub(crate) fn from_op(
        shape: Shape,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        grad_fn: Box<dyn GradFn<T>>,
    ) -> Result<Self> {
        debug_assert_eq!(shape.count(), data.len());
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: grad_fn.name() });
        }
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if !track {
            return Ok(Self::new_leaf(shape, data, false));
        }
        Ok(Tensor(Rc::new(Inner {
            id: next_id(),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            node: RefCell::new(Some(Node { grad_fn, parents })),
            requires_grad: Cell::new(true),
            leaf: false,
        })))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> Shape {
        self.0.shape
    }

    pub fn count(&self) -> usize {
        self.0.shape.count()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad.get()
    }

    pub fn is_leaf(&self) -> bool {
        self.0.leaf
    }

    /// Borrow of the raw data in row-major N,C,H,W order.
    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.count(), 1, "item() requires a single-element tensor");
        self.0.data.borrow()[0]
    }

    /// Overwrites the stored values in place. Intended for optimizer updates
    /// and parameter loading on leaves; the tape never aliases leaf data.
    pub fn set_data(&self, data: Vec<T>) -> Result<()> {
        if data.len() != self.count() {
            return Err(Error::ShapeMismatch(format!(
                "set_data expects {} values for shape {}, got {}",
                self.count(),
                self.shape(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "set_data" });
        }
        *self.0.data.borrow_mut() = data;
        Ok(())
    }

    /// In-place elementwise update of the stored values.
    pub fn update_data(&self, f: impl FnOnce(&mut [T])) {
        f(self.0.data.borrow_mut().as_mut_slice());
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.borrow().clone()
    }

    /// Resets the gradient to explicit zeros so disconnected parameters read
    /// as all-zero after a backward pass.
    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = Some(vec![T::zero(); self.count()]);
    }

    pub fn clear_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Copy detached from the tape; gradients never flow through it.
    pub fn detach(&self) -> Tensor<T> {
        Self::new_leaf(self.shape(), self.to_vec(), false)
    }

    fn accumulate_grad(&self, g: Vec<T>) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g.iter()) {
                    *a += *b;
                }
            }
            None => *slot = Some(g),
        }
    }

    /// Reverse-mode sweep from a scalar loss. Populates `grad` on every
    /// reachable tensor that requires one and consumes the tape.
    pub fn backward(&self) -> Result<()> {
        if self.count() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_string()));
        }
        if !self.requires_grad() {
            return Err(Error::InvalidArgument(
                "backward on a tensor that does not require grad".into(),
            ));
        }
        if !self.0.leaf && self.0.node.borrow().is_none() {
            return Err(Error::TapeConsumed);
        }

        // Iterative post-order DFS over parents; reversed emission order puts
        // every tensor before all of its tape parents.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, usize)> = Vec::new();
        visited.insert(self.id());
        stack.push((self.clone(), 0));
        while let Some((t, i)) = stack.pop() {
            let next = t
                .0
                .node
                .borrow()
                .as_ref()
                .and_then(|n| n.parents.get(i).cloned());
            match next {
                Some(p) => {
                    stack.push((t, i + 1));
                    if p.0.node.borrow().is_some() && visited.insert(p.id()) {
                        stack.push((p, 0));
                    }
                }
                None => order.push(t),
            }
        }

        self.accumulate_grad(vec![T::one()]);

        for t in order.iter().rev() {
            let node = t.0.node.borrow_mut().take();
            let Some(node) = node else { continue };
            let grad_out = t
                .0
                .grad
                .borrow()
                .clone()
                .unwrap_or_else(|| vec![T::zero(); t.count()]);
            let needs: Vec<bool> = node.parents.iter().map(|p| p.requires_grad()).collect();
            let grads = node.grad_fn.backward(&grad_out, &node.parents, &needs);
            debug_assert_eq!(grads.len(), node.parents.len());
            for ((p, g), need) in node.parents.iter().zip(grads).zip(&needs) {
                if !need {
                    continue;
                }
                if let Some(g) = g {
                    debug_assert_eq!(g.len(), p.count());
                    p.accumulate_grad(g);
                }
            }
        }
        Ok(())
    }
}
