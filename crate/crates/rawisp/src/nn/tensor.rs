//! Reverse-mode autodiff on dense float buffers.
//!
//! A [`Tensor`] is a shared handle to a graph node holding a contiguous
//! buffer, its shape, and (when gradients are required) a backward closure
//! that scatters the upstream gradient into the node's parents. Graphs are
//! built implicitly by the ops in [`crate::nn::ops`] and torn down when the
//! last handle drops.

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Element type of a tensor: f32 for training, f64 for the
/// finite-difference gradient checks.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssignOps + Send + Sync + fmt::Debug + fmt::Display + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

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

/// Whether newly created ops record backward closures.
pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

/// Run `f` with gradient recording disabled (inference / numeric probes).
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|c| c.replace(false));
    let out = f();
    GRAD_ENABLED.with(|c| c.set(prev));
    out
}

type BackwardFn<T> = dyn Fn(&[T]);

struct Node<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    parents: Vec<Tensor<T>>,
    backward: Option<Rc<BackwardFn<T>>>,
}

/// Shared handle to a graph node.
pub struct Tensor<T: Scalar> {
    node: Rc<RefCell<Node<T>>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor { node: Rc::clone(&self.node) }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.node.borrow();
        write!(f, "Tensor(id={}, shape={:?}, requires_grad={})", n.id, n.shape, n.requires_grad)
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::Dimension(format!(
                "buffer length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor {
            node: Rc::new(RefCell::new(Node {
                id: next_id(),
                shape: shape.to_vec(),
                data,
                grad: None,
                requires_grad: false,
                parents: Vec::new(),
                backward: None,
            })),
        })
    }

    /// Leaf with `requires_grad` set: a trainable parameter.
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let t = Self::from_vec(shape, data)?;
        t.node.borrow_mut().requires_grad = true;
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self::from_vec(shape, vec![T::zero(); len]).expect("shape/product always consistent")
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let len = shape.iter().product();
        Self::from_vec(shape, vec![v; len]).expect("shape/product always consistent")
    }

    pub fn scalar(v: T) -> Self {
        Self::from_vec(&[1], vec![v]).expect("scalar")
    }

    /// Normal(0, std) initialization, element order fixed by the RNG stream.
    pub fn randn(shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        let len: usize = shape.iter().product();
        let data: Vec<T> = (0..len)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                T::from_f64(z * std)
            })
            .collect();
        Self::from_vec(shape, data).expect("shape/product always consistent")
    }

    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: impl Fn(&[T]) + 'static,
    ) -> Self {
        let record = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        Tensor {
            node: Rc::new(RefCell::new(Node {
                id: next_id(),
                shape,
                data,
                grad: None,
                requires_grad: record,
                parents: if record { parents } else { Vec::new() },
                backward: if record { Some(Rc::new(backward)) } else { None },
            })),
        }
    }

    pub fn id(&self) -> u64 {
        self.node.borrow().id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.node.borrow().shape.clone()
    }

    pub fn len(&self) -> usize {
        self.node.borrow().data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.node.borrow().requires_grad
    }

    pub fn set_requires_grad(&self, v: bool) {
        self.node.borrow_mut().requires_grad = v;
    }

    /// Borrow the forward buffer.
    pub fn data(&self) -> Ref<'_, [T]> {
        Ref::map(self.node.borrow(), |n| n.data.as_slice())
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.borrow().data.clone()
    }

    pub fn item(&self) -> T {
        let n = self.node.borrow();
        debug_assert_eq!(n.data.len(), 1, "item() on non-scalar tensor");
        n.data[0]
    }

    /// Replace the buffer contents in place (optimizer updates).
    pub fn update_data(&self, f: impl FnOnce(&mut [T])) {
        f(&mut self.node.borrow_mut().data);
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.node.borrow_mut().grad = None;
    }

    pub fn accumulate_grad(&self, delta: &[T]) {
        let mut n = self.node.borrow_mut();
        debug_assert_eq!(delta.len(), n.data.len());
        match &mut n.grad {
            Some(g) => {
                for (gi, &d) in g.iter_mut().zip(delta) {
                    *gi += d;
                }
            }
            None => n.grad = Some(delta.to_vec()),
        }
    }

    /// Copy of the values as a fresh leaf outside the graph.
    pub fn detach(&self) -> Tensor<T> {
        let n = self.node.borrow();
        Tensor::from_vec(&n.shape, n.data.clone()).expect("detach preserves shape")
    }

    /// Reverse pass from a scalar loss. Accumulates into the `grad` buffers
    /// of every reachable tensor with `requires_grad`.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::Dimension(format!(
                "backward() needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::Training(
                "backward() on a tensor with no gradient path; no parameter requires grad".into(),
            ));
        }

        // Iterative post-order DFS over requires_grad nodes.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            let n = t.node.borrow();
            for p in &n.parents {
                if p.requires_grad() && !visited.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }

        self.accumulate_grad(&[T::one()]);
        for t in order.iter().rev() {
            let (grad, back) = {
                let n = t.node.borrow();
                match (&n.grad, &n.backward) {
                    (Some(g), Some(b)) => (g.clone(), Rc::clone(b)),
                    _ => continue,
                }
            };
            back(&grad);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ops;

    #[test]
    fn leaf_has_no_grad_by_default() {
        let t = Tensor::<f32>::from_vec(&[2, 2], vec![1.0; 4]).unwrap();
        assert!(!t.requires_grad());
        assert!(t.grad().is_none());
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn backward_through_shared_parent() {
        // loss = sum(x * x) accumulates both branches into x.
        let x = Tensor::<f64>::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = ops::mul(&x, &x).unwrap();
        let loss = ops::mse_loss(&y, &Tensor::zeros(&[3])).unwrap();
        loss.backward().unwrap();
        // d/dx mean(x^4)/... : mean((x^2)^2) -> grad = 4x^3 / 3
        let g = x.grad().unwrap();
        for (i, &xi) in [1.0f64, 2.0, 3.0].iter().enumerate() {
            let want = 4.0 * xi.powi(3) / 3.0;
            assert!((g[i] - want).abs() < 1e-9, "{} vs {}", g[i], want);
        }
    }

    #[test]
    fn no_grad_suppresses_graph() {
        let x = Tensor::<f32>::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = no_grad(|| ops::mul(&x, &x).unwrap());
        assert!(!y.requires_grad());
    }

    #[test]
    fn backward_requires_scalar() {
        let x = Tensor::<f32>::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = ops::mul(&x, &x).unwrap();
        assert!(y.backward().is_err());
    }
}
