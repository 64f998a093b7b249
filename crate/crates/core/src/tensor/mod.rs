//! Dense `f32` tensors with reverse-mode automatic differentiation.
//!
//! Every tensor is a node in an acyclic graph: leaves are created directly,
//! and each operation on tensors that require gradients records its parents
//! and a backward closure. [`Tensor::backward`] walks the graph in reverse
//! topological order and accumulates gradients into the leaves.

mod conv;
pub mod gradcheck;
mod ops;
pub mod optim;

use std::cell::{Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub use conv::ConvGeometry;
pub use ops::*;

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Maps the gradient of an operation's output to gradients of its parents
/// (`None` for parents that do not require gradients).
pub type BackwardFn = Box<dyn Fn(&[Tensor], &[f32]) -> Vec<Option<Vec<f32>>>>;

struct Op {
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f32>>,
    grad: RefCell<Option<Vec<f32>>>,
    requires_grad: bool,
    op: Option<Op>,
}

// Long graphs would otherwise drop recursively through `parents`.
impl Drop for Node {
    fn drop(&mut self) {
        let mut stack: Vec<Tensor> = self.op.take().map(|op| op.parents).unwrap_or_default();
        while let Some(t) = stack.pop() {
            if let Ok(mut node) = Rc::try_unwrap(t.0) {
                if let Some(op) = node.op.take() {
                    stack.extend(op.parents);
                }
            }
        }
    }
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn make(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool, op: Option<Op>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            op,
        }))
    }

    /// Constant leaf.
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {} values, got {}",
                numel(shape),
                data.len()
            )));
        }
        Ok(Self::make(shape.to_vec(), data, false, None))
    }

    /// Trainable leaf.
    pub fn param(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let t = Self::new(shape, data)?;
        Ok(Self::make(t.shape().to_vec(), t.to_vec(), true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::make(shape.to_vec(), vec![0.0; numel(shape)], false, None)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        Self::make(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn scalar(value: f32) -> Self {
        Self::make(Vec::new(), vec![value], false, None)
    }

    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f32, rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| {
                let z: f32 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Self::make(shape.to_vec(), data, false, None)
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f32, hi: f32, rng: &mut R) -> Self {
        let data = (0..numel(shape)).map(|_| rng.gen_range(lo..hi)).collect();
        Self::make(shape.to_vec(), data, false, None)
    }

    /// Records the result of a custom operation. When none of `parents`
    /// requires gradients the result is a constant and `backward` is dropped.
    pub fn from_op(shape: Vec<usize>, data: Vec<f32>, parents: &[&Tensor], backward: BackwardFn) -> Self {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let op = requires_grad.then(|| Op {
            parents: parents.iter().map(|&p| p.clone()).collect(),
            backward,
        });
        Self::make(shape, data, requires_grad, op)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn data(&self) -> Ref<'_, Vec<f32>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.0.data.borrow().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f32 {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.shape());
        d[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    /// Accumulated gradient, or zeros if no backward pass reached this tensor.
    pub fn grad(&self) -> Vec<f32> {
        self.0
            .grad
            .borrow()
            .clone()
            .unwrap_or_else(|| vec![0.0; self.numel()])
    }

    pub fn has_grad(&self) -> bool {
        self.0.grad.borrow().is_some()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// In-place update of the stored values, e.g. by an optimizer.
    pub fn update_data(&self, f: impl FnOnce(&mut [f32])) {
        f(&mut self.0.data.borrow_mut());
    }

    pub fn set_data(&self, data: &[f32]) -> Result<()> {
        if data.len() != self.numel() {
            return Err(Error::Shape(format!(
                "cannot load {} values into tensor of shape {:?}",
                data.len(),
                self.shape()
            )));
        }
        self.0.data.borrow_mut().copy_from_slice(data);
        Ok(())
    }

    /// Constant copy cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::make(self.shape().to_vec(), self.to_vec(), false, None)
    }

    /// Trainable copy with fresh identity and no history.
    pub fn to_param(&self) -> Tensor {
        Self::make(self.shape().to_vec(), self.to_vec(), true, None)
    }

    pub fn same_node(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} to {shape:?}",
                self.shape()
            )));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            &[self],
            Box::new(|_, g| vec![Some(g.to_vec())]),
        ))
    }

    /// Reverse-mode accumulation from a one-element loss into every leaf that
    /// requires gradients. Gradients add onto whatever the leaves already hold.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<u64, Vec<f32>> = HashMap::new();
        pending.insert(self.0.id, vec![1.0]);
        for node in order.iter().rev() {
            let Some(grad) = pending.remove(&node.0.id) else {
                continue;
            };
            match &node.0.op {
                None => {
                    let mut slot = node.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += g),
                        None => *slot = Some(grad),
                    }
                }
                Some(op) => {
                    let grads = (op.backward)(&op.parents, &grad);
                    debug_assert_eq!(grads.len(), op.parents.len());
                    for (parent, g) in op.parents.iter().zip(grads) {
                        let Some(g) = g else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(g.len(), parent.numel());
                        match pending.get_mut(&parent.0.id) {
                            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                            None => {
                                pending.insert(parent.0.id, g);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes requiring gradients reachable from `self`, parents before
    /// children.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        seen.insert(self.0.id);
        while let Some((node, next)) = stack.pop() {
            let parents = node.0.op.as_ref().map(|op| op.parents.as_slice()).unwrap_or(&[]);
            if next < parents.len() {
                let parent = parents[next].clone();
                stack.push((node, next + 1));
                if parent.requires_grad() && seen.insert(parent.0.id) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(node);
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let x = Tensor::param(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0]).unwrap();
        sum(&x).backward().unwrap();
        assert_eq!(x.grad(), vec![1.0; 6]);
    }

    #[test]
    fn square_gradient_is_two_x() {
        let vals = vec![1.0, -2.0, 3.0, 0.5];
        let x = Tensor::param(&[4], vals.clone()).unwrap();
        sum(&mul(&x, &x).unwrap()).backward().unwrap();
        let want: Vec<f32> = vals.iter().map(|v| 2.0 * v).collect();
        assert_eq!(x.grad(), want);
    }

    #[test]
    fn unreachable_leaf_has_zero_grad() {
        let x = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        sum(&x).backward().unwrap();
        assert_eq!(y.grad(), vec![0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let x = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(relu(&x).backward(), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // loss = sum(x) + sum(2x) => grad 3
        let x = Tensor::param(&[2], vec![0.3, -0.1]).unwrap();
        let a = sum(&x);
        let b = sum(&scale(&x, 2.0));
        add(&a, &b).unwrap().backward().unwrap();
        assert_eq!(x.grad(), vec![3.0, 3.0]);
    }

    #[test]
    fn constants_record_no_graph() {
        let x = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let y = relu(&x);
        assert!(y.is_leaf() && !y.requires_grad());
    }

    #[test]
    fn deep_chain_does_not_overflow() {
        let x = Tensor::param(&[1], vec![1.0]).unwrap();
        let mut y = x.clone();
        for _ in 0..100_000 {
            y = scale(&y, 1.0);
        }
        sum(&y).backward().unwrap();
        assert_eq!(x.grad(), vec![1.0]);
    }
}
