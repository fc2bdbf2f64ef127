use std::cell::Cell;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::backward::Op;
use crate::{numel, Result, TensorError};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

struct GradGuard(bool);

impl Drop for GradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.0));
    }
}

/// Runs `f` without recording any operation on the current thread.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let _guard = GradGuard(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

/// Runs `f` with recording forced on (used inside `grad(.., create_graph)`).
pub(crate) fn with_grad<T>(enabled: bool, f: impl FnOnce() -> T) -> T {
    let _guard = GradGuard(GRAD_ENABLED.with(|g| g.replace(enabled)));
    f()
}

pub(crate) struct GradFn {
    pub op: Op,
    pub inputs: Vec<Tensor>,
}

pub(crate) struct Node {
    pub id: u64,
    pub shape: Vec<usize>,
    pub data: Arc<Vec<f64>>,
    pub requires_grad: bool,
    pub grad_fn: Option<GradFn>,
}

/// Cheaply clonable handle to an immutable tensor and the operation that
/// produced it.
#[derive(Clone)]
pub struct Tensor(pub(crate) Arc<Node>);

impl Tensor {
    /// A constant tensor.
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if data.len() != numel(shape) {
            return Err(TensorError::LengthMismatch {
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Self::leaf(data, shape.to_vec(), false))
    }

    /// A trainable leaf.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if data.len() != numel(shape) {
            return Err(TensorError::LengthMismatch {
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Self::leaf(data, shape.to_vec(), true))
    }

    pub fn scalar(v: f64) -> Tensor {
        Self::leaf(vec![v], vec![], false)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Tensor {
        Self::leaf(vec![v; numel(shape)], shape.to_vec(), false)
    }

    pub(crate) fn leaf(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Tensor {
        debug_assert_eq!(data.len(), numel(&shape));
        Tensor(Arc::new(Node {
            id: next_id(),
            shape,
            data: Arc::new(data),
            requires_grad,
            grad_fn: None,
        }))
    }

    pub(crate) fn from_op(data: Vec<f64>, shape: Vec<usize>, op: Op, inputs: Vec<Tensor>) -> Tensor {
        debug_assert_eq!(data.len(), numel(&shape), "{op:?}");
        let track = is_grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        Tensor(Arc::new(Node {
            id: next_id(),
            shape,
            data: Arc::new(data),
            requires_grad: track,
            grad_fn: track.then_some(GradFn { op, inputs }),
        }))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0.shape[axis]
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.as_ref().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Same values, cut from the graph. Shares storage.
    pub fn detach(&self) -> Tensor {
        Tensor(Arc::new(Node {
            id: next_id(),
            shape: self.0.shape.clone(),
            data: Arc::clone(&self.0.data),
            requires_grad: false,
            grad_fn: None,
        }))
    }

    /// Same values as a fresh trainable leaf. Shares storage.
    pub fn detach_param(&self) -> Tensor {
        Tensor(Arc::new(Node {
            id: next_id(),
            shape: self.0.shape.clone(),
            data: Arc::clone(&self.0.data),
            requires_grad: true,
            grad_fn: None,
        }))
    }

    pub(crate) fn grad_fn(&self) -> Option<&GradFn> {
        self.0.grad_fn.as_ref()
    }

    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data().iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("data", &preview)
            .finish()
    }
}
