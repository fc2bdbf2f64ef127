//! A compact reverse-mode automatic differentiation engine over dense `f64`
//! tensors.
//!
//! Gradients are themselves built out of differentiable operations, so the
//! result of [`grad`] with `create_graph = true` can be differentiated again.
//! That is what gradient penalties (R1) and losses defined on input
//! gradients (GradCAM-based alignment) need.
//!
//! Operations panic on shape mismatch, the way `ndarray` does; callers that
//! accept external input validate shapes first.

mod backward;
pub mod check;
mod kernels;
mod ops;
pub mod optim;
mod tensor;

pub use backward::{grad, grad_with_seed};
pub use kernels::Conv2dGeom;
pub use tensor::{is_grad_enabled, no_grad, Tensor};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TensorError {
    #[error("data length {len} does not match shape {shape:?}")]
    LengthMismatch { len: usize, shape: Vec<usize> },
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}
