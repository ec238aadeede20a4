//! Tensors, reverse-mode autodiff and the Adam optimizer.

mod adam;
pub mod gradcheck;
mod params;
mod real;
mod tape;
mod tensor;

use alloc::string::String;
use alloc::vec::Vec;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_params, relative_error, ParamCheck, DEFAULT_EPS};
pub use params::{Grads, ParamId, ParamSet};
pub use real::Real;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("expected a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
}
