//! Minimal dense-tensor numerics with reverse-mode automatic differentiation.
//!
//! Tensors are row-major. Feature maps are `C×H×W`; matrices are `rows×cols`.
//! Build a [`Graph`], record operations on [`Var`] handles, then call
//! [`Graph::backward`] on a scalar.

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod scalar;
pub mod tensor;

pub use error::{NumError, Result};
pub use gradcheck::{grad_check, grad_check_at, grad_check_steps, relative_error, GradCheckReport};
pub use graph::{ConvGeom, Gradients, Graph, Mode, Var};
pub use graph::norm_power_iteration as power_iteration;
pub use scalar::{DType, Element};
pub use tensor::Tensor;
