//! Dense tensors, reverse-mode differentiation and a finite-difference
//! gradient checker.

mod gradcheck;
pub mod io;
mod kernels;
mod scalar;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, grad_check, GradCheckOptions, GradCheckReport};
pub use kernels::matmul;
pub use scalar::{DType, Scalar};
pub use tape::{Activation, Gradients, Tape, Var};
pub use tensor::Tensor;
