//! Dense row-major `f64` tensors and a reverse-mode automatic
//! differentiation tape over exactly the operations an equivariant network
//! and its loss need.

mod error;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use tape::{BatchNormMode, BatchStats, Gradients, Reduction, Tape, Var};
pub use tensor::{contiguous_strides, Tensor};
