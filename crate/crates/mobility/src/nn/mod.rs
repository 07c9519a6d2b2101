//! Hand-built training engine: tensors, reverse-mode autodiff, Adam.

pub mod adam;
pub mod tape;
pub mod tensor;

pub use adam::{Adam, AdamConfig, ParamSet};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
