//! Tensor kernels, reverse-mode differentiation, and parameter checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub(crate) mod kernels;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckEntry, GradCheckReport};
pub use kernels::sigmoid;
pub use tape::{Gradients, Mode, Tape, Var};
pub use tensor::{LayerParams, Tensor};
