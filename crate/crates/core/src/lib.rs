//! Havrda-Charvat generalized-entropy losses and a small convolutional
//! classifier trained with them.
//!
//! - [`entropy`]: Shannon and Havrda-Charvat entropies, cross-entropies and
//!   the analytic loss gradient.
//! - [`nn`]: tensors, conv/pool/dense kernels, a reverse-mode tape, gradient
//!   checking and the `ENTL` checkpoint format.
//! - [`model`]: the frame classifier built from a [`model::ModelConfig`].
//! - [`data`]: grayscale PNG loading, synthetic frame generation, splitting
//!   and batching.
//! - [`training`]: the optimization loop, confusion metrics, the
//!   `alpha x epochs` sweep and overfitting detection.

pub mod data;
pub mod entropy;
pub mod error;
pub mod model;
pub mod nn;
pub mod training;

pub use error::{Error, Result};
