//! Convolutional sequence-to-sequence human motion prediction.
//!
//! The crate bundles a small reverse-mode autodiff core ([`tensor`]),
//! motion-capture ingestion ([`mocap`]), the convolutional encoders and
//! residual decoder ([`model`]), the adversarially regularized training loop
//! ([`training`]) and the Euler-angle evaluation protocol ([`eval`]).

pub mod cli;
pub mod error;
pub mod eval;
pub mod mocap;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
