//! Differentiable-computation substrate.
//!
//! Every learned component in this crate builds its forward pass on [`Tape`],
//! a per-sample dynamic operation graph with reverse-mode gradients. Trees
//! have input-dependent shape, so a fresh tape is recorded for every sample;
//! shared [`ParamStore`] parameters enter a tape as leaves and collect
//! gradients when the tape is walked backward.
//!
//! Training and inference run in `f32`; gradient checks instantiate the same
//! code in `f64` where central finite differences have enough headroom.

mod gradcheck;
mod optim;
mod params;
mod scalar;
mod sparse;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::{Adam, CosineRestarts};
pub use params::{ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
pub use sparse::SparseMatrix;
pub use tape::{Tape, Var};
