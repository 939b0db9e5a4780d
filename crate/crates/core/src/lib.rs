//! Inverse medium scattering by recursive linearization, with optional
//! compensation of coarse-solver model error through a learned complex
//! Gaussian mixture.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjoint;
pub mod config;
pub mod error;
pub mod gmm;
pub mod grid;
pub mod helmholtz;
pub mod inversion;
pub mod io;
pub mod learning;
pub mod linalg;
pub mod regularizer;

pub use error::{Error, Result};
