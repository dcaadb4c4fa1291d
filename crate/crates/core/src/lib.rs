//! Joint inference and input optimization for deep equilibrium models.

// Argument checks are written as `!(x >= 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod error;
pub mod jiio;
pub mod layer;
pub mod linalg;
pub mod loss;
pub mod outer;
pub mod rng;
pub mod solver;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
