//! Multigrid-style smoothing pseudo-projectors for hidden representations.

// `!(x >= 0.0)` is used on purpose so that NaN fails validation; dense kernels
// index rows and columns explicitly.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod linalg;
pub mod models;
pub mod projectors;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
