//! Experiment orchestration on top of `mgproj`: config ingestion, seeded

// `!(x >= 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! plain-versus-projector runs, exports, heuristic validation and SVG plots.

pub mod config;
pub mod error;
pub mod experiment;
pub mod plots;
pub mod svg;
pub mod validation;

pub use error::{CliError, CliResult};
