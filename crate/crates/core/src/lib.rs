//! Causal inference on a single observed network under interference.

// Parameter checks use `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod netgraph;
pub mod partition;
pub mod estimators;
pub mod sfl;
pub mod k0infer;
pub mod seeding;
pub mod simharness;
pub mod cli;

pub use error::{Error, Result};
