// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod algorithm;
pub mod analysis;
pub mod baselines;
pub mod error;
pub mod local_solver;
pub mod network;
pub mod problem;
pub mod runner;
pub mod scenario;

pub use error::{Error, Result};
