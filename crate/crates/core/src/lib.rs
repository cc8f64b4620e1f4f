#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod fedsim;
pub mod numerics;
pub mod precond;
pub mod problems;
pub mod schedule;

pub use error::{Error, Result};
