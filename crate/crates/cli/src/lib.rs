//! File formats, the benchmark runner and the `cfprior` command line on top
//! of `cfprior-core`.

// `!(x > 0.0)` style guards are kept on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifacts;
pub mod bench;
pub mod commands;
pub mod config;
pub mod data;
pub mod density;
pub mod error;

pub use error::{CliError, CliResult};
