//! Command-line entry point and HTTP session service for the gridshed lab.

// Negated comparisons are how NaN gets rejected throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod service;
pub mod session;

pub use cli::run;
