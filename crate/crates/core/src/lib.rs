//! Instability-attack load-shedding laboratory: grid dynamics, attack
//! injection, modal detection, outcome labeling, dataset assembly and a
//! shed-outcome classifier.

// Negated comparisons are how NaN gets rejected throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod classifier;
pub mod dataset;
pub mod error;
pub mod grid;
pub mod labeler;
pub mod mpa;
pub mod powerflow;
pub mod search;
pub mod sim;
pub mod stability;

pub use error::{Error, Result};
