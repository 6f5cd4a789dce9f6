//! Experiment harness for uncertainty-aware learning from demonstration.
//!
//! Each experiment is a pure function of its [`ExperimentConfig`] and
//! returns typed results plus the CSV tables written by the `lfd-exp`
//! binary.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiments;
pub mod table;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{ExpError, Result};
pub use table::Table;
