//! Scenario runner: configuration, built-in scenarios, the simulate →
//! filter → oracles → diagnostics pipeline and its summary.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod pipeline;
pub mod scenarios;
pub mod summary;

pub use config::{ConfigError, Scenario};
pub use pipeline::{run_scenario, RunError, RunOutcome};
pub use summary::{Check, Comparison, Summary};
