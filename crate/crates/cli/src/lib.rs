//! Experiment harness behind the `orderedae` binary: dataset generation,
//! training runs, q-sweeps, relation extraction and method comparisons,
//! with CSV/JSON outputs and SVG plots rendered from the CSVs.

// `!(x > 0.0)` style checks also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod plot;

pub use config::{ExperimentConfig, ExperimentId, MethodKind};
pub use error::{CliError, CliResult};
