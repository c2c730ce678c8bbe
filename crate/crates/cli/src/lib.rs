//! Orchestration layer: file formats, run configuration, training loops,
//! and the label-budget sweep, shared by the `mtsp` binary and the
//! integration tests.

pub mod config;
pub mod error;
pub mod experiment;
pub mod formats;
pub mod train;

pub use error::{AppError, Result};
