//! Error type shared by the CLI and orchestration layers.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
//! failure.

use std::path::PathBuf;

use thiserror::Error;

use mtsp_core::checkpoint::CheckpointError;
use mtsp_core::data::DataError;
use mtsp_core::metrics::MetricsError;
use mtsp_core::tensor::TensorError;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),
    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },
    #[error("{path}:{line}: {message}")]
    Ingest {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Numeric(#[from] TensorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("gradient check failed: {0}")]
    GradCheck(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) | AppError::Config { .. } => 1,
            AppError::Io { .. }
            | AppError::Data(_)
            | AppError::Checkpoint { .. }
            | AppError::Ingest { .. } => 2,
            AppError::Numeric(_) | AppError::Metrics(_) | AppError::GradCheck(_) => 3,
        }
    }

    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> AppError {
        let context = context.into();
        move |source| AppError::Io { context, source }
    }
}

pub type Result<T> = std::result::Result<T, AppError>;

/// Splitmix64 finalizer; the basis of all derived seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive a stream seed from a base seed and a role tag. All randomness in
/// a run flows from the single configured seed through this function.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64; // FNV-1a
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(base ^ h)
}

/// Derive the seed of one sweep cell from (base, budget, repeat).
pub fn cell_seed(base: u64, budget: usize, repeat: usize) -> u64 {
    splitmix64(splitmix64(base ^ (budget as u64).wrapping_mul(0x9e37)) ^ (repeat as u64 + 1))
}
