//! Numeric core for masked-timestep self-supervised pretraining on encoded
//! acoustic feature sequences.
//!
//! The crate is `no_std` (with `alloc`) and contains everything that does not
//! touch the filesystem or the clock: a dense f64 tensor type with
//! reverse-mode automatic differentiation, GRU/dense layers and the three
//! model assemblies, the Adam optimizer, dataset/masking/splitting logic, a
//! synthetic data generator, and the evaluation metrics (MAE and 4-class
//! accuracy, overall and per emotion).
//!
//! IO, file formats, training orchestration, and the CLI live in the
//! companion `mtsp-cli` crate.

#![no_std]

extern crate alloc;

pub mod checkpoint;
pub mod data;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use tape::{GradMap, NodeId, Tape};
pub use tensor::{Tensor, TensorError};

/// Number of encoded acoustic parameters per timestep.
pub const FEATURE_DIM: usize = 74;

/// Number of emotion intensity targets.
pub const EMOTION_COUNT: usize = 6;

/// Canonical emotion order used by labels, metrics, and CSV columns.
pub const EMOTION_NAMES: [&str; EMOTION_COUNT] =
    ["happy", "sad", "anger", "surprise", "disgust", "fear"];
