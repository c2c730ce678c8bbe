//! Evaluation metrics: MAE and 4-class accuracy, overall and per emotion.
//!
//! Predictions are rounded half-up to the nearest integer and clamped to
//! `{0, 1, 2, 3}` for the accuracy metrics; MAE is computed on the raw
//! unrounded, unclamped values.

use alloc::vec::Vec;
use thiserror::Error;

use crate::tensor::Tensor;
use crate::EMOTION_COUNT;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("prediction shape {pred:?} does not match truth shape {truth:?}")]
    ShapeMismatch { pred: Vec<usize>, truth: Vec<usize> },
    #[error("matrix must have {EMOTION_COUNT} columns, found {0}")]
    ColumnCount(usize),
    #[error("empty matrix")]
    Empty,
    #[error("emotion index {0} out of range")]
    EmotionIndex(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Half-up rounding to the nearest integer, clamped to `{0, 1, 2, 3}`:
/// `r(x) = ⌊x⌋` when `x − ⌊x⌋ < 0.5`, else `⌈x⌉`.
pub fn round_class(x: f64) -> Result<u8, MetricsError> {
    if !x.is_finite() {
        return Err(MetricsError::NonFinite("round_class"));
    }
    let floor = libm::floor(x);
    let rounded = if x - floor >= 0.5 { floor + 1.0 } else { floor };
    Ok(rounded.clamp(0.0, 3.0) as u8)
}

fn check_pair(pred: &Tensor, truth: &Tensor) -> Result<usize, MetricsError> {
    if pred.shape() != truth.shape() {
        return Err(MetricsError::ShapeMismatch {
            pred: pred.shape().to_vec(),
            truth: truth.shape().to_vec(),
        });
    }
    if pred.cols() != EMOTION_COUNT {
        return Err(MetricsError::ColumnCount(pred.cols()));
    }
    if pred.rows() == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(pred.rows())
}

/// Fraction of all `6n` rounded entries on which prediction and truth agree.
pub fn acc4_overall(pred: &Tensor, truth: &Tensor) -> Result<f64, MetricsError> {
    let n = check_pair(pred, truth)?;
    let mut hits = 0usize;
    for (p, t) in pred.data().iter().zip(truth.data()) {
        if round_class(*p)? == round_class(*t)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / (n * EMOTION_COUNT) as f64)
}

/// Per-column agreement fraction for emotion `emotion` (0-based index into
/// the canonical order).
pub fn acc4_per_emotion(
    pred: &Tensor,
    truth: &Tensor,
    emotion: usize,
) -> Result<f64, MetricsError> {
    let n = check_pair(pred, truth)?;
    if emotion >= EMOTION_COUNT {
        return Err(MetricsError::EmotionIndex(emotion));
    }
    let mut hits = 0usize;
    for k in 0..n {
        if round_class(pred.at(k, emotion))? == round_class(truth.at(k, emotion))? {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

/// Mean absolute error over all `6n` raw entries.
pub fn mae_overall(pred: &Tensor, truth: &Tensor) -> Result<f64, MetricsError> {
    let n = check_pair(pred, truth)?;
    let acc: f64 = pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(p, t)| libm::fabs(p - t))
        .sum();
    Ok(acc / (n * EMOTION_COUNT) as f64)
}

/// Mean absolute error over column `emotion` only.
pub fn mae_per_emotion(pred: &Tensor, truth: &Tensor, emotion: usize) -> Result<f64, MetricsError> {
    let n = check_pair(pred, truth)?;
    if emotion >= EMOTION_COUNT {
        return Err(MetricsError::EmotionIndex(emotion));
    }
    let acc: f64 = (0..n)
        .map(|k| libm::fabs(pred.at(k, emotion) - truth.at(k, emotion)))
        .sum();
    Ok(acc / n as f64)
}

/// All four metric families for one prediction/truth pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub overall_mae: f64,
    pub mae_per_emotion: [f64; EMOTION_COUNT],
    pub overall_acc4: f64,
    pub acc4_per_emotion: [f64; EMOTION_COUNT],
}

impl MetricsReport {
    pub fn compute(pred: &Tensor, truth: &Tensor) -> Result<Self, MetricsError> {
        let mut mae = [0.0; EMOTION_COUNT];
        let mut acc = [0.0; EMOTION_COUNT];
        for j in 0..EMOTION_COUNT {
            mae[j] = mae_per_emotion(pred, truth, j)?;
            acc[j] = acc4_per_emotion(pred, truth, j)?;
        }
        Ok(MetricsReport {
            overall_mae: mae_overall(pred, truth)?,
            mae_per_emotion: mae,
            overall_acc4: acc4_overall(pred, truth)?,
            acc4_per_emotion: acc,
        })
    }

    /// Metric values in the canonical CSV column order:
    /// `overall_mae, mae_h..mae_f, acc4, acc4_h..acc4_f`.
    pub fn values(&self) -> [f64; 14] {
        let mut out = [0.0; 14];
        out[0] = self.overall_mae;
        out[1..7].copy_from_slice(&self.mae_per_emotion);
        out[7] = self.overall_acc4;
        out[8..14].copy_from_slice(&self.acc4_per_emotion);
        out
    }

    /// Metric names matching [`MetricsReport::values`].
    pub fn names() -> [&'static str; 14] {
        [
            "overall_mae",
            "mae_h",
            "mae_s",
            "mae_a",
            "mae_su",
            "mae_d",
            "mae_f",
            "acc4",
            "acc4_h",
            "acc4_s",
            "acc4_a",
            "acc4_su",
            "acc4_d",
            "acc4_f",
        ]
    }
}
