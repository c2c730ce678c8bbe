//! Datasets, standardization, the masking procedure, splits, subsampling,
//! and the synthetic generator used for dataset-free verification.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::Tensor;
use crate::{EMOTION_COUNT, FEATURE_DIM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("sample {id}: expected {FEATURE_DIM} feature columns, found {found}")]
    ColumnCount { id: String, found: usize },
    #[error("duplicate sample id {0}")]
    DuplicateId(String),
    #[error("label references unknown sample id {0}")]
    UnknownLabelId(String),
    #[error("label intensity {value} for {id} outside [0, 3]")]
    LabelRange { id: String, value: f64 },
    #[error("dataset is empty")]
    Empty,
    #[error("dataset is already standardized")]
    AlreadyStandardized,
    #[error("sequence {id} has {len} timesteps, shorter than mask length {mask_len}")]
    ShortSequence {
        id: String,
        len: usize,
        mask_len: usize,
    },
    #[error("split ratio {0} outside (0, 1)")]
    BadRatio(f64),
    #[error("requested {requested} labeled samples but only {available} available")]
    SubsetTooLarge { requested: usize, available: usize },
    #[error("invalid synthetic config: {0}")]
    BadConfig(&'static str),
}

/// One utterance: a `T×74` feature matrix plus its id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub id: String,
    pub features: Tensor,
}

impl FeatureSequence {
    pub fn new(id: String, features: Tensor) -> Result<Self, DataError> {
        if features.cols() != FEATURE_DIM || features.shape().len() != 2 {
            return Err(DataError::ColumnCount {
                id,
                found: features.cols(),
            });
        }
        Ok(FeatureSequence { id, features })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Six emotion intensities in `[0, 3]`, ordered
/// (happy, sad, anger, surprise, disgust, fear).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmotionLabel {
    pub intensities: [f64; EMOTION_COUNT],
}

impl EmotionLabel {
    pub fn new(id: &str, intensities: [f64; EMOTION_COUNT]) -> Result<Self, DataError> {
        for &v in &intensities {
            if !(0.0..=3.0).contains(&v) {
                return Err(DataError::LabelRange {
                    id: String::from(id),
                    value: v,
                });
            }
        }
        Ok(EmotionLabel { intensities })
    }
}

/// Per-column standardization statistics, computed from the training split
/// only. Standard deviations are floored at `1e-8`.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-8;

/// Sequences plus an optional id→label map. `standardization` is `Some`
/// once the features have been standardized; re-standardizing is rejected.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    sequences: Vec<FeatureSequence>,
    labels: BTreeMap<String, EmotionLabel>,
    standardization: Option<StandardizationStats>,
}

impl Dataset {
    pub fn new() -> Self {
        Dataset::default()
    }

    pub fn push_sequence(&mut self, seq: FeatureSequence) -> Result<(), DataError> {
        if self.sequences.iter().any(|s| s.id == seq.id) {
            return Err(DataError::DuplicateId(seq.id));
        }
        self.sequences.push(seq);
        Ok(())
    }

    pub fn set_label(&mut self, id: &str, label: EmotionLabel) -> Result<(), DataError> {
        if !self.sequences.iter().any(|s| s.id == id) {
            return Err(DataError::UnknownLabelId(String::from(id)));
        }
        self.labels.insert(String::from(id), label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn sequences(&self) -> &[FeatureSequence] {
        &self.sequences
    }

    pub fn labels(&self) -> &BTreeMap<String, EmotionLabel> {
        &self.labels
    }

    pub fn label_of(&self, id: &str) -> Option<&EmotionLabel> {
        self.labels.get(id)
    }

    pub fn labeled_count(&self) -> usize {
        self.sequences
            .iter()
            .filter(|s| self.labels.contains_key(&s.id))
            .count()
    }

    pub fn standardization(&self) -> Option<&StandardizationStats> {
        self.standardization.as_ref()
    }

    /// Drop all labels, producing the view handed to pretraining.
    pub fn strip_labels(self) -> Vec<FeatureSequence> {
        self.sequences
    }
}

/// Compute per-column population statistics on `train` and standardize it.
pub fn standardize(train: &Dataset) -> Result<(Dataset, StandardizationStats), DataError> {
    if train.is_empty() {
        return Err(DataError::Empty);
    }
    if train.standardization.is_some() {
        return Err(DataError::AlreadyStandardized);
    }
    let mut mean = vec![0.0; FEATURE_DIM];
    let mut count = 0usize;
    for seq in &train.sequences {
        for t in 0..seq.len() {
            for (m, x) in mean.iter_mut().zip(seq.features.row(t)) {
                *m += x;
            }
            count += 1;
        }
    }
    let inv = 1.0 / count as f64;
    mean.iter_mut().for_each(|m| *m *= inv);

    let mut var = vec![0.0; FEATURE_DIM];
    for seq in &train.sequences {
        for t in 0..seq.len() {
            for ((v, x), m) in var.iter_mut().zip(seq.features.row(t)).zip(&mean) {
                let d = x - m;
                *v += d * d;
            }
        }
    }
    let std: Vec<f64> = var
        .iter()
        .map(|v| {
            let s = libm::sqrt(v * inv);
            if s < STD_FLOOR {
                log::warn!("standardize: zero-variance column, std floored at {STD_FLOOR}");
                STD_FLOOR
            } else {
                s
            }
        })
        .collect();
    let stats = StandardizationStats { mean, std };
    let out = apply_standardization(train, &stats)?;
    Ok((out, stats))
}

/// Apply training-split statistics to another dataset.
pub fn apply_standardization(
    ds: &Dataset,
    stats: &StandardizationStats,
) -> Result<Dataset, DataError> {
    if ds.standardization.is_some() {
        return Err(DataError::AlreadyStandardized);
    }
    let mut out = ds.clone();
    for seq in &mut out.sequences {
        let cols = seq.features.cols();
        let data = seq.features.data_mut();
        for row in data.chunks_exact_mut(cols) {
            for ((x, m), s) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
                *x = (*x - m) / s;
            }
        }
    }
    out.standardization = Some(stats.clone());
    Ok(out)
}

/// Masking procedure configuration. `fraction_hint` records the rough
/// fraction of a typical sequence the fixed 30-step mask covers; the
/// sentinel sits outside the standardized range of every column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskSpec {
    pub mask_length: usize,
    pub sentinel: f64,
    pub fraction_hint: f64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        MaskSpec {
            mask_length: 30,
            sentinel: -30.0,
            fraction_hint: 0.10,
        }
    }
}

/// Replace one contiguous block of `mask_length` timesteps (all columns)
/// with the sentinel. The start is uniform over valid positions; the input
/// is not mutated. Returns the masked copy and the chosen start.
pub fn mask_sequence<R: Rng>(
    seq: &FeatureSequence,
    spec: &MaskSpec,
    rng: &mut R,
) -> Result<(Tensor, usize), DataError> {
    let t_len = seq.len();
    if t_len < spec.mask_length || spec.mask_length == 0 {
        return Err(DataError::ShortSequence {
            id: seq.id.clone(),
            len: t_len,
            mask_len: spec.mask_length,
        });
    }
    let start = rng.random_range(0..=t_len - spec.mask_length);
    let mut masked = seq.features.clone();
    let cols = masked.cols();
    let data = masked.data_mut();
    data[start * cols..(start + spec.mask_length) * cols].fill(spec.sentinel);
    Ok((masked, start))
}

/// Deterministic 80/20-style split: disjoint, exhaustive, seeded shuffle.
pub fn split_train_val(
    ds: &Dataset,
    ratio: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DataError::BadRatio(ratio));
    }
    if ds.is_empty() {
        return Err(DataError::Empty);
    }
    let n = ds.len();
    let mut idx: Vec<usize> = (0..n).collect();
    shuffle(&mut idx, &mut ChaCha8Rng::seed_from_u64(seed));
    let train_n = ((n as f64 * ratio) + 0.5) as usize;
    let train_n = train_n.clamp(1, n.saturating_sub(1).max(1));
    let (train_idx, val_idx) = idx.split_at(train_n.min(n));
    Ok((subset(ds, train_idx), subset(ds, val_idx)))
}

/// Uniform sample of `n` distinct labeled sequences, deterministic in the
/// seed.
pub fn sample_labeled_subset(ds: &Dataset, n: usize, seed: u64) -> Result<Dataset, DataError> {
    let labeled: Vec<usize> = (0..ds.len())
        .filter(|&i| ds.labels.contains_key(&ds.sequences[i].id))
        .collect();
    if n > labeled.len() {
        return Err(DataError::SubsetTooLarge {
            requested: n,
            available: labeled.len(),
        });
    }
    let mut idx = labeled;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // partial Fisher-Yates: the first n slots end up a uniform sample
    for i in 0..n {
        let j = rng.random_range(i..idx.len());
        idx.swap(i, j);
    }
    Ok(subset(ds, &idx[..n]))
}

fn shuffle<R: Rng>(idx: &mut [usize], rng: &mut R) {
    for i in (1..idx.len()).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
}

fn subset(ds: &Dataset, indices: &[usize]) -> Dataset {
    let mut out = Dataset {
        sequences: Vec::with_capacity(indices.len()),
        labels: BTreeMap::new(),
        standardization: ds.standardization.clone(),
    };
    for &i in indices {
        let seq = ds.sequences[i].clone();
        if let Some(label) = ds.labels.get(&seq.id) {
            out.labels.insert(seq.id.clone(), *label);
        }
        out.sequences.push(seq);
    }
    out
}

/// Synthetic generator configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub num_samples: usize,
    pub t_min: usize,
    pub t_max: usize,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_samples: 100,
            t_min: 95,
            t_max: 105,
            noise_scale: 0.4,
            seed: 0,
        }
    }
}

struct ColumnProcess {
    decay: f64,
    drift_gain: f64,
    drift_latent: usize,
    osc_amp: f64,
    osc_latent: usize,
    osc_freq: f64,
    osc_phase: f64,
}

/// The per-column process coefficients are fixed (independent of the config
/// seed) so that every generated dataset follows the same family of
/// dynamics.
fn column_processes() -> Vec<ColumnProcess> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c01u64);
    (0..FEATURE_DIM)
        .map(|j| {
            let sign = if rng.random_range(0..2) == 0 { 1.0 } else { -1.0 };
            ColumnProcess {
                decay: rng.random_range(0.6..0.9),
                drift_gain: sign * rng.random_range(0.6..1.4),
                drift_latent: j % EMOTION_COUNT,
                osc_amp: rng.random_range(0.3..0.9),
                osc_latent: (j + 2) % EMOTION_COUNT,
                osc_freq: rng.random_range(0.15..0.7),
                osc_phase: rng.random_range(0.0..core::f64::consts::TAU),
            }
        })
        .collect()
}

/// Generate a labeled dataset whose features follow a stable order-1
/// autoregressive process per column. Drift and oscillation coefficients
/// are fixed linear functions of a latent 6-vector of intensities in
/// `[0, 3]`; the label is that latent vector, so masked reconstruction can
/// learn label-relevant dynamics.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset, DataError> {
    if cfg.num_samples == 0 {
        return Err(DataError::BadConfig("num_samples must be positive"));
    }
    if cfg.t_min == 0 || cfg.t_min > cfg.t_max {
        return Err(DataError::BadConfig("need 0 < t_min <= t_max"));
    }
    if cfg.noise_scale < 0.0 {
        return Err(DataError::BadConfig("noise_scale must be non-negative"));
    }
    let processes = column_processes();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ds = Dataset::new();
    for i in 0..cfg.num_samples {
        let mut latent = [0.0; EMOTION_COUNT];
        for v in &mut latent {
            *v = rng.random_range(0.0..=3.0);
        }
        let t_len = rng.random_range(cfg.t_min..=cfg.t_max);
        let mut data = vec![0.0; t_len * FEATURE_DIM];
        for (j, p) in processes.iter().enumerate() {
            let target = p.drift_gain * (latent[p.drift_latent] - 1.5);
            let amp = p.osc_amp * latent[p.osc_latent] / 3.0;
            let mut x = target;
            for (t, row) in data.chunks_exact_mut(FEATURE_DIM).enumerate() {
                let forcing = amp * libm::sin(p.osc_freq * t as f64 + p.osc_phase);
                let noise = if cfg.noise_scale > 0.0 {
                    cfg.noise_scale * rng.random_range(-1.0..1.0)
                } else {
                    0.0
                };
                x = p.decay * x + (1.0 - p.decay) * target + forcing + noise;
                row[j] = x;
            }
        }
        let id = synthetic_id(i);
        let seq = FeatureSequence::new(id.clone(), Tensor::new(vec![t_len, FEATURE_DIM], data))?;
        ds.push_sequence(seq)?;
        ds.set_label(&id, EmotionLabel::new(&id, latent)?)?;
    }
    Ok(ds)
}

pub fn synthetic_id(index: usize) -> String {
    use alloc::format;
    format!("syn{index:05}")
}
