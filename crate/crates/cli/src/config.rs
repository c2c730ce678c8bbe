//! TOML run configuration. Unknown keys are rejected so typos fail loudly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use mtsp_core::data::MaskSpec;
use mtsp_core::nn::{Pooling, ReconLossMode};

use crate::error::{AppError, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Single base seed; every random stream in a run derives from it.
    pub seed: u64,
    pub train: TrainSection,
    pub mask: MaskSection,
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            train: TrainSection::default(),
            mask: MaskSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Supervised epochs (fine-tune and baseline).
    pub epochs: usize,
    /// Self-supervised reconstruction epochs.
    pub pretrain_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate for head-only fine-tuning. The 450-parameter head
    /// needs a larger step size than the full network: Adam moves each
    /// weight by at most ~lr per step, and at small label budgets the head
    /// sees too few steps to converge at the backbone rate.
    pub head_learning_rate: f64,
    /// GRU hidden units per layer.
    pub hidden_units: usize,
    /// Fraction of the data used for training in the train/validation split.
    pub train_ratio: f64,
    /// "masked": reconstruction loss over masked positions only (default);
    /// "full": over every position.
    pub recon_loss: String,
    /// "last": head reads the final timestep (default); "mean": mean over
    /// timesteps.
    pub pooling: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 30,
            pretrain_epochs: 10,
            batch_size: 16,
            learning_rate: 1e-3,
            head_learning_rate: 5e-2,
            hidden_units: 256,
            train_ratio: 0.8,
            recon_loss: "masked".into(),
            pooling: "last".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct MaskSection {
    pub mask_length: usize,
    pub sentinel: f64,
}

impl Default for MaskSection {
    fn default() -> Self {
        let spec = MaskSpec::default();
        MaskSection {
            mask_length: spec.mask_length,
            sentinel: spec.sentinel,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Labeled-sample budgets to sweep.
    pub budgets: Vec<usize>,
    /// Repeats per budget, with fresh subset and head seeds each time.
    pub repeats: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            budgets: default_budgets(),
            repeats: 3,
        }
    }
}

/// Default budget grid: 20 to 200 in steps of 15, then 400 to 1200 in steps
/// of 200.
pub fn default_budgets() -> Vec<usize> {
    let mut v: Vec<usize> = (20..=200).step_by(15).collect();
    v.extend((400..=1200).step_by(200));
    v
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(AppError::io(format!("reading {}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| AppError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate(path)?;
        Ok(cfg)
    }

    pub fn validate(&self, path: &Path) -> Result<()> {
        let fail = |message: String| {
            Err(AppError::Config {
                path: path.to_path_buf(),
                message,
            })
        };
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return fail("epochs and batch_size must be positive".into());
        }
        if self.train.hidden_units == 0 {
            return fail("hidden_units must be positive".into());
        }
        if !(self.train.learning_rate > 0.0 && self.train.learning_rate.is_finite()) {
            return fail(format!("bad learning_rate {}", self.train.learning_rate));
        }
        if !(self.train.head_learning_rate > 0.0 && self.train.head_learning_rate.is_finite()) {
            return fail(format!(
                "bad head_learning_rate {}",
                self.train.head_learning_rate
            ));
        }
        if !(self.train.train_ratio > 0.0 && self.train.train_ratio < 1.0) {
            return fail(format!("train_ratio {} outside (0, 1)", self.train.train_ratio));
        }
        self.recon_loss_mode(path)?;
        self.pooling_mode(path)?;
        if self.mask.mask_length == 0 {
            return fail("mask_length must be positive".into());
        }
        if self.sweep.budgets.is_empty() || self.sweep.repeats == 0 {
            return fail("sweep needs at least one budget and one repeat".into());
        }
        Ok(())
    }

    pub fn recon_loss_mode(&self, path: &Path) -> Result<ReconLossMode> {
        match self.train.recon_loss.as_str() {
            "masked" => Ok(ReconLossMode::Masked),
            "full" => Ok(ReconLossMode::Full),
            other => Err(AppError::Config {
                path: path.to_path_buf(),
                message: format!("recon_loss must be \"masked\" or \"full\", got {other:?}"),
            }),
        }
    }

    pub fn pooling_mode(&self, path: &Path) -> Result<Pooling> {
        match self.train.pooling.as_str() {
            "last" => Ok(Pooling::Last),
            "mean" => Ok(Pooling::Mean),
            other => Err(AppError::Config {
                path: path.to_path_buf(),
                message: format!("pooling must be \"last\" or \"mean\", got {other:?}"),
            }),
        }
    }

    pub fn mask_spec(&self) -> MaskSpec {
        MaskSpec {
            mask_length: self.mask.mask_length,
            sentinel: self.mask.sentinel,
            ..MaskSpec::default()
        }
    }

    /// Serialize the fully resolved configuration (defaults filled in).
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization cannot fail")
    }

    /// Write the resolved config next to a run's outputs.
    pub fn save_resolved(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(AppError::io(format!("creating {}", dir.display())))?;
        fs::write(dir.join("resolved_config.toml"), self.to_toml())
            .map_err(AppError::io("writing resolved_config.toml"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.train.epochs, 30);
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.train.learning_rate, 1e-3);
        assert_eq!(cfg.train.hidden_units, 256);
        assert_eq!(cfg.mask.mask_length, 30);
        assert_eq!(cfg.mask.sentinel, -30.0);
        assert_eq!(cfg.sweep.repeats, 3);
        assert!(cfg.validate(Path::new("default")).is_ok());
    }

    #[test]
    fn default_budget_grid() {
        let b = default_budgets();
        assert_eq!(b.first(), Some(&20));
        assert_eq!(b[1], 35);
        assert!(b.contains(&200));
        assert!(b.contains(&400));
        assert_eq!(b.last(), Some(&1200));
        assert_eq!(b.len(), 13 + 5);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 9\n[train]\nepochs = 5\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.train.batch_size, 16);
    }

    #[test]
    fn unknown_key_rejected() {
        let r: std::result::Result<RunConfig, _> = toml::from_str("[train]\nepochz = 5\n");
        assert!(r.is_err());
    }

    #[test]
    fn bad_values_rejected() {
        let p = Path::new("test");
        let mut cfg = RunConfig::default();
        cfg.train.learning_rate = 0.0;
        assert!(cfg.validate(p).is_err());
        let mut cfg = RunConfig::default();
        cfg.train.recon_loss = "sometimes".into();
        assert_eq!(cfg.validate(p).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
    }
}
