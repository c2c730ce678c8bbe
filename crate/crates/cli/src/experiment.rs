//! Label-budget sweep: for each budget `n`, draw a labeled subset, train
//! the fine-tuned head and the fully supervised baseline on the *same*
//! subset, evaluate both on the held-out split, and repeat with fresh
//! subsets. Aggregates report per-(arm, budget) mean and sample standard
//! deviation across repeats.
//!
//! Every cell derives its seed from `(base seed, budget, repeat)`, so any
//! cell can be reproduced in isolation and reruns are byte-identical.

use sha2::{Digest, Sha256};

use mtsp_core::data::{sample_labeled_subset, Dataset};
use mtsp_core::metrics::MetricsReport;
use mtsp_core::nn::Model;

use crate::error::{cell_seed, Result};
use crate::train::{self, TrainOptions};

/// Which model produced a result row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    Finetune,
    Baseline,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Finetune => "finetune",
            Arm::Baseline => "baseline",
        }
    }
}

/// One trained-and-evaluated cell of the sweep grid.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub arm: Arm,
    pub budget: usize,
    pub repeat: usize,
    /// SHA-256 over the sorted subset ids; equal fingerprints mean the two
    /// arms saw exactly the same labeled examples.
    pub subset_fingerprint: String,
    pub report: MetricsReport,
}

/// Mean and sample standard deviation of one arm at one budget.
#[derive(Debug, Clone)]
pub struct Aggregate {
    pub arm: Arm,
    pub budget: usize,
    pub repeats: usize,
    pub mean: [f64; 14],
    pub std: [f64; 14],
}

#[derive(Debug, Clone, Default)]
pub struct SweepReport {
    pub cells: Vec<CellResult>,
    pub aggregates: Vec<Aggregate>,
}

/// Fingerprint of a labeled subset: SHA-256 over its sorted ids.
pub fn subset_fingerprint(ds: &Dataset) -> String {
    let mut ids: Vec<&str> = ds.sequences().iter().map(|s| s.id.as_str()).collect();
    ids.sort_unstable();
    let mut hasher = Sha256::new();
    for id in ids {
        hasher.update(id.as_bytes());
        hasher.update(b"\n");
    }
    format!("{:x}", hasher.finalize())
}

/// Run the full sweep. `train` is the labeled training pool (standardized),
/// `val` the held-out evaluation split, `backbone` the pretrained
/// reconstruction model feeding the fine-tune arm.
pub fn run_sweep(
    backbone: &Model,
    train: &Dataset,
    val: &Dataset,
    opts: &TrainOptions,
    budgets: &[usize],
    repeats: usize,
    base_seed: u64,
) -> Result<SweepReport> {
    let mut report = SweepReport::default();
    for &budget in budgets {
        for repeat in 0..repeats {
            let seed = cell_seed(base_seed, budget, repeat);
            let subset = sample_labeled_subset(train, budget, seed)?;
            let fingerprint = subset_fingerprint(&subset);
            log::info!(
                "sweep cell: budget {budget}, repeat {repeat}, subset {}",
                &fingerprint[..12]
            );

            let (tuned, _) = train::finetune(backbone, &subset, opts, seed)?;
            let tuned_report = train::evaluate(&tuned, val, opts.pooling)?;
            report.cells.push(CellResult {
                arm: Arm::Finetune,
                budget,
                repeat,
                subset_fingerprint: fingerprint.clone(),
                report: tuned_report,
            });

            let (base, _) = train::train_baseline(&subset, opts, seed)?;
            let base_report = train::evaluate(&base, val, opts.pooling)?;
            report.cells.push(CellResult {
                arm: Arm::Baseline,
                budget,
                repeat,
                subset_fingerprint: fingerprint,
                report: base_report,
            });
        }
    }
    report.aggregates = aggregate(&report.cells, budgets, repeats);
    Ok(report)
}

/// Per-(arm, budget) mean and sample standard deviation (n−1 denominator;
/// 0 for a single repeat) of all 14 metric values.
pub fn aggregate(cells: &[CellResult], budgets: &[usize], repeats: usize) -> Vec<Aggregate> {
    let mut out = Vec::new();
    for arm in [Arm::Finetune, Arm::Baseline] {
        for &budget in budgets {
            let values: Vec<[f64; 14]> = cells
                .iter()
                .filter(|c| c.arm == arm && c.budget == budget)
                .map(|c| c.report.values())
                .collect();
            if values.is_empty() {
                continue;
            }
            let n = values.len() as f64;
            let mut mean = [0.0; 14];
            for v in &values {
                for (m, x) in mean.iter_mut().zip(v) {
                    *m += x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut std = [0.0; 14];
            if values.len() > 1 {
                for v in &values {
                    for ((s, x), m) in std.iter_mut().zip(v).zip(&mean) {
                        let d = x - m;
                        *s += d * d;
                    }
                }
                std.iter_mut().for_each(|s| *s = (*s / (n - 1.0)).sqrt());
            }
            out.push(Aggregate {
                arm,
                budget,
                repeats: values.len().min(repeats),
                mean,
                std,
            });
        }
    }
    out
}

impl SweepReport {
    /// Mean overall MAE of one arm at one budget, if present.
    pub fn mean_mae(&self, arm: Arm, budget: usize) -> Option<f64> {
        self.aggregates
            .iter()
            .find(|a| a.arm == arm && a.budget == budget)
            .map(|a| a.mean[0])
    }

    /// Mean overall accuracy of one arm at one budget, if present.
    pub fn mean_acc4(&self, arm: Arm, budget: usize) -> Option<f64> {
        self.aggregates
            .iter()
            .find(|a| a.arm == arm && a.budget == budget)
            .map(|a| a.mean[7])
    }

    /// `baseline MAE − fine-tune MAE` per budget, ascending by budget: the
    /// advantage of pretraining, expected to shrink as labels grow.
    pub fn gap_trend(&self) -> Vec<(usize, f64)> {
        let mut budgets: Vec<usize> = self
            .aggregates
            .iter()
            .map(|a| a.budget)
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        budgets.sort_unstable();
        budgets
            .into_iter()
            .filter_map(|b| {
                Some((b, self.mean_mae(Arm::Baseline, b)? - self.mean_mae(Arm::Finetune, b)?))
            })
            .collect()
    }

    /// Per-cell CSV: one row per (arm, budget, repeat) with all 14 metrics
    /// and the subset fingerprint. Deterministic given the inputs.
    pub fn cells_csv(&self) -> String {
        let mut out = String::from("arm,budget,repeat,");
        out.push_str(&MetricsReport::names().join(","));
        out.push_str(",subset_fingerprint\n");
        for c in &self.cells {
            out.push_str(&format!("{},{},{}", c.arm.name(), c.budget, c.repeat));
            for v in c.report.values() {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{}\n", c.subset_fingerprint));
        }
        out
    }

    /// Aggregate CSV: per (arm, budget) mean and sample std of all metrics.
    pub fn aggregates_csv(&self) -> String {
        let mut out = String::from("arm,budget,repeats");
        for n in MetricsReport::names() {
            out.push_str(&format!(",mean_{n}"));
        }
        for n in MetricsReport::names() {
            out.push_str(&format!(",std_{n}"));
        }
        out.push('\n');
        for a in &self.aggregates {
            out.push_str(&format!("{},{},{}", a.arm.name(), a.budget, a.repeats));
            for v in a.mean.iter().chain(&a.std) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}
