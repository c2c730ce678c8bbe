//! `mtsp`: masked-timestep sequence pretraining toolkit.
//!
//! Subcommands cover the full pipeline: synthetic data generation,
//! self-supervised pretraining, frozen-backbone fine-tuning, the fully
//! supervised baseline, the label-budget sweep, and a finite-difference
//! gradient audit.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mtsp_core::data::{
    apply_standardization, generate_synthetic, sample_labeled_subset, split_train_val,
    standardize, Dataset, SyntheticConfig,
};
use mtsp_core::gradcheck::{finite_difference_gradient, max_relative_error};
use mtsp_core::metrics::MetricsReport;
use mtsp_core::nn::{
    bind, forward_sequence_tape, masked_recon_loss_tape, Model, ReconLossMode,
};
use mtsp_core::tape::Tape;
use mtsp_core::tensor::Tensor;

use mtsp_cli::config::RunConfig;
use mtsp_cli::error::{derive_seed, AppError, Result};
use mtsp_cli::experiment::{run_sweep, Arm};
use mtsp_cli::formats;
use mtsp_cli::train::{self, TrainOptions, TrainingTrace};

#[derive(Parser)]
#[command(
    name = "mtsp",
    about = "Masked-timestep pretraining for emotion intensity estimation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset on disk.
    GenData {
        /// Output directory (manifest.csv, labels.csv, features/).
        #[arg(long)]
        out: PathBuf,
        /// Number of sequences.
        #[arg(long, default_value_t = 100)]
        samples: usize,
        /// Minimum sequence length.
        #[arg(long, default_value_t = 95)]
        t_min: usize,
        /// Maximum sequence length.
        #[arg(long, default_value_t = 105)]
        t_max: usize,
        /// Uniform noise amplitude.
        #[arg(long, default_value_t = 0.4)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Self-supervised pretraining on the training split of a dataset.
    Pretrain {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// TOML run configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Train the 6-unit head on a frozen pretrained backbone.
    Finetune {
        #[arg(long)]
        manifest: PathBuf,
        /// Pretrained backbone checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Restrict training to a random subset of this many labeled
        /// sequences.
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        force: bool,
    },
    /// Train the fully supervised baseline end-to-end.
    Baseline {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        force: bool,
    },
    /// Label-budget sweep: fine-tune vs baseline across budgets.
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Audit analytic gradients against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Deliberately corrupt one analytic gradient; the audit must then
        /// fail (negative control of the checker itself).
        #[arg(long, hide = true)]
        corrupt: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData {
            out,
            samples,
            t_min,
            t_max,
            noise,
            seed,
            force,
        } => gen_data(&out, samples, t_min, t_max, noise, seed, force),
        Command::Pretrain {
            manifest,
            out,
            config,
            force,
        } => pretrain_cmd(&manifest, &out, config.as_deref(), force),
        Command::Finetune {
            manifest,
            checkpoint,
            out,
            config,
            budget,
            force,
        } => supervised_cmd(
            &manifest,
            Some(&checkpoint),
            &out,
            config.as_deref(),
            budget,
            force,
        ),
        Command::Baseline {
            manifest,
            out,
            config,
            budget,
            force,
        } => supervised_cmd(&manifest, None, &out, config.as_deref(), budget, force),
        Command::Sweep {
            manifest,
            checkpoint,
            out,
            config,
            force,
        } => sweep_cmd(&manifest, &checkpoint, &out, config.as_deref(), force),
        Command::Gradcheck { seed, corrupt } => gradcheck_cmd(seed, corrupt),
    }
}

/// Refuse to write into an existing non-empty directory unless forced.
fn ensure_out(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let occupied = fs::read_dir(dir)
            .map_err(AppError::io(format!("reading {}", dir.display())))?
            .next()
            .is_some();
        if occupied && !force {
            return Err(AppError::Usage(format!(
                "output directory {} is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(AppError::io(format!("creating {}", dir.display())))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn train_options(cfg: &RunConfig) -> Result<TrainOptions> {
    let marker = Path::new("<config>");
    Ok(TrainOptions {
        epochs: cfg.train.epochs,
        pretrain_epochs: cfg.train.pretrain_epochs,
        batch_size: cfg.train.batch_size,
        learning_rate: cfg.train.learning_rate,
        head_learning_rate: cfg.train.head_learning_rate,
        hidden_units: cfg.train.hidden_units,
        pooling: cfg.pooling_mode(marker)?,
        recon_mode: cfg.recon_loss_mode(marker)?,
        mask: cfg.mask_spec(),
    })
}

/// Load, split, and standardize: statistics come from the training split
/// only and are applied unchanged to the held-out split.
fn prepare_splits(manifest: &Path, cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let (ds, report) = formats::load_dataset(manifest)?;
    log::info!(
        "loaded {} sequences ({} labeled, {} values repaired)",
        report.sequences,
        report.labeled,
        report.repaired_values
    );
    let (train, val) = split_train_val(&ds, cfg.train.train_ratio, derive_seed(cfg.seed, "split"))?;
    let (train_std, stats) = standardize(&train)?;
    let val_std = apply_standardization(&val, &stats)?;
    Ok((train_std, val_std))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(AppError::io(format!("writing {}", path.display())))
}

fn write_trace(dir: &Path, name: &str, trace: &TrainingTrace) -> Result<()> {
    write_text(&dir.join(name), &trace.to_csv())
}

fn write_metrics(dir: &Path, report: &MetricsReport) -> Result<()> {
    let mut out = MetricsReport::names().join(",");
    out.push('\n');
    let values: Vec<String> = report.values().iter().map(|v| v.to_string()).collect();
    out.push_str(&values.join(","));
    out.push('\n');
    write_text(&dir.join("metrics.csv"), &out)
}

fn gen_data(
    out: &Path,
    samples: usize,
    t_min: usize,
    t_max: usize,
    noise: f64,
    seed: u64,
    force: bool,
) -> Result<()> {
    ensure_out(out, force)?;
    let ds = generate_synthetic(&SyntheticConfig {
        num_samples: samples,
        t_min,
        t_max,
        noise_scale: noise,
        seed,
    })?;
    formats::write_dataset(out, &ds)?;
    println!(
        "wrote {} sequences ({} labeled) to {}",
        ds.len(),
        ds.labeled_count(),
        out.display()
    );
    Ok(())
}

fn pretrain_cmd(manifest: &Path, out: &Path, config: Option<&Path>, force: bool) -> Result<()> {
    let cfg = load_config(config)?;
    ensure_out(out, force)?;
    cfg.save_resolved(out)?;
    let opts = train_options(&cfg)?;
    let (train_ds, _) = prepare_splits(manifest, &cfg)?;
    let sequences = train_ds.strip_labels();
    let (model, trace) = train::pretrain(&sequences, &opts, cfg.seed)?;
    formats::save_checkpoint(&out.join("backbone.ckpt"), &model)?;
    write_trace(out, "pretrain_trace.csv", &trace)?;
    println!(
        "pretrained on {} sequences, final reconstruction loss {:.6}",
        sequences.len(),
        trace.final_loss().unwrap_or(f64::NAN)
    );
    println!("checkpoint: {}", out.join("backbone.ckpt").display());
    Ok(())
}

/// Shared path of `finetune` (with a backbone checkpoint) and `baseline`
/// (without one).
fn supervised_cmd(
    manifest: &Path,
    checkpoint: Option<&Path>,
    out: &Path,
    config: Option<&Path>,
    budget: Option<usize>,
    force: bool,
) -> Result<()> {
    let cfg = load_config(config)?;
    ensure_out(out, force)?;
    cfg.save_resolved(out)?;
    let opts = train_options(&cfg)?;
    let (train_full, val) = prepare_splits(manifest, &cfg)?;
    let train_ds = match budget {
        Some(n) => sample_labeled_subset(&train_full, n, derive_seed(cfg.seed, "budget-subset"))?,
        None => train_full,
    };

    let (model, trace) = match checkpoint {
        Some(ckpt) => {
            let backbone = formats::load_checkpoint(ckpt)?;
            train::finetune(&backbone, &train_ds, &opts, cfg.seed)?
        }
        None => train::train_baseline(&train_ds, &opts, cfg.seed)?,
    };
    let report = train::evaluate(&model, &val, opts.pooling)?;

    formats::save_checkpoint(&out.join("model.ckpt"), &model)?;
    write_trace(out, "train_trace.csv", &trace)?;
    write_metrics(out, &report)?;
    println!(
        "trained on {} labeled sequences, evaluated on {}",
        train_ds.labeled_count(),
        val.labeled_count()
    );
    println!(
        "held-out MAE {:.4}, 4-class accuracy {:.4}",
        report.overall_mae, report.overall_acc4
    );
    Ok(())
}

fn sweep_cmd(
    manifest: &Path,
    checkpoint: &Path,
    out: &Path,
    config: Option<&Path>,
    force: bool,
) -> Result<()> {
    let cfg = load_config(config)?;
    ensure_out(out, force)?;
    cfg.save_resolved(out)?;
    let opts = train_options(&cfg)?;
    let (train_ds, val) = prepare_splits(manifest, &cfg)?;
    let backbone = formats::load_checkpoint(checkpoint)?;

    let report = run_sweep(
        &backbone,
        &train_ds,
        &val,
        &opts,
        &cfg.sweep.budgets,
        cfg.sweep.repeats,
        cfg.seed,
    )?;
    write_text(&out.join("sweep_report.csv"), &report.cells_csv())?;
    write_text(&out.join("sweep_aggregates.csv"), &report.aggregates_csv())?;

    println!("budget  finetune_mae  baseline_mae  gap");
    for (budget, gap) in report.gap_trend() {
        println!(
            "{budget:>6}  {:>12.4}  {:>12.4}  {gap:>8.4}",
            report.mean_mae(Arm::Finetune, budget).unwrap_or(f64::NAN),
            report.mean_mae(Arm::Baseline, budget).unwrap_or(f64::NAN),
        );
    }
    println!("reports: {}", out.display());
    Ok(())
}

/// Check the analytic gradient of a small reconstruction model against
/// central finite differences.
fn gradcheck_cmd(seed: u64, corrupt: bool) -> Result<()> {
    const INPUT: usize = 5;
    const HIDDEN: usize = 6;
    const T: usize = 4;
    const TOL: f64 = 1e-4;

    let model = Model::pretrain(INPUT, HIDDEN, seed);
    let xs_data: Vec<Vec<f64>> = (0..T)
        .map(|t| (0..INPUT).map(|i| ((t * INPUT + i) as f64 * 0.37 + seed as f64).sin()).collect())
        .collect();
    let targets: Vec<Tensor> = (0..T)
        .map(|t| Tensor::new(vec![1, INPUT], xs_data[t].iter().map(|v| v * 0.5).collect()))
        .collect();
    let starts = [1usize];

    let loss_of = |m: &Model| -> std::result::Result<(f64, mtsp_core::tape::GradMap), mtsp_core::tensor::TensorError> {
        let mut tape = Tape::new();
        let taped = bind(&mut tape, m);
        let xs: Vec<_> = xs_data
            .iter()
            .map(|row| tape.constant(1, INPUT, row.clone()))
            .collect();
        let outs = forward_sequence_tape(&mut tape, &taped, m, &xs)?;
        let loss =
            masked_recon_loss_tape(&mut tape, &outs, &targets, &starts, 2, ReconLossMode::Masked)?;
        let value = tape.value(loss)[0];
        let grads = tape.backward(loss)?;
        Ok((value, grads))
    };

    let (_, mut analytic) = loss_of(&model)?;
    if corrupt {
        if let Some(g) = analytic.get_mut(&0) {
            g[0] += 0.5;
        }
    }

    let mut params: Vec<Tensor> = model.params().to_vec();
    let reference = model.clone();
    let numeric = finite_difference_gradient(
        |candidate: &[Tensor]| {
            let mut m = reference.clone();
            for (p, c) in m.params_mut().iter_mut().zip(candidate) {
                p.data_mut().copy_from_slice(c.data());
            }
            loss_of(&m).map(|(v, _)| v)
        },
        &mut params,
        1e-5,
    )?;

    let mut worst = 0.0f64;
    for (pid, num) in numeric.iter().enumerate() {
        let ana = analytic.get(&pid).cloned().unwrap_or_else(|| vec![0.0; num.len()]);
        let err = max_relative_error(&ana, num);
        worst = worst.max(err);
    }
    println!(
        "gradient audit over {} parameters: max relative error {worst:.2e} (tolerance {TOL:.0e})",
        model.total_param_count()
    );
    if worst > TOL {
        return Err(AppError::GradCheck(format!(
            "max relative error {worst:.3e} exceeds tolerance {TOL:.0e}"
        )));
    }
    println!("PASS");
    Ok(())
}
