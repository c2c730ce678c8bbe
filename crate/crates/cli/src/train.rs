//! Training loops: self-supervised reconstruction pretraining, frozen-
//! backbone fine-tuning, the fully supervised baseline, and evaluation.
//!
//! All loops are deterministic given the base seed: every random stream
//! (init, shuffling, masking) derives from it via [`crate::error::derive_seed`].
//! Sequences are batched in lockstep by equal length so each timestep is one
//! `[B×d]` matrix multiply.
//!
//! Fine-tuning exploits the frozen backbone: the pooled backbone output of
//! each training sequence is computed once and cached, and only the 6-unit
//! head is trained on those cached features. This is mathematically
//! identical to running the full network every step, because the frozen
//! layers and their inputs never change.

use std::collections::BTreeMap;
use std::time::Instant;

use mtsp_core::data::{mask_sequence, Dataset, FeatureSequence, MaskSpec};
use mtsp_core::metrics::MetricsReport;
use mtsp_core::nn::{
    self, bind, forward_sequence_tape, label_loss_tape, masked_recon_loss_tape, predict_tape,
    Model, Pooling, ReconLossMode,
};
use mtsp_core::optim::{AdamHyper, OptimizerState};
use mtsp_core::tape::{NodeId, Tape};
use mtsp_core::tensor::Tensor;
use mtsp_core::{EMOTION_COUNT, FEATURE_DIM};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{derive_seed, AppError, Result};

/// Knobs shared by the three training loops.
#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Step size for head-only fine-tuning; larger than `learning_rate`
    /// because the head is tiny and sees few optimizer steps at small
    /// label budgets.
    pub head_learning_rate: f64,
    pub hidden_units: usize,
    pub pooling: Pooling,
    pub recon_mode: ReconLossMode,
    pub mask: MaskSpec,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 30,
            pretrain_epochs: 10,
            batch_size: 16,
            learning_rate: 1e-3,
            head_learning_rate: 5e-2,
            hidden_units: 256,
            pooling: Pooling::Last,
            recon_mode: ReconLossMode::Masked,
            mask: MaskSpec::default(),
        }
    }
}

/// Per-epoch loss curve with wall-clock timing.
#[derive(Debug, Clone, Default)]
pub struct TrainingTrace {
    pub epochs: Vec<EpochRecord>,
}

#[derive(Debug, Clone, Copy)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub seconds: f64,
}

impl TrainingTrace {
    fn record(&mut self, epoch: usize, loss: f64, started: Instant) {
        let seconds = started.elapsed().as_secs_f64();
        log::info!("epoch {epoch}: loss {loss:.6} ({seconds:.2}s)");
        self.epochs.push(EpochRecord {
            epoch,
            loss,
            seconds,
        });
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    /// CSV rendering: `epoch,loss`. Per-epoch wall-clock timing is kept in
    /// memory and logged, but deliberately left out of the persisted file so
    /// that rerunning a command with identical inputs reproduces every
    /// output byte for byte.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{}\n", e.epoch, e.loss));
        }
        out
    }
}

/// Group sequence indices by length, then chunk each group into batches.
/// Order within a group follows `order`, so reshuffling `order` reshuffles
/// batch membership.
fn lockstep_batches(
    seqs: &[FeatureSequence],
    order: &[usize],
    batch_size: usize,
) -> Vec<Vec<usize>> {
    let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in order {
        by_len.entry(seqs[i].len()).or_default().push(i);
    }
    let mut batches = Vec::new();
    for group in by_len.values() {
        for chunk in group.chunks(batch_size) {
            batches.push(chunk.to_vec());
        }
    }
    batches
}

/// Gather timestep `t` of the given sequences into one `[B×D]` tensor.
fn gather_timestep(rows: &[&Tensor], t: usize) -> Tensor {
    let d = rows[0].cols();
    let mut data = Vec::with_capacity(rows.len() * d);
    for m in rows {
        data.extend_from_slice(m.row(t));
    }
    Tensor::new(vec![rows.len(), d], data)
}

fn push_timesteps(tape: &mut Tape, rows: &[&Tensor], t_len: usize) -> Vec<NodeId> {
    (0..t_len)
        .map(|t| {
            let g = gather_timestep(rows, t);
            let (r, c) = (g.rows(), g.cols());
            let data = g.data().to_vec();
            tape.constant(r, c, data)
        })
        .collect()
}

/// Self-supervised pretraining: mask a block of each sequence, run the
/// reconstruction backbone, minimize MSE on the masked block. Masks are
/// redrawn every epoch. Labels are never consulted.
pub fn pretrain(
    sequences: &[FeatureSequence],
    opts: &TrainOptions,
    seed: u64,
) -> Result<(Model, TrainingTrace)> {
    if sequences.is_empty() {
        return Err(AppError::Usage("pretraining needs at least one sequence".into()));
    }
    let mut model = Model::pretrain(
        FEATURE_DIM,
        opts.hidden_units,
        derive_seed(seed, "pretrain-init"),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "pretrain-data"));
    let mut optim = OptimizerState::new(AdamHyper::with_learning_rate(opts.learning_rate));
    let mut trace = TrainingTrace::default();
    let mut order: Vec<usize> = (0..sequences.len()).collect();

    for epoch in 1..=opts.pretrain_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut masked: Vec<(Tensor, usize)> = Vec::with_capacity(sequences.len());
        for seq in sequences {
            masked.push(mask_sequence(seq, &opts.mask, &mut rng)?);
        }

        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        for batch in lockstep_batches(sequences, &order, opts.batch_size) {
            let t_len = sequences[batch[0]].len();
            let inputs: Vec<&Tensor> = batch.iter().map(|&i| &masked[i].0).collect();
            let originals: Vec<&Tensor> =
                batch.iter().map(|&i| &sequences[i].features).collect();
            let starts: Vec<usize> = batch.iter().map(|&i| masked[i].1).collect();

            let mut tape = Tape::new();
            let taped = bind(&mut tape, &model);
            let xs = push_timesteps(&mut tape, &inputs, t_len);
            let outs = forward_sequence_tape(&mut tape, &taped, &model, &xs)?;
            let targets: Vec<Tensor> = (0..t_len).map(|t| gather_timestep(&originals, t)).collect();
            let loss = masked_recon_loss_tape(
                &mut tape,
                &outs,
                &targets,
                &starts,
                opts.mask.mask_length,
                opts.recon_mode,
            )?;
            let loss_value = tape.value(loss)[0];
            if !loss_value.is_finite() {
                return Err(AppError::GradCheck(format!(
                    "non-finite reconstruction loss at epoch {epoch}"
                )));
            }
            let grads = tape.backward(loss)?;
            optim.step(model.params_mut(), &grads)?;
            loss_sum += loss_value * batch.len() as f64;
            loss_n += batch.len();
        }
        trace.record(epoch, loss_sum / loss_n as f64, started);
    }
    Ok((model, trace))
}

/// Pooled backbone features plus label for every labeled sequence, in
/// sorted-id order.
fn cached_features(
    model: &Model,
    ds: &Dataset,
    pooling: Pooling,
) -> Result<(Vec<Vec<f64>>, Vec<[f64; EMOTION_COUNT]>)> {
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    let mut seqs: Vec<&FeatureSequence> = ds
        .sequences()
        .iter()
        .filter(|s| ds.label_of(&s.id).is_some())
        .collect();
    seqs.sort_by(|a, b| a.id.cmp(&b.id));
    for seq in seqs {
        feats.push(nn::backbone_features(model, &seq.features, pooling)?);
        labels.push(ds.label_of(&seq.id).unwrap().intensities);
    }
    Ok((feats, labels))
}

/// Fine-tune: attach a fresh 6-unit head to the frozen backbone and train
/// only the head on the labeled data.
pub fn finetune(
    backbone: &Model,
    train: &Dataset,
    opts: &TrainOptions,
    seed: u64,
) -> Result<(Model, TrainingTrace)> {
    let mut model = Model::finetune_from(backbone, derive_seed(seed, "head-init"));
    let (feats, labels) = cached_features(&model, train, opts.pooling)?;
    if feats.is_empty() {
        return Err(AppError::Usage("fine-tuning needs labeled sequences".into()));
    }
    let head = model.head_layer().unwrap().param_ids();
    let (w_id, b_id) = (head.start, head.start + 1);
    let d = feats[0].len();

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "finetune-data"));
    let mut optim = OptimizerState::new(AdamHyper::with_learning_rate(opts.head_learning_rate));
    let mut trace = TrainingTrace::default();
    let mut order: Vec<usize> = (0..feats.len()).collect();

    // Step decay: full rate while the head crosses the distance from its
    // zero init to the label scale, then a tenth of it to settle near the
    // least-squares optimum instead of bouncing around it.
    let decay_after = (opts.epochs * 2).div_ceil(3);

    for epoch in 1..=opts.epochs {
        let started = Instant::now();
        optim.hyper.learning_rate = if epoch <= decay_after {
            opts.head_learning_rate
        } else {
            opts.head_learning_rate / 10.0
        };
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        for batch in order.chunks(opts.batch_size) {
            let b = batch.len();
            let mut x = Vec::with_capacity(b * d);
            let mut y = Vec::with_capacity(b * EMOTION_COUNT);
            for &i in batch {
                x.extend_from_slice(&feats[i]);
                y.extend_from_slice(&labels[i]);
            }
            let y = Tensor::new(vec![b, EMOTION_COUNT], y);

            let mut tape = Tape::new();
            let w = tape.leaf(&model.params()[w_id], Some(w_id));
            let bias = tape.leaf(&model.params()[b_id], Some(b_id));
            let x = tape.constant(b, d, x);
            let proj = tape.matmul(x, w)?;
            let pred = tape.add_row(proj, bias)?;
            let loss = label_loss_tape(&mut tape, pred, &y)?;
            let loss_value = tape.value(loss)[0];
            if !loss_value.is_finite() {
                return Err(AppError::GradCheck(format!(
                    "non-finite head loss at epoch {epoch}"
                )));
            }
            let grads = tape.backward(loss)?;
            optim.step(model.params_mut(), &grads)?;
            loss_sum += loss_value * b as f64;
            loss_n += b;
        }
        trace.record(epoch, loss_sum / loss_n as f64, started);
    }
    Ok((model, trace))
}

/// Fully supervised baseline: the fine-tune layout, randomly initialized,
/// trained end-to-end on the labeled data only.
pub fn train_baseline(
    train: &Dataset,
    opts: &TrainOptions,
    seed: u64,
) -> Result<(Model, TrainingTrace)> {
    let labeled: Vec<FeatureSequence> = {
        let mut v: Vec<FeatureSequence> = train
            .sequences()
            .iter()
            .filter(|s| train.label_of(&s.id).is_some())
            .cloned()
            .collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    };
    if labeled.is_empty() {
        return Err(AppError::Usage("baseline training needs labeled sequences".into()));
    }
    let mut model = Model::baseline(
        FEATURE_DIM,
        opts.hidden_units,
        derive_seed(seed, "baseline-init"),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "baseline-data"));
    let mut optim = OptimizerState::new(AdamHyper::with_learning_rate(opts.learning_rate));
    let mut trace = TrainingTrace::default();
    let mut order: Vec<usize> = (0..labeled.len()).collect();

    for epoch in 1..=opts.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        for batch in lockstep_batches(&labeled, &order, opts.batch_size) {
            let t_len = labeled[batch[0]].len();
            let inputs: Vec<&Tensor> = batch.iter().map(|&i| &labeled[i].features).collect();
            let mut y = Vec::with_capacity(batch.len() * EMOTION_COUNT);
            for &i in &batch {
                y.extend_from_slice(&train.label_of(&labeled[i].id).unwrap().intensities);
            }
            let y = Tensor::new(vec![batch.len(), EMOTION_COUNT], y);

            let mut tape = Tape::new();
            let taped = bind(&mut tape, &model);
            let xs = push_timesteps(&mut tape, &inputs, t_len);
            let pred = predict_tape(&mut tape, &taped, &model, &xs, opts.pooling)?;
            let loss = label_loss_tape(&mut tape, pred, &y)?;
            let loss_value = tape.value(loss)[0];
            if !loss_value.is_finite() {
                return Err(AppError::GradCheck(format!(
                    "non-finite baseline loss at epoch {epoch}"
                )));
            }
            let grads = tape.backward(loss)?;
            optim.step(model.params_mut(), &grads)?;
            loss_sum += loss_value * batch.len() as f64;
            loss_n += batch.len();
        }
        trace.record(epoch, loss_sum / loss_n as f64, started);
    }
    Ok((model, trace))
}

/// Evaluate a labeled model on every labeled sequence of `ds`, in
/// sorted-id order.
pub fn evaluate(model: &Model, ds: &Dataset, pooling: Pooling) -> Result<MetricsReport> {
    let mut seqs: Vec<&FeatureSequence> = ds
        .sequences()
        .iter()
        .filter(|s| ds.label_of(&s.id).is_some())
        .collect();
    seqs.sort_by(|a, b| a.id.cmp(&b.id));
    if seqs.is_empty() {
        return Err(AppError::Usage("evaluation needs labeled sequences".into()));
    }
    let n = seqs.len();
    let mut pred = Vec::with_capacity(n * EMOTION_COUNT);
    let mut truth = Vec::with_capacity(n * EMOTION_COUNT);
    for seq in seqs {
        pred.extend(nn::predict_label(model, &seq.features, pooling)?);
        truth.extend_from_slice(&ds.label_of(&seq.id).unwrap().intensities);
    }
    let pred = Tensor::new(vec![n, EMOTION_COUNT], pred);
    let truth = Tensor::new(vec![n, EMOTION_COUNT], truth);
    Ok(MetricsReport::compute(&pred, &truth)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mtsp_core::data::{generate_synthetic, SyntheticConfig};

    fn tiny_opts() -> TrainOptions {
        TrainOptions {
            epochs: 2,
            pretrain_epochs: 2,
            batch_size: 4,
            hidden_units: 8,
            mask: MaskSpec {
                mask_length: 5,
                ..MaskSpec::default()
            },
            ..TrainOptions::default()
        }
    }

    fn tiny_dataset(n: usize, seed: u64) -> Dataset {
        generate_synthetic(&SyntheticConfig {
            num_samples: n,
            t_min: 10,
            t_max: 12,
            noise_scale: 0.3,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn pretrain_is_deterministic_and_loss_finite() {
        let ds = tiny_dataset(6, 1);
        let opts = tiny_opts();
        let (m1, t1) = pretrain(ds.sequences(), &opts, 42).unwrap();
        let (m2, t2) = pretrain(ds.sequences(), &opts, 42).unwrap();
        for (a, b) in m1.params().iter().zip(m2.params()) {
            assert_eq!(a.data(), b.data());
        }
        for (a, b) in t1.epochs.iter().zip(&t2.epochs) {
            assert_eq!(a.loss, b.loss);
        }
        assert!(t1.final_loss().unwrap().is_finite());
        let (m3, _) = pretrain(ds.sequences(), &opts, 43).unwrap();
        assert_ne!(m1.params()[0].data(), m3.params()[0].data());
    }

    #[test]
    fn finetune_freezes_backbone_bit_exactly() {
        let ds = tiny_dataset(8, 2);
        let opts = tiny_opts();
        let (backbone, _) = pretrain(ds.sequences(), &opts, 5).unwrap();
        let before: Vec<Vec<u64>> = backbone
            .params()
            .iter()
            .map(|p| p.data().iter().map(|v| v.to_bits()).collect())
            .collect();
        let (tuned, trace) = finetune(&backbone, &ds, &opts, 6).unwrap();
        assert!(trace.final_loss().unwrap().is_finite());
        for (p, want) in tuned.params().iter().take(before.len()).zip(&before) {
            let got: Vec<u64> = p.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(&got, want, "backbone parameter changed during fine-tune");
        }
        assert_eq!(tuned.trainable_param_count(), FEATURE_DIM * 6 + 6);
    }

    #[test]
    fn finetune_head_loss_decreases() {
        let ds = tiny_dataset(16, 3);
        let mut opts = tiny_opts();
        opts.epochs = 40;
        let (backbone, _) = pretrain(ds.sequences(), &opts, 7).unwrap();
        let (_, trace) = finetune(&backbone, &ds, &opts, 8).unwrap();
        let first = trace.epochs.first().unwrap().loss;
        let last = trace.final_loss().unwrap();
        assert!(last < first, "head loss should decrease: {first} -> {last}");
    }

    #[test]
    fn baseline_trains_and_is_deterministic() {
        let ds = tiny_dataset(6, 4);
        let opts = tiny_opts();
        let (b1, t1) = train_baseline(&ds, &opts, 9).unwrap();
        let (b2, t2) = train_baseline(&ds, &opts, 9).unwrap();
        for (a, b) in b1.params().iter().zip(b2.params()) {
            assert_eq!(a.data(), b.data());
        }
        assert_eq!(t1.final_loss(), t2.final_loss());
        assert_eq!(b1.trainable_param_count(), b1.total_param_count());
    }

    #[test]
    fn evaluate_perfect_predictor() {
        // a head that ignores features and outputs the constant label
        let ds = {
            let mut ds = tiny_dataset(4, 5);
            let ids: Vec<String> = ds.sequences().iter().map(|s| s.id.clone()).collect();
            for id in ids {
                ds.set_label(
                    &id,
                    mtsp_core::data::EmotionLabel::new(&id, [1.0, 2.0, 0.0, 3.0, 1.0, 2.0])
                        .unwrap(),
                )
                .unwrap();
            }
            ds
        };
        let pre = Model::pretrain(FEATURE_DIM, 8, 0);
        let mut model = Model::finetune_from(&pre, 1);
        let head = model.head_layer().unwrap().param_ids();
        let (w, b) = (head.start, head.start + 1);
        model.params_mut()[w].data_mut().fill(0.0);
        model.params_mut()[b]
            .data_mut()
            .copy_from_slice(&[1.0, 2.0, 0.0, 3.0, 1.0, 2.0]);
        let report = evaluate(&model, &ds, Pooling::Last).unwrap();
        assert_eq!(report.overall_mae, 0.0);
        assert_eq!(report.overall_acc4, 1.0);
    }

    #[test]
    fn trace_csv_shape() {
        let ds = tiny_dataset(4, 6);
        let (_, trace) = train_baseline(&ds, &tiny_opts(), 1).unwrap();
        let csv = trace.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("epoch,loss"));
        assert_eq!(lines.count(), 2);
    }
}
