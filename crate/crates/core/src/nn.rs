//! GRU and dense layers, the model assemblies, losses, and freezing.
//!
//! A [`Model`] owns its parameters in a flat arena (`Vec<Tensor>`); the
//! arena index is the [`ParamId`] used by the tape and optimizer. Three
//! layouts exist:
//!
//! * pretrain: `GRU(d→h), GRU(h→h), Dense(h→d)` reconstructing features,
//! * fine-tune: the pretrain layers (frozen) plus a trainable `Dense(d→6)`,
//! * baseline: the fine-tune layout, nothing frozen, random init.
//!
//! With the default dims `d = 74, h = 256` the fine-tune head has
//! `74·6 + 6 = 450` trainable parameters.
//!
//! Two forward paths exist and must agree: a tape path used for training
//! (batched, differentiable) and a plain evaluation path used for inference.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tape::{NodeId, Tape};
use crate::tensor::{kernels, Tensor, TensorError};
use crate::EMOTION_COUNT;

/// How the per-timestep backbone outputs are reduced before the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    #[default]
    Last,
    Mean,
}

/// Which positions the reconstruction loss covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReconLossMode {
    #[default]
    Masked,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Gru,
    Dense,
}

/// Number of parameter tensors per layer kind.
/// GRU order: W_z, W_r, W_h, U_z, U_r, U_h, b_z, b_r, b_h. Dense: weight, bias.
pub const GRU_PARAM_COUNT: usize = 9;
pub const DENSE_PARAM_COUNT: usize = 2;

#[derive(Debug, Clone)]
pub struct Layer {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    pub frozen: bool,
    first_param: usize,
}

impl Layer {
    pub fn param_ids(&self) -> Range<usize> {
        let count = match self.kind {
            LayerKind::Gru => GRU_PARAM_COUNT,
            LayerKind::Dense => DENSE_PARAM_COUNT,
        };
        self.first_param..self.first_param + count
    }
}

/// Layered parameter container: a GRU stack plus dense layers, with
/// per-layer freeze flags.
#[derive(Debug, Clone)]
pub struct Model {
    layers: Vec<Layer>,
    params: Vec<Tensor>,
}

fn uniform_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / libm::sqrt(fan_in as f64);
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::new(vec![rows, cols], data).with_grad(true)
}

impl Model {
    fn empty() -> Self {
        Model {
            layers: Vec::new(),
            params: Vec::new(),
        }
    }

    fn push_gru(&mut self, rng: &mut ChaCha8Rng, in_dim: usize, hidden: usize) {
        let first_param = self.params.len();
        for _ in 0..3 {
            self.params.push(uniform_init(rng, in_dim, hidden, in_dim));
        }
        for _ in 0..3 {
            self.params.push(uniform_init(rng, hidden, hidden, hidden));
        }
        for _ in 0..3 {
            self.params
                .push(Tensor::zeros(vec![1, hidden]).with_grad(true));
        }
        self.layers.push(Layer {
            kind: LayerKind::Gru,
            in_dim,
            out_dim: hidden,
            frozen: false,
            first_param,
        });
    }

    fn push_dense(&mut self, rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize) {
        let first_param = self.params.len();
        self.params.push(uniform_init(rng, in_dim, out_dim, in_dim));
        self.params
            .push(Tensor::zeros(vec![1, out_dim]).with_grad(true));
        self.layers.push(Layer {
            kind: LayerKind::Dense,
            in_dim,
            out_dim,
            frozen: false,
            first_param,
        });
    }

    /// Reconstruction backbone: `GRU(d→h), GRU(h→h), Dense(h→d)`.
    pub fn pretrain(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Model::empty();
        m.push_gru(&mut rng, input_dim, hidden);
        m.push_gru(&mut rng, hidden, hidden);
        m.push_dense(&mut rng, hidden, input_dim);
        m
    }

    /// Frozen pretrained backbone plus a fresh trainable 6-unit head.
    pub fn finetune_from(pretrained: &Model, seed: u64) -> Self {
        let mut m = pretrained.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        m.push_dense(&mut rng, pretrained.output_dim(), EMOTION_COUNT);
        m.freeze_backbone();
        m
    }

    /// Same layout as the fine-tune model, randomly initialized, nothing
    /// frozen, no pretraining.
    pub fn baseline(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Model::empty();
        m.push_gru(&mut rng, input_dim, hidden);
        m.push_gru(&mut rng, hidden, hidden);
        m.push_dense(&mut rng, hidden, input_dim);
        m.push_dense(&mut rng, input_dim, EMOTION_COUNT);
        m
    }

    pub(crate) fn from_parts(layers: Vec<(LayerKind, usize, usize, bool)>, params: Vec<Tensor>) -> Self {
        let mut model = Model {
            layers: Vec::new(),
            params,
        };
        let mut first_param = 0;
        for (kind, in_dim, out_dim, frozen) in layers {
            let count = match kind {
                LayerKind::Gru => GRU_PARAM_COUNT,
                LayerKind::Dense => DENSE_PARAM_COUNT,
            };
            model.layers.push(Layer {
                kind,
                in_dim,
                out_dim,
                frozen,
                first_param,
            });
            first_param += count;
        }
        for layer in &model.layers {
            for pid in layer.param_ids() {
                model.params[pid].set_requires_grad(!layer.frozen);
            }
        }
        model
    }

    /// Freeze every layer except the last (the head).
    pub fn freeze_backbone(&mut self) {
        let last = self.layers.len() - 1;
        for (idx, layer) in self.layers.iter_mut().enumerate() {
            let frozen = idx != last;
            layer.frozen = frozen;
            for pid in layer.param_ids() {
                self.params[pid].set_requires_grad(!frozen);
            }
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    /// Output dimension of the backbone's dense layer (the feature dim).
    pub fn output_dim(&self) -> usize {
        self.backbone_dense().out_dim
    }

    /// True when a label head is attached (fine-tune/baseline layouts).
    pub fn has_head(&self) -> bool {
        self.layers.len() == 4
    }

    fn backbone_dense(&self) -> &Layer {
        &self.layers[2]
    }

    pub fn head_layer(&self) -> Option<&Layer> {
        if self.has_head() {
            self.layers.last()
        } else {
            None
        }
    }

    pub fn trainable_param_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.requires_grad())
            .map(|p| p.len())
            .sum()
    }

    pub fn total_param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }
}

// ---------------------------------------------------------------------------
// Tape (training) path
// ---------------------------------------------------------------------------

/// Parameter leaves of one model bound onto a tape, indexed by `ParamId`.
pub struct TapedModel {
    pub param_nodes: Vec<NodeId>,
}

pub fn bind(tape: &mut Tape, model: &Model) -> TapedModel {
    let param_nodes = model
        .params()
        .iter()
        .enumerate()
        .map(|(pid, p)| tape.leaf(p, Some(pid)))
        .collect();
    TapedModel { param_nodes }
}

struct GruNodes {
    w: [NodeId; 3],
    u: [NodeId; 3],
    b: [NodeId; 3],
}

fn gru_nodes(taped: &TapedModel, layer: &Layer) -> GruNodes {
    let ids = layer.param_ids();
    let n = &taped.param_nodes[ids];
    GruNodes {
        w: [n[0], n[1], n[2]],
        u: [n[3], n[4], n[5]],
        b: [n[6], n[7], n[8]],
    }
}

/// One GRU step on the tape:
/// `z = σ(xW_z + hU_z + b_z)`, `r = σ(xW_r + hU_r + b_r)`,
/// `ĥ = tanh(xW_h + (r⊙h)U_h + b_h)`, `h' = (1−z)⊙h + z⊙ĥ`.
fn gru_cell_tape(
    tape: &mut Tape,
    x: NodeId,
    h_prev: NodeId,
    p: &GruNodes,
) -> Result<NodeId, TensorError> {
    let gate = |tape: &mut Tape, gi: usize, x_in: NodeId, h_in: NodeId| -> Result<NodeId, TensorError> {
        let xw = tape.matmul(x_in, p.w[gi])?;
        let hu = tape.matmul(h_in, p.u[gi])?;
        let pre = tape.add(xw, hu)?;
        tape.add_row(pre, p.b[gi])
    };
    let z = {
        let pre = gate(tape, 0, x, h_prev)?;
        tape.sigmoid(pre)
    };
    let r = {
        let pre = gate(tape, 1, x, h_prev)?;
        tape.sigmoid(pre)
    };
    let rh = tape.mul(r, h_prev)?;
    let hhat = {
        let pre = gate(tape, 2, x, rh)?;
        tape.tanh(pre)
    };
    let one = tape.scalar(1.0);
    let keep = tape.sub(one, z)?;
    let kept = tape.mul(keep, h_prev)?;
    let update = tape.mul(z, hhat)?;
    tape.add(kept, update)
}

/// One GRU cell step; `x: [B×in]`,
/// `h_prev: [B×hidden]`, using the parameters of GRU layer `layer_idx`.
pub fn gru_cell_step(
    tape: &mut Tape,
    taped: &TapedModel,
    model: &Model,
    layer_idx: usize,
    x: NodeId,
    h_prev: NodeId,
) -> Result<NodeId, TensorError> {
    let layer = &model.layers()[layer_idx];
    if layer.kind != LayerKind::Gru {
        return Err(TensorError::Contract {
            op: "gru_cell_step",
            msg: "layer is not a GRU",
        });
    }
    let (_, xc) = tape.shape(x);
    let (_, hc) = tape.shape(h_prev);
    if xc != layer.in_dim || hc != layer.out_dim {
        return Err(TensorError::Contract {
            op: "gru_cell_step",
            msg: "input/hidden dims do not match layer parameters",
        });
    }
    let p = gru_nodes(taped, layer);
    gru_cell_tape(tape, x, h_prev, &p)
}

/// Run the backbone over a batch of lockstep timesteps. `xs[t]` is a
/// `[B×input_dim]` node. Returns the per-timestep `[B×feature_dim]` outputs
/// of the backbone's dense layer.
pub fn forward_sequence_tape(
    tape: &mut Tape,
    taped: &TapedModel,
    model: &Model,
    xs: &[NodeId],
) -> Result<Vec<NodeId>, TensorError> {
    if xs.is_empty() {
        return Err(TensorError::Contract {
            op: "forward_sequence",
            msg: "empty input sequence",
        });
    }
    let batch = tape.shape(xs[0]).0;
    let layers = model.layers();
    let gru1 = gru_nodes(taped, &layers[0]);
    let gru2 = gru_nodes(taped, &layers[1]);
    let dense = &layers[2];
    let dense_ids = dense.param_ids();
    let (dw, db) = (
        taped.param_nodes[dense_ids.start],
        taped.param_nodes[dense_ids.start + 1],
    );

    let mut h1 = tape.constant(batch, layers[0].out_dim, vec![0.0; batch * layers[0].out_dim]);
    let mut h2 = tape.constant(batch, layers[1].out_dim, vec![0.0; batch * layers[1].out_dim]);
    let mut outs = Vec::with_capacity(xs.len());
    for &x in xs {
        h1 = gru_cell_tape(tape, x, h1, &gru1)?;
        h2 = gru_cell_tape(tape, h1, h2, &gru2)?;
        let proj = tape.matmul(h2, dw)?;
        outs.push(tape.add_row(proj, db)?);
    }
    Ok(outs)
}

/// Backbone forward plus the 6-unit head: pooled backbone output (last
/// timestep by default, or the mean over timesteps) through the head dense.
pub fn predict_tape(
    tape: &mut Tape,
    taped: &TapedModel,
    model: &Model,
    xs: &[NodeId],
    pooling: Pooling,
) -> Result<NodeId, TensorError> {
    if !model.has_head() {
        return Err(TensorError::Contract {
            op: "predict_label",
            msg: "model has no label head",
        });
    }
    let outs = forward_sequence_tape(tape, taped, model, xs)?;
    let pooled = match pooling {
        Pooling::Last => *outs.last().unwrap(),
        Pooling::Mean => {
            let mut acc = outs[0];
            for &o in &outs[1..] {
                acc = tape.add(acc, o)?;
            }
            let inv = tape.scalar(1.0 / outs.len() as f64);
            tape.mul(acc, inv)?
        }
    };
    let head = model.head_layer().unwrap();
    let ids = head.param_ids();
    let (hw, hb) = (
        taped.param_nodes[ids.start],
        taped.param_nodes[ids.start + 1],
    );
    let proj = tape.matmul(pooled, hw)?;
    tape.add_row(proj, hb)
}

/// Mean squared error over masked positions of a lockstep batch, on the tape.
///
/// `outs[t]` and `targets[t]` are `[B×D]`; sample `b` is masked on
/// timesteps `[starts[b], starts[b]+mask_len)`. With `ReconLossMode::Full`
/// the mask is ignored and every entry contributes.
pub fn masked_recon_loss_tape(
    tape: &mut Tape,
    outs: &[NodeId],
    targets: &[Tensor],
    starts: &[usize],
    mask_len: usize,
    mode: ReconLossMode,
) -> Result<NodeId, TensorError> {
    if outs.len() != targets.len() {
        return Err(TensorError::Contract {
            op: "masked_reconstruction_loss",
            msg: "output/target length mismatch",
        });
    }
    let seq_len = outs.len();
    if mask_len == 0 || mask_len > seq_len {
        return Err(TensorError::Contract {
            op: "masked_reconstruction_loss",
            msg: "mask range empty or longer than sequence",
        });
    }
    let (batch, dim) = tape.shape(outs[0]);
    let mut total: Option<NodeId> = None;
    let mut counted = 0usize;
    for (t, (&out, target)) in outs.iter().zip(targets).enumerate() {
        let active: Vec<usize> = match mode {
            ReconLossMode::Full => (0..batch).collect(),
            ReconLossMode::Masked => (0..batch)
                .filter(|b| t >= starts[*b] && t < starts[*b] + mask_len)
                .collect(),
        };
        if active.is_empty() {
            continue;
        }
        let target_node = tape.leaf(target, None);
        let diff = tape.sub(out, target_node)?;
        let sq = tape.mul(diff, diff)?;
        let part = if active.len() == batch {
            tape.sum(sq)
        } else {
            let mut w = vec![0.0; batch * dim];
            for &b in &active {
                w[b * dim..(b + 1) * dim].fill(1.0);
            }
            let w = tape.constant(batch, dim, w);
            let masked = tape.mul(sq, w)?;
            tape.sum(masked)
        };
        counted += active.len() * dim;
        total = Some(match total {
            Some(acc) => tape.add(acc, part)?,
            None => part,
        });
    }
    let total = total.ok_or(TensorError::Contract {
        op: "masked_reconstruction_loss",
        msg: "mask selects no positions",
    })?;
    let inv = tape.scalar(1.0 / counted as f64);
    tape.mul(total, inv)
}

/// Mean squared error between a `[B×6]` prediction and labels, on the tape.
pub fn label_loss_tape(
    tape: &mut Tape,
    pred: NodeId,
    labels: &Tensor,
) -> Result<NodeId, TensorError> {
    let (r, c) = tape.shape(pred);
    if labels.rows() != r || labels.cols() != c {
        return Err(TensorError::ShapeMismatch {
            op: "label_loss",
            lhs: vec![r, c],
            rhs: labels.shape().to_vec(),
        });
    }
    let target = tape.leaf(labels, None);
    let diff = tape.sub(pred, target)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum(sq);
    let inv = tape.scalar(1.0 / (r * c) as f64);
    tape.mul(total, inv)
}

// ---------------------------------------------------------------------------
// Plain (evaluation) path
// ---------------------------------------------------------------------------

struct GruRefs<'a> {
    w: [&'a [f64]; 3],
    u: [&'a [f64]; 3],
    b: [&'a [f64]; 3],
    in_dim: usize,
    hidden: usize,
}

fn gru_refs<'a>(model: &'a Model, layer: &Layer) -> GruRefs<'a> {
    let ids = layer.param_ids();
    let p: Vec<&[f64]> = ids.map(|i| model.params()[i].data()).collect();
    GruRefs {
        w: [p[0], p[1], p[2]],
        u: [p[3], p[4], p[5]],
        b: [p[6], p[7], p[8]],
        in_dim: layer.in_dim,
        hidden: layer.out_dim,
    }
}

fn gru_cell_eval(p: &GruRefs, x: &[f64], h: &mut Vec<f64>, scratch: &mut [Vec<f64>; 4]) {
    let hid = p.hidden;
    let [z, r, hh, rh] = scratch;
    for (gi, buf) in [(0usize, &mut *z), (1, &mut *r)] {
        buf.clear();
        buf.extend_from_slice(p.b[gi]);
        kernels::matmul_acc(x, p.w[gi], buf, 1, p.in_dim, hid);
        kernels::matmul_acc(h, p.u[gi], buf, 1, hid, hid);
        for v in buf.iter_mut() {
            *v = kernels::sigmoid(*v);
        }
    }
    rh.clear();
    rh.extend(r.iter().zip(h.iter()).map(|(ri, hi)| ri * hi));
    hh.clear();
    hh.extend_from_slice(p.b[2]);
    kernels::matmul_acc(x, p.w[2], hh, 1, p.in_dim, hid);
    kernels::matmul_acc(rh, p.u[2], hh, 1, hid, hid);
    for v in hh.iter_mut() {
        *v = kernels::tanh(*v);
    }
    for i in 0..hid {
        h[i] = (1.0 - z[i]) * h[i] + z[i] * hh[i];
    }
}

/// Per-timestep backbone outputs for one sequence (`[T×feature_dim]`),
/// hidden states initialized to zero. Inference only; no gradients.
pub fn forward_sequence(model: &Model, seq: &Tensor) -> Result<Tensor, TensorError> {
    let t_len = seq.rows();
    if t_len == 0 || seq.len() == 0 {
        return Err(TensorError::Contract {
            op: "forward_sequence",
            msg: "empty input sequence",
        });
    }
    if seq.cols() != model.input_dim() {
        return Err(TensorError::ShapeMismatch {
            op: "forward_sequence",
            lhs: seq.shape().to_vec(),
            rhs: vec![t_len, model.input_dim()],
        });
    }
    let layers = model.layers();
    let g1 = gru_refs(model, &layers[0]);
    let g2 = gru_refs(model, &layers[1]);
    let dense = &layers[2];
    let dw = model.params()[dense.param_ids().start].data();
    let db = model.params()[dense.param_ids().start + 1].data();

    let mut h1 = vec![0.0; g1.hidden];
    let mut h2 = vec![0.0; g2.hidden];
    let mut s1: [Vec<f64>; 4] = core::array::from_fn(|_| Vec::new());
    let mut s2: [Vec<f64>; 4] = core::array::from_fn(|_| Vec::new());
    let mut out = Vec::with_capacity(t_len * dense.out_dim);
    for t in 0..t_len {
        gru_cell_eval(&g1, seq.row(t), &mut h1, &mut s1);
        gru_cell_eval(&g2, &h1, &mut h2, &mut s2);
        let mut row = db.to_vec();
        kernels::matmul_acc(&h2, dw, &mut row, 1, dense.in_dim, dense.out_dim);
        out.extend_from_slice(&row);
    }
    Ok(Tensor::new(vec![t_len, dense.out_dim], out))
}

/// Pooled backbone output for one sequence: the head's input vector.
pub fn backbone_features(
    model: &Model,
    seq: &Tensor,
    pooling: Pooling,
) -> Result<Vec<f64>, TensorError> {
    let outs = forward_sequence(model, seq)?;
    let d = outs.cols();
    Ok(match pooling {
        Pooling::Last => outs.row(outs.rows() - 1).to_vec(),
        Pooling::Mean => {
            let mut acc = vec![0.0; d];
            for t in 0..outs.rows() {
                for (a, x) in acc.iter_mut().zip(outs.row(t)) {
                    *a += x;
                }
            }
            let inv = 1.0 / outs.rows() as f64;
            acc.iter_mut().for_each(|a| *a *= inv);
            acc
        }
    })
}

/// Raw (unclamped) 6-vector of intensity predictions for one sequence.
pub fn predict_label(
    model: &Model,
    seq: &Tensor,
    pooling: Pooling,
) -> Result<Vec<f64>, TensorError> {
    let head = model.head_layer().ok_or(TensorError::Contract {
        op: "predict_label",
        msg: "model has no label head",
    })?;
    let pooled = backbone_features(model, seq, pooling)?;
    let hw = model.params()[head.param_ids().start].data();
    let hb = model.params()[head.param_ids().start + 1].data();
    let mut out = hb.to_vec();
    kernels::matmul_acc(&pooled, hw, &mut out, 1, head.in_dim, head.out_dim);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Loss contract operations (plain values)
// ---------------------------------------------------------------------------

/// Mean squared error over the masked block `[start, start+mask_len) × all
/// columns` of a `[T×D]` prediction/original pair.
pub fn masked_reconstruction_loss(
    pred: &Tensor,
    original: &Tensor,
    start: usize,
    mask_len: usize,
) -> Result<f64, TensorError> {
    if pred.shape() != original.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "masked_reconstruction_loss",
            lhs: pred.shape().to_vec(),
            rhs: original.shape().to_vec(),
        });
    }
    if mask_len == 0 {
        return Err(TensorError::Contract {
            op: "masked_reconstruction_loss",
            msg: "empty mask range",
        });
    }
    if start + mask_len > pred.rows() {
        return Err(TensorError::Contract {
            op: "masked_reconstruction_loss",
            msg: "mask range exceeds sequence length",
        });
    }
    let d = pred.cols();
    let mut acc = 0.0;
    for t in start..start + mask_len {
        for (p, o) in pred.row(t).iter().zip(original.row(t)) {
            let diff = p - o;
            acc += diff * diff;
        }
    }
    Ok(acc / (mask_len * d) as f64)
}

/// Mean squared error over the six emotion components.
pub fn label_loss(pred: &[f64], label: &[f64]) -> Result<f64, TensorError> {
    if pred.len() != EMOTION_COUNT || label.len() != EMOTION_COUNT {
        return Err(TensorError::ShapeMismatch {
            op: "label_loss",
            lhs: vec![pred.len()],
            rhs: vec![label.len()],
        });
    }
    let acc: f64 = pred
        .iter()
        .zip(label)
        .map(|(p, l)| (p - l) * (p - l))
        .sum();
    Ok(acc / EMOTION_COUNT as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::FEATURE_DIM;
    use alloc::vec;

    fn zero_model(input: usize, hidden: usize) -> Model {
        let mut m = Model::pretrain(input, hidden, 0);
        for p in m.params_mut() {
            p.data_mut().fill(0.0);
        }
        m
    }

    #[test]
    fn layouts() {
        let m = Model::pretrain(FEATURE_DIM, 256, 1);
        assert_eq!(m.layers().len(), 3);
        assert_eq!(m.output_dim(), FEATURE_DIM);
        assert!(!m.has_head());

        let f = Model::finetune_from(&m, 2);
        assert!(f.has_head());
        assert_eq!(f.trainable_param_count(), 74 * 6 + 6);

        let b = Model::baseline(FEATURE_DIM, 256, 3);
        assert_eq!(b.trainable_param_count(), b.total_param_count());
        assert_eq!(b.layers().len(), 4);
    }

    #[test]
    fn gru_cell_zero_params_halves_hidden() {
        // all params zero: z = σ(0) = 0.5, ĥ = tanh(0) = 0, h' = 0.5·h_prev
        let model = zero_model(3, 4);
        let mut tape = Tape::new();
        let taped = bind(&mut tape, &model);
        let x = tape.constant(1, 3, vec![0.3, -0.2, 0.9]);
        let h_prev = tape.constant(1, 4, vec![1.0, -2.0, 0.5, 4.0]);
        let h = gru_cell_step(&mut tape, &taped, &model, 0, x, h_prev).unwrap();
        for (got, want) in tape.value(h).iter().zip([0.5, -1.0, 0.25, 2.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn gru_cell_zero_params_zero_hidden() {
        let model = zero_model(3, 4);
        let mut tape = Tape::new();
        let taped = bind(&mut tape, &model);
        let x = tape.constant(1, 3, vec![1.0, 1.0, 1.0]);
        let h_prev = tape.constant(1, 4, vec![0.0; 4]);
        let h = gru_cell_step(&mut tape, &taped, &model, 0, x, h_prev).unwrap();
        assert_eq!(tape.value(h), &[0.0; 4]);
    }

    #[test]
    fn gru_cell_dim_mismatch() {
        let model = zero_model(3, 4);
        let mut tape = Tape::new();
        let taped = bind(&mut tape, &model);
        let x = tape.constant(1, 5, vec![0.0; 5]);
        let h_prev = tape.constant(1, 4, vec![0.0; 4]);
        assert!(gru_cell_step(&mut tape, &taped, &model, 0, x, h_prev).is_err());
    }

    #[test]
    fn forward_zero_params_outputs_final_bias() {
        let mut model = zero_model(3, 4);
        // set the dense bias to something recognizable
        let dense_bias = model.layers()[2].param_ids().start + 1;
        model.params_mut()[dense_bias]
            .data_mut()
            .copy_from_slice(&[7.0, 8.0, 9.0]);
        let seq = Tensor::new(vec![1, 3], vec![0.5, -0.5, 0.25]);
        let out = forward_sequence(&model, &seq).unwrap();
        assert_eq!(out.shape(), &[1, 3]);
        assert_eq!(out.data(), &[7.0, 8.0, 9.0]);
    }

    #[test]
    fn forward_empty_sequence_errors() {
        let model = zero_model(3, 4);
        let seq = Tensor::new(vec![0, 3], vec![]);
        assert!(forward_sequence(&model, &seq).is_err());
    }

    #[test]
    fn forward_is_causal() {
        // outputs at timesteps < T must not change when the sequence grows
        let model = Model::pretrain(5, 6, 42);
        let long = Tensor::new(vec![8, 5], (0..40).map(|i| (i as f64 * 0.37).sin()).collect());
        let short = Tensor::new(vec![4, 5], long.data()[..20].to_vec());
        let out_long = forward_sequence(&model, &long).unwrap();
        let out_short = forward_sequence(&model, &short).unwrap();
        for t in 0..4 {
            for (a, b) in out_long.row(t).iter().zip(out_short.row(t)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tape_and_eval_paths_agree() {
        let model = Model::pretrain(4, 5, 7);
        let seq = Tensor::new(vec![6, 4], (0..24).map(|i| (i as f64 * 0.61).cos()).collect());
        let eval_out = forward_sequence(&model, &seq).unwrap();

        let mut tape = Tape::new();
        let taped = bind(&mut tape, &model);
        let xs: Vec<NodeId> = (0..6)
            .map(|t| tape.constant(1, 4, seq.row(t).to_vec()))
            .collect();
        let outs = forward_sequence_tape(&mut tape, &taped, &model, &xs).unwrap();
        for (t, &o) in outs.iter().enumerate() {
            for (a, b) in tape.value(o).iter().zip(eval_out.row(t)) {
                assert!((a - b).abs() < 1e-12, "timestep {t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn predict_zero_head_returns_bias() {
        let pre = Model::pretrain(4, 5, 7);
        let mut fin = Model::finetune_from(&pre, 8);
        let head = fin.head_layer().unwrap().param_ids();
        let (w, b) = (head.start, head.start + 1);
        fin.params_mut()[w].data_mut().fill(0.0);
        fin.params_mut()[b]
            .data_mut()
            .copy_from_slice(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let seq = Tensor::new(vec![3, 4], vec![0.1; 12]);
        let pred = predict_label(&fin, &seq, Pooling::Last).unwrap();
        assert_eq!(pred, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn predict_deterministic() {
        let pre = Model::pretrain(4, 5, 7);
        let fin = Model::finetune_from(&pre, 8);
        let seq = Tensor::new(vec![5, 4], (0..20).map(|i| (i as f64).sin()).collect());
        let a = predict_label(&fin, &seq, Pooling::Last).unwrap();
        let b = predict_label(&fin, &seq, Pooling::Last).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn freeze_backbone_counts() {
        let pre = Model::pretrain(FEATURE_DIM, 256, 1);
        let fin = Model::finetune_from(&pre, 2);
        assert_eq!(fin.trainable_param_count(), 450);
        for layer in &fin.layers()[..3] {
            assert!(layer.frozen);
            for pid in layer.param_ids() {
                assert!(!fin.params()[pid].requires_grad());
            }
        }
        assert!(!fin.layers()[3].frozen);
    }

    #[test]
    fn recon_loss_values() {
        let pred = Tensor::new(vec![4, 2], vec![1.0; 8]);
        assert_eq!(
            masked_reconstruction_loss(&pred, &pred, 1, 2).unwrap(),
            0.0
        );
        let original = Tensor::new(vec![4, 2], vec![0.0; 8]);
        // constant offset of 1 -> MSE 1
        assert_eq!(
            masked_reconstruction_loss(&pred, &original, 0, 4).unwrap(),
            1.0
        );
        // hand-built: masked rows 1..3, residuals {1,2,3,4}
        let pred2 = Tensor::new(vec![3, 2], vec![9.0, 9.0, 1.0, 2.0, 3.0, 4.0]);
        let orig2 = Tensor::new(vec![3, 2], vec![0.0; 6]);
        let want = (1.0 + 4.0 + 9.0 + 16.0) / 4.0;
        assert_eq!(
            masked_reconstruction_loss(&pred2, &orig2, 1, 2).unwrap(),
            want
        );
    }

    #[test]
    fn recon_loss_contract_errors() {
        let pred = Tensor::new(vec![4, 2], vec![0.0; 8]);
        assert!(masked_reconstruction_loss(&pred, &pred, 0, 0).is_err());
        assert!(masked_reconstruction_loss(&pred, &pred, 3, 2).is_err());
    }

    #[test]
    fn label_loss_values() {
        let l = [1.0, 2.0, 0.5, 3.0, 0.0, 1.5];
        assert_eq!(label_loss(&l, &l).unwrap(), 0.0);
        let mut p = l;
        p[0] += 1.0;
        assert!((label_loss(&p, &l).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(label_loss(&p, &l).unwrap(), label_loss(&l, &p).unwrap());
    }
}
