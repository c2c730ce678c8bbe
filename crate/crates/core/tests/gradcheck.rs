//! Analytic gradients vs central finite differences, per op and full model.

use mtsp_core::gradcheck::{finite_difference_gradient, max_relative_error, DEFAULT_EPSILON};
use mtsp_core::nn::{self, Model, Pooling, ReconLossMode};
use mtsp_core::tape::Tape;
use mtsp_core::tensor::Tensor;
use mtsp_core::EMOTION_COUNT;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const REL_TOL: f64 = 1e-4;

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(vec![rows, cols], data).with_grad(true)
}

/// Run an op-specific graph: returns (analytic grads per param, fd grads).
fn op_case<B>(params: Vec<Tensor>, builder: B) -> (Vec<Vec<f64>>, Vec<Vec<f64>>)
where
    B: Fn(&mut Tape, &[mtsp_core::NodeId]) -> mtsp_core::NodeId,
{
    let loss_of = |ps: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let leaves: Vec<_> = ps
            .iter()
            .enumerate()
            .map(|(i, p)| tape.leaf(p, Some(i)))
            .collect();
        let loss = builder(&mut tape, &leaves);
        tape.value(loss)[0]
    };

    let mut tape = Tape::new();
    let leaves: Vec<_> = params
        .iter()
        .enumerate()
        .map(|(i, p)| tape.leaf(p, Some(i)))
        .collect();
    let loss = builder(&mut tape, &leaves);
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = (0..params.len())
        .map(|i| grads.get(&i).cloned().unwrap_or_default())
        .collect();

    let mut params = params;
    let fd = finite_difference_gradient(|ps| Ok(loss_of(ps)), &mut params, DEFAULT_EPSILON)
        .unwrap();
    (analytic, fd)
}

fn assert_close(analytic: &[Vec<f64>], fd: &[Vec<f64>], what: &str) {
    for (a, n) in analytic.iter().zip(fd) {
        let err = max_relative_error(a, n);
        assert!(err < REL_TOL, "{what}: max relative error {err:.3e}");
    }
}

#[test]
fn elementary_ops_match_finite_differences() {
    // 100 random trials spread over the op set
    for trial in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let m = rng.random_range(1..4);
        let k = rng.random_range(1..4);
        let n = rng.random_range(1..4);

        match trial % 5 {
            0 => {
                let params = vec![random_tensor(&mut rng, m, k), random_tensor(&mut rng, k, n)];
                let (a, f) = op_case(params, |t, l| {
                    let p = t.matmul(l[0], l[1]).unwrap();
                    t.sum(p)
                });
                assert_close(&a, &f, "matmul");
            }
            1 => {
                let params = vec![random_tensor(&mut rng, m, n), random_tensor(&mut rng, m, n)];
                let (a, f) = op_case(params, |t, l| {
                    let p = t.mul(l[0], l[1]).unwrap();
                    let q = t.sub(p, l[1]).unwrap();
                    let r = t.add(q, l[0]).unwrap();
                    let sq = t.mul(r, r).unwrap();
                    t.sum(sq)
                });
                assert_close(&a, &f, "elementwise add/sub/mul");
            }
            2 => {
                let params = vec![random_tensor(&mut rng, m, n)];
                let (a, f) = op_case(params, |t, l| {
                    let s = t.sigmoid(l[0]);
                    t.sum(s)
                });
                assert_close(&a, &f, "sigmoid");
            }
            3 => {
                let params = vec![random_tensor(&mut rng, m, n)];
                let (a, f) = op_case(params, |t, l| {
                    let s = t.tanh(l[0]);
                    let sq = t.mul(s, s).unwrap();
                    t.sum(sq)
                });
                assert_close(&a, &f, "tanh");
            }
            _ => {
                let params = vec![random_tensor(&mut rng, m, n), random_tensor(&mut rng, 1, n)];
                let (a, f) = op_case(params, |t, l| {
                    let s = t.add_row(l[0], l[1]).unwrap();
                    let sg = t.sigmoid(s);
                    t.sum(sg)
                });
                assert_close(&a, &f, "add_row");
            }
        }
    }
}

#[test]
fn scalar_broadcast_ops_match_finite_differences() {
    for trial in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + trial);
        let params = vec![random_tensor(&mut rng, 1, 1), random_tensor(&mut rng, 2, 3)];
        let (a, f) = op_case(params, |t, l| {
            let d = t.sub(l[0], l[1]).unwrap();
            let p = t.mul(d, l[0]).unwrap();
            let s = t.add(p, l[1]).unwrap();
            let sq = t.mul(s, s).unwrap();
            t.sum(sq)
        });
        assert_close(&a, &f, "scalar broadcast");
    }
}

fn small_random_seq(rng: &mut ChaCha8Rng, t_len: usize, dim: usize) -> Tensor {
    let data: Vec<f64> = (0..t_len * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(vec![t_len, dim], data)
}

/// Loss of the full pretrain model on one masked sequence, via the tape.
fn pretrain_loss(model: &Model, masked: &Tensor, original: &Tensor, start: usize, len: usize) -> f64 {
    let mut tape = Tape::new();
    let taped = nn::bind(&mut tape, model);
    let dim = masked.cols();
    let xs: Vec<_> = (0..masked.rows())
        .map(|t| tape.constant(1, dim, masked.row(t).to_vec()))
        .collect();
    let outs = nn::forward_sequence_tape(&mut tape, &taped, model, &xs).unwrap();
    let targets: Vec<Tensor> = (0..original.rows())
        .map(|t| Tensor::new(vec![1, dim], original.row(t).to_vec()))
        .collect();
    let loss = nn::masked_recon_loss_tape(
        &mut tape,
        &outs,
        &targets,
        &[start],
        len,
        ReconLossMode::Masked,
    )
    .unwrap();
    tape.value(loss)[0]
}

fn pretrain_grads(
    model: &Model,
    masked: &Tensor,
    original: &Tensor,
    start: usize,
    len: usize,
) -> mtsp_core::GradMap {
    let mut tape = Tape::new();
    let taped = nn::bind(&mut tape, model);
    let dim = masked.cols();
    let xs: Vec<_> = (0..masked.rows())
        .map(|t| tape.constant(1, dim, masked.row(t).to_vec()))
        .collect();
    let outs = nn::forward_sequence_tape(&mut tape, &taped, model, &xs).unwrap();
    let targets: Vec<Tensor> = (0..original.rows())
        .map(|t| Tensor::new(vec![1, dim], original.row(t).to_vec()))
        .collect();
    let loss = nn::masked_recon_loss_tape(
        &mut tape,
        &outs,
        &targets,
        &[start],
        len,
        ReconLossMode::Masked,
    )
    .unwrap();
    tape.backward(loss).unwrap()
}

#[test]
fn gru_cell_gradient_matches_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
        let model = Model::pretrain(5, 7, 3000 + seed);
        let x = small_random_seq(&mut rng, 1, 5);
        let h_prev_data: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();

        let loss_of = |m: &Model| -> f64 {
            let mut tape = Tape::new();
            let taped = nn::bind(&mut tape, m);
            let xn = tape.constant(1, 5, x.data().to_vec());
            let hn = tape.constant(1, 7, h_prev_data.clone());
            let h = nn::gru_cell_step(&mut tape, &taped, m, 0, xn, hn).unwrap();
            let s = tape.sum(h);
            tape.value(s)[0]
        };

        let mut tape = Tape::new();
        let taped = nn::bind(&mut tape, &model);
        let xn = tape.constant(1, 5, x.data().to_vec());
        let hn = tape.constant(1, 7, h_prev_data.clone());
        let h = nn::gru_cell_step(&mut tape, &taped, &model, 0, xn, hn).unwrap();
        let s = tape.sum(h);
        let grads = tape.backward(s).unwrap();

        let mut params: Vec<Tensor> = model.params().to_vec();
        let fd = finite_difference_gradient(
            |ps| {
                let mut m = model.clone();
                for (dst, src) in m.params_mut().iter_mut().zip(ps) {
                    dst.data_mut().copy_from_slice(src.data());
                }
                Ok(loss_of(&m))
            },
            &mut params,
            DEFAULT_EPSILON,
        )
        .unwrap();

        // only the first GRU layer's params are reachable
        for pid in model.layers()[0].param_ids() {
            let a = &grads[&pid];
            let err = max_relative_error(a, &fd[pid]);
            assert!(err < REL_TOL, "seed {seed} param {pid}: rel err {err:.3e}");
        }
    }
}

#[test]
fn full_pretrain_model_gradient_matches_finite_differences() {
    // toy dims per the contract: input 5, hidden 7, short sequences
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + seed);
        let model = Model::pretrain(5, 7, 4000 + seed);
        let t_len = 4;
        let original = small_random_seq(&mut rng, t_len, 5);
        let start = rng.random_range(0..=t_len - 2);
        let len = 2;
        let mut masked = original.clone();
        let cols = masked.cols();
        masked.data_mut()[start * cols..(start + len) * cols].fill(-30.0);

        let grads = pretrain_grads(&model, &masked, &original, start, len);

        let mut params: Vec<Tensor> = model.params().to_vec();
        let fd = finite_difference_gradient(
            |ps| {
                let mut m = model.clone();
                for (dst, src) in m.params_mut().iter_mut().zip(ps) {
                    dst.data_mut().copy_from_slice(src.data());
                }
                Ok(pretrain_loss(&m, &masked, &original, start, len))
            },
            &mut params,
            DEFAULT_EPSILON,
        )
        .unwrap();

        for (pid, fd_g) in fd.iter().enumerate() {
            let a = grads.get(&pid).cloned().unwrap_or_else(|| vec![0.0; fd_g.len()]);
            let err = max_relative_error(&a, fd_g);
            assert!(err < REL_TOL, "seed {seed} param {pid}: rel err {err:.3e}");
        }
    }
}

#[test]
fn head_loss_gradient_matches_and_backbone_gets_none() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
        let pre = Model::pretrain(5, 7, 5000 + seed);
        let model = Model::finetune_from(&pre, 6000 + seed);
        let t_len = 4;
        let seq = small_random_seq(&mut rng, t_len, 5);
        let mut label = [0.0; EMOTION_COUNT];
        for v in &mut label {
            *v = rng.random_range(0.0..3.0);
        }
        let labels = Tensor::new(vec![1, EMOTION_COUNT], label.to_vec());

        let loss_of = |m: &Model| -> f64 {
            let mut tape = Tape::new();
            let taped = nn::bind(&mut tape, m);
            let xs: Vec<_> = (0..t_len)
                .map(|t| tape.constant(1, 5, seq.row(t).to_vec()))
                .collect();
            let pred = nn::predict_tape(&mut tape, &taped, m, &xs, Pooling::Last).unwrap();
            let loss = nn::label_loss_tape(&mut tape, pred, &labels).unwrap();
            tape.value(loss)[0]
        };

        let mut tape = Tape::new();
        let taped = nn::bind(&mut tape, &model);
        let xs: Vec<_> = (0..t_len)
            .map(|t| tape.constant(1, 5, seq.row(t).to_vec()))
            .collect();
        let pred = nn::predict_tape(&mut tape, &taped, &model, &xs, Pooling::Last).unwrap();
        let loss = nn::label_loss_tape(&mut tape, pred, &labels).unwrap();
        let grads = tape.backward(loss).unwrap();

        // frozen backbone must be absent from the gradient map
        for layer in &model.layers()[..3] {
            for pid in layer.param_ids() {
                assert!(!grads.contains_key(&pid));
            }
        }

        let head_ids = model.head_layer().unwrap().param_ids();
        let mut params: Vec<Tensor> = model.params().to_vec();
        let fd = finite_difference_gradient(
            |ps| {
                let mut m = model.clone();
                for (dst, src) in m.params_mut().iter_mut().zip(ps) {
                    dst.data_mut().copy_from_slice(src.data());
                }
                Ok(loss_of(&m))
            },
            &mut params,
            DEFAULT_EPSILON,
        )
        .unwrap();
        for pid in head_ids {
            let err = max_relative_error(&grads[&pid], &fd[pid]);
            assert!(err < REL_TOL, "seed {seed} head param {pid}: rel err {err:.3e}");
        }
    }
}
