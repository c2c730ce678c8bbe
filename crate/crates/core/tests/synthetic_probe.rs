//! Learnability oracle for the synthetic generator: a ridge-regularized
//! linear probe on per-sequence mean features must beat the trivial
//! label-variance bound before the generator is trusted in experiments.

use mtsp_core::data::{generate_synthetic, SyntheticConfig};
use mtsp_core::{EMOTION_COUNT, FEATURE_DIM};

/// Solve `A x = b` in place by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let div = a[col][col];
        assert!(div.abs() > 1e-12, "singular system");
        for i in col + 1..n {
            let f = a[i][col] / div;
            for j in col..n {
                a[i][j] -= f * a[col][j];
            }
            b[i] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = b[i];
        for j in i + 1..n {
            acc -= a[i][j] * x[j];
        }
        x[i] = acc / a[i][i];
    }
    x
}

#[test]
fn linear_probe_on_mean_features_beats_label_std() {
    let ds = generate_synthetic(&SyntheticConfig {
        num_samples: 400,
        t_min: 60,
        t_max: 80,
        noise_scale: 0.4,
        seed: 17,
    })
    .unwrap();

    // design matrix: per-sequence mean features plus an intercept column
    let d = FEATURE_DIM + 1;
    let n = ds.len();
    let mut design = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for seq in ds.sequences() {
        let mut mean = vec![0.0; FEATURE_DIM];
        for t in 0..seq.len() {
            for (m, x) in mean.iter_mut().zip(seq.features.row(t)) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= seq.len() as f64);
        mean.push(1.0);
        design.push(mean);
        targets.push(ds.label_of(&seq.id).unwrap().intensities);
    }

    // normal equations with a small ridge term
    let mut xtx = vec![vec![0.0; d]; d];
    for row in &design {
        for i in 0..d {
            for j in 0..d {
                xtx[i][j] += row[i] * row[j];
            }
        }
    }
    for (i, row) in xtx.iter_mut().enumerate() {
        row[i] += 1e-6;
        let _ = i;
    }

    let split = n * 3 / 4;
    let mut total_abs_err = 0.0;
    let mut total_label_dev = 0.0;
    for e in 0..EMOTION_COUNT {
        let mut xty = vec![0.0; d];
        for (row, label) in design[..split].iter().zip(&targets[..split]) {
            for j in 0..d {
                xty[j] += row[j] * label[e];
            }
        }
        // refit XtX on the training rows only
        let mut xtx_train = vec![vec![0.0; d]; d];
        for row in &design[..split] {
            for i in 0..d {
                for j in 0..d {
                    xtx_train[i][j] += row[i] * row[j];
                }
            }
        }
        for i in 0..d {
            xtx_train[i][i] += 1e-6;
        }
        let w = solve(xtx_train, xty);

        let mean_label: f64 =
            targets[split..].iter().map(|l| l[e]).sum::<f64>() / (n - split) as f64;
        for (row, label) in design[split..].iter().zip(&targets[split..]) {
            let pred: f64 = row.iter().zip(&w).map(|(x, wi)| x * wi).sum();
            total_abs_err += (pred - label[e]).abs();
            total_label_dev += (label[e] - mean_label) * (label[e] - mean_label);
        }
    }
    let mae = total_abs_err / ((n - split) * EMOTION_COUNT) as f64;
    let label_std = (total_label_dev / ((n - split) * EMOTION_COUNT) as f64).sqrt();
    assert!(
        mae < label_std,
        "probe MAE {mae:.3} should beat label std {label_std:.3}"
    );
}
