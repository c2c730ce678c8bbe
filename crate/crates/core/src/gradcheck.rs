//! Central finite differences, the independent oracle for the autodiff engine.

use alloc::vec::Vec;

use crate::tensor::{Tensor, TensorError};

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Central finite-difference gradient of a scalar function of `params`:
/// `(f(p + ε eᵢ) − f(p − ε eᵢ)) / 2ε` per coordinate.
///
/// `f` must be deterministic. Returns one gradient vector per parameter
/// tensor, in slice order.
pub fn finite_difference_gradient<F>(
    mut f: F,
    params: &mut [Tensor],
    epsilon: f64,
) -> Result<Vec<Vec<f64>>, TensorError>
where
    F: FnMut(&[Tensor]) -> Result<f64, TensorError>,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let mut grads = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let len = params[pi].len();
        let mut g = Vec::with_capacity(len);
        for ci in 0..len {
            let orig = params[pi].data()[ci];
            params[pi].data_mut()[ci] = orig + epsilon;
            let plus = f(params)?;
            params[pi].data_mut()[ci] = orig - epsilon;
            let minus = f(params)?;
            params[pi].data_mut()[ci] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(TensorError::NonFinite {
                    op: "finite_difference_gradient",
                });
            }
            g.push((plus - minus) / (2.0 * epsilon));
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Relative error between two gradient values, with a small floor so that
/// near-zero pairs are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = libm::fabs(analytic).max(libm::fabs(numeric)) + 1e-6;
    libm::fabs(analytic - numeric) / scale
}

/// Largest relative error across two gradient vectors.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max)
}
