//! Adam optimizer with bias correction.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::tape::{GradMap, ParamId};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamHyper {
            learning_rate,
            ..AdamHyper::default()
        }
    }
}

/// Per-parameter first/second moment accumulators plus the step counter.
/// Accumulators are allocated lazily and always mirror parameter shapes.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub hyper: AdamHyper,
    step: u64,
    first_moment: BTreeMap<ParamId, Vec<f64>>,
    second_moment: BTreeMap<ParamId, Vec<f64>>,
}

impl OptimizerState {
    pub fn new(hyper: AdamHyper) -> Self {
        OptimizerState {
            hyper,
            step: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update. `params` is the model's parameter arena indexed by
    /// `ParamId`; `grads` must hold a gradient of matching shape for every
    /// gradient-tracked parameter and nothing else. Frozen parameters
    /// (`requires_grad == false`) are left untouched.
    pub fn step(&mut self, params: &mut [Tensor], grads: &GradMap) -> Result<(), TensorError> {
        for (pid, g) in grads {
            let p = params.get(*pid).ok_or(TensorError::Contract {
                op: "optimizer_step",
                msg: "gradient for unknown parameter id",
            })?;
            if !p.requires_grad() {
                return Err(TensorError::Contract {
                    op: "optimizer_step",
                    msg: "gradient supplied for a frozen parameter",
                });
            }
            if g.len() != p.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "optimizer_step",
                    lhs: p.shape().to_vec(),
                    rhs: vec![g.len()],
                });
            }
        }
        for (pid, p) in params.iter().enumerate() {
            if p.requires_grad() && !grads.contains_key(&pid) {
                return Err(TensorError::Contract {
                    op: "optimizer_step",
                    msg: "missing gradient for a trainable parameter",
                });
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let h = self.hyper;
        let bias1 = 1.0 - libm::pow(h.beta1, t as f64);
        let bias2 = 1.0 - libm::pow(h.beta2, t as f64);

        for (pid, g) in grads {
            let p = &mut params[*pid];
            let m = self
                .first_moment
                .entry(*pid)
                .or_insert_with(|| vec![0.0; g.len()]);
            let v = self
                .second_moment
                .entry(*pid)
                .or_insert_with(|| vec![0.0; g.len()]);
            let data = p.data_mut();
            for i in 0..g.len() {
                m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
                v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                data[i] -= h.learning_rate * m_hat / (libm::sqrt(v_hat) + h.epsilon);
            }
        }
        Ok(())
    }
}
