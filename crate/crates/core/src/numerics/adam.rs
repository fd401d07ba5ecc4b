//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::numerics::array::{NdArray, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global-norm gradient clipping; disabled when absent.
    pub grad_clip: Option<f64>,
    /// L2 penalty added to gradients; 0 disables.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            grad_clip: None,
            weight_decay: 0.0,
        }
    }
}

/// First/second moment state, one slot per parameter array.
#[derive(Debug, Clone)]
pub struct AdamState<F: Real> {
    pub config: AdamConfig,
    pub step: u64,
    first_moment: Vec<NdArray<F>>,
    second_moment: Vec<NdArray<F>>,
}

impl<F: Real> AdamState<F> {
    pub fn new(config: AdamConfig, param_shapes: &[&[usize]]) -> Self {
        AdamState {
            config,
            step: 0,
            first_moment: param_shapes.iter().map(|s| NdArray::zeros(s)).collect(),
            second_moment: param_shapes.iter().map(|s| NdArray::zeros(s)).collect(),
        }
    }

    pub fn moments(&self, slot: usize) -> (&NdArray<F>, &NdArray<F>) {
        (&self.first_moment[slot], &self.second_moment[slot])
    }
}

/// One Adam update over aligned parameter/gradient slices. Advances the step
/// count by one.
pub fn adam_step<F: Real>(
    params: &mut [NdArray<F>],
    grads: &[NdArray<F>],
    state: &mut AdamState<F>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(CoreError::shape(
            "adam_step",
            format!(
                "params {}, grads {}, state {}",
                params.len(),
                grads.len(),
                state.first_moment.len()
            ),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(CoreError::shape(
                "adam_step",
                format!("slot {i}: param {:?} vs grad {:?}", p.shape(), g.shape()),
            ));
        }
        if !g.probably_finite() {
            return Err(CoreError::NonFinite {
                node: i,
                op: "adam gradient".to_string(),
                index: g.first_non_finite().unwrap_or(0),
            });
        }
    }

    let cfg = state.config;
    let clip_scale = match cfg.grad_clip {
        Some(limit) => {
            let mut sq = 0.0f64;
            for g in grads {
                for &v in g.data() {
                    let v = v.as_f64();
                    sq += v * v;
                }
            }
            let norm = sq.sqrt();
            if norm > limit {
                limit / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };

    state.step += 1;
    let t = state.step as i32;
    let b1 = F::from_f64(cfg.beta1);
    let b2 = F::from_f64(cfg.beta2);
    let one = F::one();
    let lr = F::from_f64(cfg.learning_rate);
    let eps = F::from_f64(cfg.epsilon);
    let wd = F::from_f64(cfg.weight_decay);
    let cs = F::from_f64(clip_scale);
    let bc1 = one - b1.powi(t);
    let bc2 = one - b2.powi(t);

    for slot in 0..params.len() {
        let p = params[slot].data_mut();
        let g = grads[slot].data();
        let m = state.first_moment[slot].data_mut();
        let v = state.second_moment[slot].data_mut();
        for i in 0..p.len() {
            let mut gi = g[i] * cs;
            if cfg.weight_decay != 0.0 {
                gi += wd * p[i];
            }
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            p[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
