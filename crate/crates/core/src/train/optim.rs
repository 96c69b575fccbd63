use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::model::ModelParams;

/// Optimization recipe for one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    /// multiplicative learning-rate factor applied once per epoch
    pub lr_decay: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            lr_decay: 0.8,
            clip_norm: 5.0,
            batch_size: 32,
            epochs: 20,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::Config(msg.to_string()));
        if self.lr.is_nan() || self.lr <= 0.0 {
            return bad("lr must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return bad("clip_norm must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || self.eps.is_nan()
            || self.eps <= 0.0
        {
            return bad("adam constants out of range");
        }
        Ok(())
    }

    /// `lr * lr_decay^epoch`, epochs counted from 0.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi(epoch as i32)
    }
}

/// Global L2 norm over every gradient tensor.
pub fn global_norm(grads: &ModelParams) -> f64 {
    grads.global_norm()
}

/// Rescale `grads` in place so their global norm is at most `max_norm`.
/// Returns the norms before and after.
pub fn clip_gradients(grads: &mut ModelParams, max_norm: f64) -> (f64, f64) {
    let norm = grads.global_norm();
    if norm > max_norm {
        let factor = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            g.scale_in_place(factor);
        }
        (norm, grads.global_norm())
    } else {
        (norm, norm)
    }
}

/// Adam moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update on flat slices. `t` is the step number
/// after incrementing (first step is 1).
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    (beta1, beta2, eps): (f64, f64, f64),
) {
    let c1 = 1.0 - beta1.powi(t as i32);
    let c2 = 1.0 - beta2.powi(t as i32);
    for i in 0..p.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Apply one Adam step to every parameter. Entries of `frozen` are skipped
/// but the step counter still advances once.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    lr: f64,
    config: &TrainConfig,
    frozen: &[crate::model::ParamId],
) -> Result<(), TrainError> {
    for ((id, p), (_, g)) in params.iter().zip(grads.iter()) {
        if p.shape() != g.shape() || state.m[id].shape() != p.shape() {
            return Err(TrainError::Config(format!(
                "gradient shape {:?} does not match parameter {} {:?}",
                g.shape(),
                id.name(),
                p.shape()
            )));
        }
    }
    state.t += 1;
    let constants = (config.beta1, config.beta2, config.eps);
    for (id, p) in params.iter_mut() {
        if frozen.contains(&id) {
            continue;
        }
        let (m, v) = (&mut state.m[id], &mut state.v[id]);
        adam_update(
            p.data_mut(),
            grads[id].data(),
            m.data_mut(),
            v.data_mut(),
            state.t,
            lr,
            constants,
        );
    }
    Ok(())
}
