use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::engine::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHP {
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_ratio: f64,
    pub total_steps: usize,
    pub adamw: AdamW,
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainHP {
    /// Desk scale. At 8B scale the reference run used batch 64 and lr 1e-6
    /// with the same schedule shape and warmup; that lr barely moves a model
    /// this small.
    fn default() -> Self {
        Self {
            batch_size: 32,
            peak_lr: 3e-4,
            warmup_ratio: 0.1,
            total_steps: 2000,
            adamw: AdamW::default(),
            grad_clip: Some(1.0),
            seed: 0,
        }
    }
}

impl TrainHP {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidHp(m.to_string()));
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return bad("warmup_ratio must lie in [0, 1)");
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return bad("peak_lr must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad("grad_clip must be positive");
            }
        }
        let a = &self.adamw;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) || a.weight_decay < 0.0 {
            return bad("adamw coefficients out of range");
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> usize {
        (self.warmup_ratio * self.total_steps as f64).round() as usize
    }
}

/// Linear warmup from 0 to `peak_lr`, then cosine decay to 0 at `total_steps`.
pub fn lr_at(step: usize, hp: &TrainHP) -> f64 {
    let total = hp.total_steps;
    let warm = hp.warmup_steps();
    if step >= total {
        return 0.0;
    }
    if step < warm {
        return hp.peak_lr * step as f64 / warm as f64;
    }
    let progress = (step - warm) as f64 / (total - warm) as f64;
    hp.peak_lr * 0.5 * (1.0 + (PI * progress).cos())
}

/// Moments for every parameter tensor plus the update counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }
}

/// One AdamW update in place. Weight decay is decoupled and applied only to
/// tensors whose `decay` flag is set. Non-finite gradients leave params and
/// state untouched.
pub fn adamw_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    decay: &[bool],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamW,
) -> Result<(), TrainError> {
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(TrainError::NonFiniteGrad);
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let wd = if decay[i] { cfg.weight_decay } else { 0.0 };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, x) in p.data.iter_mut().enumerate() {
            let g = grads[i].data[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *x -= lr * wd * *x;
            *x -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Scales `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: Option<f64>) -> f64 {
    let norm = grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt();
    if let Some(max) = max_norm {
        if norm > max {
            let s = max / norm;
            for g in grads.iter_mut() {
                g.data.iter_mut().for_each(|x| *x *= s);
            }
        }
    }
    norm
}
