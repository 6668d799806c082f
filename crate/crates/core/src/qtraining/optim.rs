use serde::{Deserialize, Serialize};

use crate::engine::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

/// First and second moments, shaped like the weights they track.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(weights: &[&Tensor]) -> Self {
        let zeros: Vec<Vec<f64>> = weights.iter().map(|w| vec![0.0; w.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    weights: &mut [&mut Tensor],
    grads: &[&Tensor],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::Config(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    if weights.len() != grads.len() || weights.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam got {} weights, {} grads, {} moment slots",
            weights.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - cfg.beta1.powf(t);
    let c2 = 1.0 - cfg.beta2.powf(t);
    for (i, (w, g)) in weights.iter_mut().zip(grads).enumerate() {
        if w.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "adam weight {:?} vs grad {:?}",
                w.shape(),
                g.shape()
            )));
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, (wv, gv)) in w.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gv;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gv * gv;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *wv -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Inverse-square-root schedule with linear warmup:
/// `base · min(step^-½, step · warmup^-³⁄₂)`.
pub fn lr_schedule(step: u64, warmup: u64, base: f64) -> Result<f64> {
    if step == 0 || warmup == 0 {
        return Err(Error::Config(format!(
            "lr schedule needs step, warmup ≥ 1 (got {step}, {warmup})"
        )));
    }
    let (s, w) = (step as f64, warmup as f64);
    Ok(base * s.powf(-0.5).min(s * w.powf(-1.5)))
}
