use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moments for one flat parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One decoupled-weight-decay Adam update with bias correction.
pub fn adamw_step<F: Real>(
    params: &mut [F],
    grads: &[F],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::Shape(format!(
            "adamw: {} params, {} grads, {} state entries",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let step = state.step + 1;
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Training {
            step: step as usize,
            reason: format!("non-finite gradient at element {i}"),
        });
    }
    state.step = step;
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        let g = g.as_f64();
        let mut x = p.as_f64();
        if cfg.weight_decay != 0.0 {
            x *= 1.0 - lr * cfg.weight_decay;
        }
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        x -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        *p = F::of(x);
    }
    Ok(())
}

/// Learning rate as a function of the 0-based update index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// Linear ramp from 0 over `warmup` steps, then flat.
    WarmupConstant { peak: f64, warmup: usize },
    /// Linear ramp, then cosine decay to zero at `total`.
    WarmupCosine {
        peak: f64,
        warmup: usize,
        total: usize,
    },
}

impl Schedule {
    pub fn lr_at(&self, t: usize) -> f64 {
        match *self {
            Schedule::WarmupConstant { peak, warmup } => {
                if t < warmup {
                    peak * t as f64 / warmup as f64
                } else {
                    peak
                }
            }
            Schedule::WarmupCosine {
                peak,
                warmup,
                total,
            } => {
                if t < warmup {
                    peak * t as f64 / warmup as f64
                } else if total <= warmup {
                    peak
                } else {
                    let progress = ((t - warmup) as f64 / (total - warmup) as f64).min(1.0);
                    0.5 * peak * (1.0 + (std::f64::consts::PI * progress).cos())
                }
            }
        }
    }
}
