//! AdamW ascent with decoupled weight decay, global gradient-norm clipping,
//! and linear learning-rate warmup followed by a constant rate (no decay).

use crate::error::{Error, Result};
use crate::policy::{Gradients, ModelDims, OptimizerState, PolicyParams};

use super::TrainConfig;

#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    /// Learning rate actually applied at this step.
    pub lr: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// Warmup ramp: `lr * (g + 1) / warmup_steps` for `g < warmup_steps`, then
/// constant.
pub fn effective_lr(cfg: &TrainConfig, step: u64) -> f64 {
    if step < cfg.warmup_steps {
        cfg.learning_rate * (step + 1) as f64 / cfg.warmup_steps as f64
    } else {
        cfg.learning_rate
    }
}

/// Adam moment state. The update *ascends* the objective; weight decay is
/// decoupled and always pulls parameters toward zero.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Gradients,
    v: Gradients,
    count: u64,
}

impl AdamW {
    pub fn new(dims: ModelDims) -> Self {
        AdamW {
            m: Gradients::zeros(dims),
            v: Gradients::zeros(dims),
            count: 0,
        }
    }

    pub fn from_state(state: OptimizerState) -> Self {
        AdamW {
            m: state.m,
            v: state.v,
            count: state.count,
        }
    }

    pub fn state(&self) -> OptimizerState {
        OptimizerState {
            m: self.m.clone(),
            v: self.v.clone(),
            count: self.count,
        }
    }

    /// One ascent step. The whole update is staged and committed only if
    /// every new value is finite; on failure neither parameters nor moments
    /// change.
    pub fn step(
        &mut self,
        params: &mut PolicyParams,
        grad: &Gradients,
        cfg: &TrainConfig,
        step: u64,
    ) -> Result<StepInfo> {
        let grad_norm = grad.global_norm();
        if !grad_norm.is_finite() {
            return Err(Error::NonFiniteUpdate);
        }
        let mut clipped = grad.clone();
        if grad_norm > cfg.grad_clip_norm {
            clipped.scale(cfg.grad_clip_norm / grad_norm);
        }
        let lr = effective_lr(cfg, step);
        let t = self.count + 1;
        let bc1 = 1.0 - cfg.adam_beta1.powi(t as i32);
        let bc2 = 1.0 - cfg.adam_beta2.powi(t as i32);

        let mut new_params = params.clone();
        let mut new_m = self.m.clone();
        let mut new_v = self.v.clone();
        let mut finite = true;
        for block in 0..5 {
            let g = clipped.blocks()[block].1;
            let x = &mut new_params.blocks_mut()[block].1[..];
            let m = &mut new_m.blocks_mut()[block].1[..];
            let v = &mut new_v.blocks_mut()[block].1[..];
            for i in 0..g.len() {
                m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g[i];
                v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let next = x[i] + lr * m_hat / (v_hat.sqrt() + cfg.adam_epsilon)
                    - lr * cfg.weight_decay * x[i];
                finite &= next.is_finite();
                x[i] = next;
            }
        }
        if !finite {
            return Err(Error::NonFiniteUpdate);
        }
        *params = new_params;
        self.m = new_m;
        self.v = new_v;
        self.count = t;
        Ok(StepInfo { lr, grad_norm })
    }
}
