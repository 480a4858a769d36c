use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NetworkParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            eps: 1e-8,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.weight_decay >= 0.0
            && self.eps > 0.0;
        if !ok {
            return Err(Error::Config(format!(
                "invalid optimizer settings {self:?}"
            )));
        }
        Ok(())
    }
}

/// Moment estimates for every trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub m: NetworkParams,
    pub v: NetworkParams,
    pub step: u64,
}

impl AdamWState {
    pub fn new(params: &NetworkParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One decoupled-weight-decay Adam update, in place:
/// `θ ← θ − α·(m̂/(√v̂ + ε) + λθ)`.
pub fn adamw_step(
    params: &mut NetworkParams,
    grads: &NetworkParams,
    state: &mut AdamWState,
    cfg: &AdamWConfig,
) -> Result<()> {
    if !grads.all_finite() {
        return Err(Error::Divergence("non-finite gradient".into()));
    }
    let g: Vec<_> = grads.named_tensors();
    let shapes_ok = {
        let p = params.named_tensors();
        p.len() == g.len() && p.iter().zip(&g).all(|(a, b)| a.2.shape() == b.2.shape())
    };
    if !shapes_ok {
        return Err(Error::shape(
            "adamw_step",
            "gradients shaped like parameters",
            "mismatch",
        ));
    }
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for ((((_, theta), (_, m)), (_, v)), (_, _, grad)) in
        params.tensors_mut().into_iter().zip(ms).zip(vs).zip(g)
    {
        let it = theta
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(grad.data());
        for (((th, m), v), &gr) in it {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * gr;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * gr * gr;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *th -= cfg.learning_rate * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * *th);
        }
    }
    Ok(())
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut NetworkParams, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm.is_finite() {
        grads.scale(max_norm / norm);
    }
    norm
}
