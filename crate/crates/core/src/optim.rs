//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.lr > 0.0 && self.eps > 0.0 && in_unit(self.beta1) && in_unit(self.beta2)) {
            return Err(Error::Config(format!(
                "optimizer needs lr > 0, eps > 0 and betas in (0, 1), got {self:?}"
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("optimizer weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// First and second moments per parameter, plus the shared step count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamWState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

/// One AdamW update of every parameter.
///
/// The moments are created on the first call. Nothing is modified if any
/// gradient is non-finite or shapes disagree.
pub fn adamw_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamWState,
    cfg: &AdamWConfig,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Usage(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::dim(format!(
                "parameter {i} has shape {:?}, gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter {i}")));
        }
    }
    if state.t == 0 {
        state.m = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
        state.v = state.m.clone();
    } else if state.m.len() != params.len() {
        return Err(Error::Usage(
            "optimizer state belongs to a different parameter set".into(),
        ));
    }

    state.t += 1;
    let t = state.t as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    for (k, param) in params.iter_mut().enumerate() {
        let g = grads[k].data();
        let m = state.m[k].data_mut();
        for (mi, &gi) in m.iter_mut().zip(g) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
        }
        let v = state.v[k].data_mut();
        for (vi, &gi) in v.iter_mut().zip(g) {
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
        }
        let (m, v) = (state.m[k].data(), state.v[k].data());
        for (i, theta) in param.data_mut().iter_mut().enumerate() {
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            *theta -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * *theta);
        }
    }
    Ok(())
}
