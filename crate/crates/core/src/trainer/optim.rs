use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numcore::Parameters;

use super::OptimizerConfig;

/// First and second moments plus the step counter used for bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

pub fn global_norm<P: Parameters>(grads: &P) -> f64 {
    grads.tensors().iter().map(|(_, m)| m.sum_squares()).sum::<f64>().sqrt()
}

pub fn scale_all<P: Parameters>(grads: &mut P, s: f64) {
    for (_, m) in grads.tensors_mut() {
        m.scale(s);
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<P: Parameters>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        scale_all(grads, max_norm / norm);
    }
    norm
}

/// One AdamW update with decoupled weight decay. Norm gains are not decayed.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    lr: f64,
    cfg: &OptimizerConfig,
) -> Result<()> {
    let g = grads.tensors();
    for (name, m) in &g {
        if !m.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    state.t += 1;
    let (b1, b2) = cfg.betas;
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let ps = params.tensors_mut();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    if ps.len() != g.len() || ps.len() != ms.len() {
        return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
    }
    for (((name, p), (_, gm)), ((_, m), (_, v))) in ps.into_iter().zip(g).zip(ms.into_iter().zip(vs)) {
        if p.shape() != gm.shape() || p.shape() != m.shape() {
            return Err(Error::Shape {
                op: "adamw_step",
                left: p.shape(),
                right: gm.shape(),
            });
        }
        let wd = if ModelParams::is_norm_gain(&name) { 0.0 } else { cfg.weight_decay };
        let p = p.data_mut();
        let (m, v) = (m.data_mut(), v.data_mut());
        for (i, &gi) in gm.data().iter().enumerate() {
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] -= lr * (mhat / (vhat.sqrt() + cfg.eps) + wd * p[i]);
        }
    }
    Ok(())
}
