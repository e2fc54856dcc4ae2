//! Pretraining and fine-tuning objectives, AdamW with warmup plus cosine
//! decay, and the curriculum-driven training loops.

mod objective;
mod optim;
mod run;
mod schedule;

pub use objective::{
    finetune_accumulate, finetune_step, make_mntp_batch, mntp_accumulate, mntp_step, MntpBatch, MASK_RETRIES,
};
pub use optim::{adamw_step, clip_grad_norm, global_norm, scale_all, AdamState};
pub use run::{
    build_pools, finetune, finetune_checkpoint, finetune_init, finetune_until, head_rng, init_model, init_rng, pretrain, pretrain_until, step_rng,
    FinetuneSettings, LogRecord, Pools, PretrainSettings, TrainState,
};
pub use schedule::{lr_at, warmup_steps};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub peak_lr: f64,
    pub final_lr: f64,
    pub warmup_frac: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    /// Sequences per update, reached by gradient accumulation.
    pub batch_size: usize,
    /// Global gradient-norm ceiling.
    pub grad_clip: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            peak_lr: 2e-4,
            final_lr: 1e-6,
            warmup_frac: 0.10,
            betas: (0.9, 0.95),
            eps: 1e-8,
            weight_decay: 0.01,
            batch_size: 64,
            grad_clip: 1.0,
        }
    }
}

impl OptimizerConfig {
    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(config_err("optimizer.peak_lr", "must be positive"));
        }
        if !(self.final_lr > 0.0 && self.final_lr < self.peak_lr) {
            return Err(config_err("optimizer.final_lr", "need 0 < final_lr < peak_lr"));
        }
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return Err(config_err("optimizer.warmup_frac", "must lie in (0, 1)"));
        }
        for (key, b) in [("optimizer.betas.0", self.betas.0), ("optimizer.betas.1", self.betas.1)] {
            if !(0.0..1.0).contains(&b) {
                return Err(config_err(key, "must lie in [0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            return Err(config_err("optimizer.eps", "must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(config_err("optimizer.weight_decay", "must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(config_err("optimizer.batch_size", "must be positive"));
        }
        if !(self.grad_clip > 0.0) {
            return Err(config_err("optimizer.grad_clip", "must be positive"));
        }
        Ok(())
    }
}
