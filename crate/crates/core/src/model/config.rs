use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    /// Position `t` attends to positions `<= t`.
    Causal,
    /// Every position attends to every position.
    Bidirectional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    pub n_labels: usize,
    pub attention_mode: AttentionMode,
    /// Rotary position encoding on queries and keys. Turning it off makes
    /// bidirectional attention permutation-equivariant; only tests do that.
    pub rope: bool,
    pub rope_base: f64,
    /// Score MNTP logits against the input embedding instead of a separate
    /// output matrix.
    pub tie_embeddings: bool,
    pub norm_eps: f64,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            d_model: 128,
            heads: 4,
            d_ff: 512,
            vocab_size: crate::tokenizer::DEFAULT_VOCAB_SIZE,
            max_seq: 256,
            n_labels: 31,
            attention_mode: AttentionMode::Bidirectional,
            rope: true,
            rope_base: 10_000.0,
            tie_embeddings: false,
            norm_eps: 1e-6,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.layers", self.layers),
            ("model.d_model", self.d_model),
            ("model.heads", self.heads),
            ("model.d_ff", self.d_ff),
            ("model.vocab_size", self.vocab_size),
            ("model.max_seq", self.max_seq),
            ("model.n_labels", self.n_labels),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(config_err(key, "must be positive"));
            }
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(config_err("model.heads", "must divide d_model"));
        }
        if !self.head_dim().is_multiple_of(2) {
            return Err(config_err("model.heads", "head dimension must be even for rotary encoding"));
        }
        if !(self.norm_eps > 0.0) {
            return Err(config_err("model.norm_eps", "must be positive"));
        }
        if !(self.rope_base > 1.0) {
            return Err(config_err("model.rope_base", "must exceed 1"));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(config_err("model.init_std", "must be finite and non-negative"));
        }
        Ok(())
    }
}
