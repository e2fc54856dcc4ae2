//! Run configuration shared by every subcommand, read from JSON or TOML.
//!
//! ```toml
//! seed = 7
//!
//! [model]
//! layers = 2
//! d_model = 32
//!
//! [curriculum]
//! total_steps = 100
//! foundation = ["en"]
//! mid = ["hi", "bn"]
//! low = ["sat"]
//!
//! [pretrain.optimizer]
//! batch_size = 8
//! peak_lr = 3e-3
//!
//! [finetune]
//! steps = 200
//! ```

use std::path::Path;

use cadence_core::datapipe::synth::SynthLanguage;
use cadence_core::datapipe::{CurriculumPlan, Phase, UnregisteredPolicy, FOUNDATION_LANGS, LOW_LANGS, MID_HIGH_LANGS};
use cadence_core::{Error, ModelConfig, OptimizerConfig, ZeroSupport};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Raw model section; `vocab_size` and `n_labels` follow the vocabulary
    /// and registry unless set explicitly.
    pub model: Option<serde_json::Value>,
    pub tokenizer: TokenizerSection,
    pub prepare: PrepareSection,
    pub curriculum: CurriculumSection,
    pub pretrain: PretrainSection,
    pub finetune: FinetuneSection,
    pub eval: EvalSection,
    pub synth: SynthSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerSection {
    pub vocab_size: usize,
}

impl Default for TokenizerSection {
    fn default() -> Self {
        Self {
            vocab_size: cadence_core::tokenizer::DEFAULT_VOCAB_SIZE,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareSection {
    /// Window length; defaults to the model's `max_seq`.
    pub max_len: Option<usize>,
    pub policy: UnregisteredPolicy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumSection {
    pub total_steps: usize,
    pub foundation: Vec<String>,
    pub mid: Vec<String>,
    pub low: Vec<String>,
    /// Explicit phases; replaces the staged plan when present.
    pub phases: Option<Vec<Phase>>,
}

impl Default for CurriculumSection {
    fn default() -> Self {
        let own = |ls: &[&str]| ls.iter().map(|s| s.to_string()).collect();
        Self {
            total_steps: 1000,
            foundation: own(&FOUNDATION_LANGS),
            mid: own(&MID_HIGH_LANGS),
            low: own(&LOW_LANGS),
            phases: None,
        }
    }
}

impl CurriculumSection {
    pub fn plan(&self) -> Result<CurriculumPlan, Error> {
        match &self.phases {
            Some(phases) => {
                let plan = CurriculumPlan { phases: phases.clone() };
                plan.validate()?;
                Ok(plan)
            }
            None => CurriculumPlan::staged(self.total_steps, &self.foundation, &self.mid, &self.low),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub optimizer: OptimizerConfig,
    pub alpha: f64,
}

impl Default for PretrainSection {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            alpha: cadence_core::datapipe::DEFAULT_ALPHA,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub optimizer: OptimizerConfig,
    pub steps: usize,
    pub alpha: f64,
    pub head_init_scale: f64,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        let d = cadence_core::FinetuneSettings::default();
        Self {
            optimizer: d.optimizer,
            steps: d.steps,
            alpha: d.alpha,
            head_init_scale: d.head_init_scale,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub zero_support: ZeroSupport,
    pub per_lang: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    /// Language specs; the built-in eight when absent.
    pub languages: Option<Vec<SynthLanguage>>,
}

fn config_error(key: &str, reason: impl ToString) -> Error {
    Error::Config {
        key: key.into(),
        reason: reason.to_string(),
    }
}

impl RunConfig {
    /// Reads a `.toml` file as TOML and anything else as JSON.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        let parsed = if is_toml {
            toml::from_str(&text).map_err(|e| config_error("config", e.message()))
        } else {
            serde_json::from_str(&text).map_err(|e| config_error("config", e))
        };
        Ok(parsed?)
    }

    /// Builds the model config, filling vocabulary and label counts that the
    /// file leaves unset and rejecting explicit values that disagree.
    pub fn model_config(&self, vocab_size: usize, n_labels: usize) -> Result<ModelConfig, Error> {
        let raw = self.model.clone().unwrap_or_else(|| serde_json::json!({}));
        let explicit = |k: &str| raw.get(k).and_then(serde_json::Value::as_u64).map(|v| v as usize);
        if let Some(v) = explicit("vocab_size") {
            if v != vocab_size {
                return Err(config_error(
                    "model.vocab_size",
                    format!("{v} disagrees with the vocabulary size {vocab_size}"),
                ));
            }
        }
        if let Some(n) = explicit("n_labels") {
            if n != n_labels {
                return Err(config_error(
                    "model.n_labels",
                    format!("{n} disagrees with the registry ({n_labels} labels)"),
                ));
            }
        }
        let mut cfg: ModelConfig = serde_json::from_value(raw).map_err(|e| config_error("model", e))?;
        cfg.vocab_size = vocab_size;
        cfg.n_labels = n_labels;
        cfg.validate()?;
        Ok(cfg)
    }
}
