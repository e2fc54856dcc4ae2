use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

pub const DEFAULT_ALPHA: f64 = 0.3;

/// Temperature sampling over languages: `p_l ∝ n_l^alpha`.
///
/// `alpha = 1` reproduces raw proportions; smaller values flatten the
/// distribution and oversample low-resource languages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub counts: BTreeMap<String, u64>,
    pub alpha: f64,
}

impl SamplerConfig {
    pub fn new(counts: BTreeMap<String, u64>, alpha: f64) -> Result<Self> {
        let cfg = Self { counts, alpha };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(config_err("sampler.alpha", "must lie in (0, 1]"));
        }
        if self.counts.is_empty() {
            return Err(config_err("sampler.counts", "no languages"));
        }
        if let Some((l, _)) = self.counts.iter().find(|(_, &n)| n == 0) {
            return Err(config_err(format!("sampler.counts.{l}"), "count must be positive"));
        }
        Ok(())
    }

    /// Analytic probabilities in language order.
    pub fn probabilities(&self) -> Vec<(String, f64)> {
        let weights: Vec<f64> = self.counts.values().map(|&n| (n as f64).powf(self.alpha)).collect();
        let total: f64 = weights.iter().sum();
        self.counts
            .keys()
            .zip(weights)
            .map(|(l, w)| (l.clone(), w / total))
            .collect()
    }
}

/// Reusable sampler built from a [`SamplerConfig`].
#[derive(Debug, Clone)]
pub struct LanguageSampler {
    langs: Vec<String>,
    dist: WeightedIndex<f64>,
}

impl LanguageSampler {
    pub fn new(cfg: &SamplerConfig) -> Result<Self> {
        cfg.validate()?;
        let probs = cfg.probabilities();
        let dist = WeightedIndex::new(probs.iter().map(|(_, p)| *p))
            .map_err(|e| config_err("sampler", e.to_string()))?;
        Ok(Self {
            langs: probs.into_iter().map(|(l, _)| l).collect(),
            dist,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &str {
        &self.langs[self.dist.sample(rng)]
    }
}

pub fn sample_language<R: Rng + ?Sized>(cfg: &SamplerConfig, rng: &mut R) -> Result<String> {
    Ok(LanguageSampler::new(cfg)?.sample(rng).to_string())
}
