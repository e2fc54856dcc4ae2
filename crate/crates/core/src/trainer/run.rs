use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datapipe::{CorpusRecord, CurriculumPlan, LabelRegistry, LanguageSampler, SamplerConfig, TaggedSequence, DEFAULT_ALPHA};
use crate::error::{Error, Result};
use crate::model::checkpoint::{assign_tensors, decode_container, encode_container, skeleton, DType};
use crate::model::{Checkpoint, CheckpointMeta, Model, ModelConfig, ModelParams, Stage};
use crate::numcore::{Matrix, Parameters};
use crate::tokenizer::{encode, Vocab};

use super::objective::{finetune_accumulate, make_mntp_batch, mntp_accumulate};
use super::optim::{adamw_step, clip_grad_norm, scale_all, AdamState};
use super::schedule::lr_at;
use super::OptimizerConfig;

/// Token sequences per language.
pub type Pools = BTreeMap<String, Vec<Vec<u32>>>;

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub phase: String,
    pub lang: String,
    pub loss: f64,
    pub lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSettings {
    pub optimizer: OptimizerConfig,
    pub alpha: f64,
    pub seed: u64,
    pub mask_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneSettings {
    pub optimizer: OptimizerConfig,
    pub steps: usize,
    pub alpha: f64,
    pub seed: u64,
    pub head_init_scale: f64,
}

impl Default for FinetuneSettings {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            steps: 1000,
            alpha: DEFAULT_ALPHA,
            seed: 0,
            head_init_scale: 0.02,
        }
    }
}

/// Randomness for update `step`. Every step owns an independent stream,
/// so a resumed run draws exactly what an uninterrupted one would.
pub fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64);
    rng
}

/// Randomness for the tagging-head initialisation.
pub fn head_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    rng
}

/// Randomness for weight initialisation.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - 1);
    rng
}

/// Fresh model drawn from [`init_rng`].
pub fn init_model(config: ModelConfig, seed: u64) -> Result<Model> {
    Model::init(config, &mut init_rng(seed))
}

/// Tokenizes records into per-language pools of windows of at most
/// `max_len` ids. Windows shorter than two tokens are dropped.
pub fn build_pools(records: &[CorpusRecord], vocab: &Vocab, max_len: usize) -> Pools {
    let mut pools = Pools::new();
    for rec in records {
        let enc = encode(&rec.text, vocab);
        let slot = pools.entry(rec.lang.clone()).or_default();
        slot.extend(enc.ids.chunks(max_len.max(2)).filter(|c| c.len() >= 2).map(<[u32]>::to_vec));
    }
    pools
}

/// Everything needed to continue a run: weights, optimizer moments and
/// the number of completed updates. Serialized at full precision.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: Model,
    pub adam: AdamState,
    pub step: usize,
}

#[derive(Serialize, Deserialize)]
struct StateHeader {
    kind: String,
    config: ModelConfig,
    step: usize,
    adam_t: u64,
}

const STATE_KIND: &str = "train-state";

impl TrainState {
    pub fn new(model: Model) -> Self {
        let adam = AdamState::new(&model.params);
        Self { model, adam, step: 0 }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = StateHeader {
            kind: STATE_KIND.into(),
            config: self.model.config.clone(),
            step: self.step,
            adam_t: self.adam.t,
        };
        let mut tensors: Vec<(String, &Matrix)> = Vec::new();
        for (prefix, p) in [("params", &self.model.params), ("m", &self.adam.m), ("v", &self.adam.v)] {
            tensors.extend(p.tensors().into_iter().map(|(n, m)| (format!("{prefix}.{n}"), m)));
        }
        encode_container(&header, &tensors, DType::F64)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, tensors): (StateHeader, Vec<(String, Matrix)>) = decode_container(bytes)?;
        if header.kind != STATE_KIND {
            return Err(Error::Checkpoint(format!("expected a {STATE_KIND}, found {}", header.kind)));
        }
        header.config.validate()?;
        let has = |n: &str| tensors.iter().any(|(name, _)| name == n);
        let (lm, tag) = (has("params.lm_head"), has("params.tag_head.weight"));
        let mut groups: BTreeMap<&str, Vec<(String, Matrix)>> = BTreeMap::new();
        for (name, m) in tensors {
            let (prefix, rest) = name
                .split_once('.')
                .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {name}")))?;
            let prefix = match prefix {
                "params" => "params",
                "m" => "m",
                "v" => "v",
                _ => return Err(Error::Checkpoint(format!("unexpected tensor {name}"))),
            };
            groups.entry(prefix).or_default().push((rest.to_string(), m));
        }
        let mut take = |key: &str| -> Result<ModelParams> {
            let mut p = skeleton(&header.config, lm, tag);
            assign_tensors(&mut p, groups.remove(key).unwrap_or_default())?;
            Ok(p)
        };
        let params = take("params")?;
        let m = take("m")?;
        let v = take("v")?;
        Ok(Self {
            model: Model {
                config: header.config,
                params,
            },
            adam: AdamState { m, v, t: header.adam_t },
            step: header.step,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Attempts to fill one update before giving up, as a multiple of the batch size.
const FILL_ATTEMPTS: usize = 4;

fn usable_pools(data: &Pools) -> BTreeMap<&str, Vec<&[u32]>> {
    data.iter()
        .map(|(l, seqs)| (l.as_str(), seqs.iter().filter(|s| s.len() >= 2).map(|s| s.as_slice()).collect::<Vec<_>>()))
        .filter(|(_, s)| !s.is_empty())
        .collect()
}

fn sampler_for<'a>(langs: impl Iterator<Item = (&'a str, usize)>, alpha: f64) -> Result<LanguageSampler> {
    let counts = langs.map(|(l, n)| (l.to_string(), n as u64)).collect();
    LanguageSampler::new(&SamplerConfig::new(counts, alpha)?)
}

fn apply_update(state: &mut TrainState, mut grads: ModelParams, used: usize, lr: f64, cfg: &OptimizerConfig) -> Result<()> {
    scale_all(&mut grads, 1.0 / used as f64);
    clip_grad_norm(&mut grads, cfg.grad_clip);
    adamw_step(&mut state.model.params, &grads, &mut state.adam, lr, cfg)?;
    state.step += 1;
    Ok(())
}

/// Runs MNTP updates until `state.step == until`.
///
/// Each update: the curriculum picks the phase, a language is drawn from
/// the phase pool by temperature sampling, and `batch_size` sequences of
/// that language are masked and accumulated. Sequences whose masks yield
/// no loss position are skipped.
pub fn pretrain_until(
    state: &mut TrainState,
    plan: &CurriculumPlan,
    data: &Pools,
    settings: &PretrainSettings,
    until: usize,
    log: &mut dyn FnMut(&LogRecord),
) -> Result<()> {
    plan.validate()?;
    settings.optimizer.validate()?;
    let total = plan.total_steps();
    let pools = usable_pools(data);
    let cfg = &settings.optimizer;
    while state.step < until.min(total) {
        let s = state.step;
        let phase = plan.phase_at(s)?;
        let pool: Vec<(&str, usize)> = phase
            .languages
            .iter()
            .filter_map(|l| pools.get_key_value(l.as_str()).map(|(k, v)| (*k, v.len())))
            .collect();
        if pool.is_empty() {
            return Err(Error::EmptyPool(phase.index));
        }
        let sampler = sampler_for(pool.into_iter(), settings.alpha)?;
        let mut rng = step_rng(settings.seed, s);
        let lang = sampler.sample(&mut rng).to_string();
        let seqs = &pools[lang.as_str()];

        let mut grads = state.model.params.zeros_like();
        let (mut used, mut loss) = (0usize, 0.0);
        for _ in 0..cfg.batch_size * FILL_ATTEMPTS {
            if used == cfg.batch_size {
                break;
            }
            let ids = seqs[rng.random_range(0..seqs.len())];
            if let Some(batch) = make_mntp_batch(ids, phase.mask_ratio, settings.mask_id, &mut rng)? {
                loss += mntp_accumulate(&state.model, &batch, &mut grads)?;
                used += 1;
            }
        }
        if used == 0 {
            return Err(Error::EmptyPool(phase.index));
        }
        let lr = lr_at(s, total, cfg);
        apply_update(state, grads, used, lr, cfg)?;
        log(&LogRecord {
            step: s,
            phase: plan.phases[phase.index].name.clone(),
            lang,
            loss: loss / used as f64,
            lr,
            mask_ratio: Some(phase.mask_ratio),
        });
    }
    Ok(())
}

/// Full curriculum pretraining from `model`.
pub fn pretrain(
    model: Model,
    plan: &CurriculumPlan,
    data: &Pools,
    settings: &PretrainSettings,
    log: &mut dyn FnMut(&LogRecord),
) -> Result<Model> {
    let mut state = TrainState::new(model);
    pretrain_until(&mut state, plan, data, settings, plan.total_steps(), log)?;
    Ok(state.model)
}

/// Swaps the LM head for a fresh tagging head drawn from [`head_rng`].
pub fn finetune_init(pretrained: &Model, n_labels: usize, settings: &FinetuneSettings) -> TrainState {
    let model = pretrained.replace_head(n_labels, settings.head_init_scale, &mut head_rng(settings.seed));
    TrainState::new(model)
}

/// Runs tagging updates until `state.step == until`. A language is drawn
/// per update by temperature sampling over sequence counts, then
/// `batch_size` sequences of it are drawn with replacement.
pub fn finetune_until(
    state: &mut TrainState,
    data: &[TaggedSequence],
    settings: &FinetuneSettings,
    until: usize,
    log: &mut dyn FnMut(&LogRecord),
) -> Result<()> {
    let cfg = &settings.optimizer;
    cfg.validate()?;
    let until = until.min(settings.steps);
    if state.step >= until {
        return Ok(());
    }
    let mut by_lang: BTreeMap<&str, Vec<&TaggedSequence>> = BTreeMap::new();
    for seq in data {
        seq.validate(state.model.config.n_labels)?;
        if !seq.is_empty() {
            by_lang.entry(seq.lang.as_str()).or_default().push(seq);
        }
    }
    if by_lang.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let sampler = sampler_for(by_lang.iter().map(|(l, v)| (*l, v.len())), settings.alpha)?;
    while state.step < until {
        let s = state.step;
        let mut rng = step_rng(settings.seed, s);
        let lang = sampler.sample(&mut rng).to_string();
        let seqs = &by_lang[lang.as_str()];
        let mut grads = state.model.params.zeros_like();
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            let seq = seqs[rng.random_range(0..seqs.len())];
            loss += finetune_accumulate(&state.model, seq, &mut grads)?;
        }
        let lr = lr_at(s, settings.steps, cfg);
        apply_update(state, grads, cfg.batch_size, lr, cfg)?;
        log(&LogRecord {
            step: s,
            phase: "finetune".into(),
            lang,
            loss: loss / cfg.batch_size as f64,
            lr,
            mask_ratio: None,
        });
    }
    Ok(())
}

pub fn finetune(
    pretrained: &Model,
    data: &[TaggedSequence],
    n_labels: usize,
    settings: &FinetuneSettings,
    log: &mut dyn FnMut(&LogRecord),
) -> Result<Model> {
    let mut state = finetune_init(pretrained, n_labels, settings);
    finetune_until(&mut state, data, settings, settings.steps, log)?;
    Ok(state.model)
}

/// Fine-tunes a checkpoint after confirming it was built with the same
/// vocabulary and, if recorded, the same label registry.
pub fn finetune_checkpoint(
    ckpt: &Checkpoint,
    vocab_hash: &str,
    registry: &LabelRegistry,
    data: &[TaggedSequence],
    settings: &FinetuneSettings,
    log: &mut dyn FnMut(&LogRecord),
) -> Result<Checkpoint> {
    ckpt.check_vocab(vocab_hash)?;
    let registry_hash = registry.hash();
    ckpt.check_registry(&registry_hash)?;
    let model = finetune(&ckpt.model, data, registry.n_labels(), settings, log)?;
    Ok(Checkpoint {
        model,
        meta: CheckpointMeta {
            stage: Stage::Finetuned,
            vocab_hash: vocab_hash.to_string(),
            registry_hash: Some(registry_hash),
            training: serde_json::to_value(settings)?,
        },
    })
}
