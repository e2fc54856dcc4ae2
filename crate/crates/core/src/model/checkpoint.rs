//! Binary tensor container and the model checkpoint built on it.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"CDNC" | u32 format version | u64 header length | header JSON | tensor blob
//! ```
//!
//! The header lists every tensor as `{name, shape, offset, dtype}`; offsets
//! are byte positions inside the blob. Checkpoints store `f32`; training
//! snapshots that must resume bit-exactly store `f64`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numcore::{Matrix, Parameters};

use super::{Model, ModelConfig, ModelParams, TagHead};

pub const MAGIC: &[u8; 4] = b"CDNC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub offset: usize,
    pub dtype: DType,
}

#[derive(Serialize, Deserialize)]
struct ContainerHeader<H> {
    #[serde(flatten)]
    meta: H,
    tensors: Vec<TensorEntry>,
}

/// Serializes `meta` plus the tensors into container bytes.
pub fn encode_container<H: Serialize>(meta: &H, tensors: &[(String, &Matrix)], dtype: DType) -> Result<Vec<u8>> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut blob = Vec::new();
    for (name, m) in tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: [m.rows(), m.cols()],
            offset: blob.len(),
            dtype,
        });
        for &v in m.data() {
            match dtype {
                DType::F32 => blob.extend_from_slice(&(v as f32).to_le_bytes()),
                DType::F64 => blob.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    let header = serde_json::to_vec(&ContainerHeader {
        meta,
        tensors: entries,
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&blob);
    Ok(out)
}

/// Parses container bytes into the header metadata and named tensors.
pub fn decode_container<H: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<(H, Vec<(String, Matrix)>)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("missing CDNC magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let hend = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: ContainerHeader<H> = serde_json::from_slice(&bytes[16..hend])?;
    let blob = &bytes[hend..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n = e.shape[0] * e.shape[1];
        let w = e.dtype.width();
        let end = e
            .offset
            .checked_add(n * w)
            .filter(|&end| end <= blob.len())
            .ok_or_else(|| bad(&format!("tensor {} exceeds the blob", e.name)))?;
        let raw = &blob[e.offset..end];
        let data: Vec<f64> = match e.dtype {
            DType::F32 => raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
            DType::F64 => raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        };
        tensors.push((e.name, Matrix::from_vec(e.shape[0], e.shape[1], data)?));
    }
    Ok((header.meta, tensors))
}

/// Fills `params` from named tensors, requiring an exact name and shape match.
pub fn assign_tensors(params: &mut ModelParams, tensors: Vec<(String, Matrix)>) -> Result<()> {
    let mut by_name: BTreeMap<String, Matrix> = tensors.into_iter().collect();
    for (name, slot) in params.tensors_mut() {
        let t = by_name
            .remove(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if t.shape() != slot.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {:?}, config expects {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
    }
    Ok(())
}

/// Zero-valued parameters with the shapes `cfg` implies.
pub fn skeleton(cfg: &ModelConfig, lm_head: bool, tag_head: bool) -> ModelParams {
    let zero_cfg = ModelConfig {
        init_std: 0.0,
        ..cfg.clone()
    };
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut p = ModelParams::init(&zero_cfg, &mut rng);
    if !lm_head {
        p.lm_head = None;
    }
    if tag_head {
        p.tag_head = Some(TagHead {
            weight: Matrix::zeros(cfg.d_model, cfg.n_labels),
            bias: Matrix::zeros(1, cfg.n_labels),
        });
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrained,
    Finetuned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: Stage,
    pub vocab_hash: String,
    #[serde(default)]
    pub registry_hash: Option<String>,
    /// Hyperparameters and seed of the run that produced the weights.
    #[serde(default)]
    pub training: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    #[serde(flatten)]
    meta: CheckpointMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            config: self.model.config.clone(),
            meta: self.meta.clone(),
        };
        encode_container(&header, &self.model.params.tensors(), DType::F32)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, tensors): (CheckpointHeader, _) = decode_container(bytes)?;
        header.config.validate()?;
        let has = |n: &str| tensors.iter().any(|(name, _): &(String, Matrix)| name == n);
        let mut params = skeleton(&header.config, has("lm_head"), has("tag_head.weight"));
        assign_tensors(&mut params, tensors)?;
        for (name, m) in params.tensors() {
            m.ensure_finite(&name)?;
        }
        Ok(Self {
            model: Model {
                config: header.config,
                params,
            },
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn check_vocab(&self, vocab_hash: &str) -> Result<()> {
        if self.meta.vocab_hash != vocab_hash {
            return Err(Error::HashMismatch {
                what: "vocabulary",
                expected: self.meta.vocab_hash.clone(),
                found: vocab_hash.to_string(),
            });
        }
        Ok(())
    }

    /// Passes when the checkpoint carries no registry hash yet.
    pub fn check_registry(&self, registry_hash: &str) -> Result<()> {
        match &self.meta.registry_hash {
            Some(h) if h != registry_hash => Err(Error::HashMismatch {
                what: "label registry",
                expected: h.clone(),
                found: registry_hash.to_string(),
            }),
            _ => Ok(()),
        }
    }
}

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}
