use std::collections::HashMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_VOCAB_SIZE: usize = 8192;
pub const NUM_SPECIALS: usize = 3;
const VOCAB_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Specials {
    pub pad: u32,
    pub mask: u32,
    pub bos: u32,
}

/// Token inventory: the 256 single bytes, then the specials, then one token
/// per learned merge in training order.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<Vec<u8>>,
    merges: Vec<(u32, u32)>,
    specials: Specials,
    /// pair -> (rank, merged id)
    ranks: HashMap<(u32, u32), (usize, u32)>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    version: u32,
    tokens: Vec<String>,
    merges: Vec<(u32, u32)>,
    specials: Specials,
}

impl Vocab {
    pub fn bytes_only() -> Self {
        let mut tokens: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        tokens.push(b"<pad>".to_vec());
        tokens.push(b"<mask>".to_vec());
        tokens.push(b"<bos>".to_vec());
        Self {
            tokens,
            merges: Vec::new(),
            specials: Specials {
                pad: 256,
                mask: 257,
                bos: 258,
            },
            ranks: HashMap::new(),
        }
    }

    pub(crate) fn push_merge(&mut self, a: u32, b: u32) -> u32 {
        let id = self.tokens.len() as u32;
        let mut bytes = self.tokens[a as usize].clone();
        bytes.extend_from_slice(&self.tokens[b as usize]);
        self.tokens.push(bytes);
        self.ranks.insert((a, b), (self.merges.len(), id));
        self.merges.push((a, b));
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn specials(&self) -> Specials {
        self.specials
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(|t| t.as_slice())
    }

    pub fn is_special(&self, id: u32) -> bool {
        let s = self.specials;
        id == s.pad || id == s.mask || id == s.bos
    }

    /// Applies merges to one word, lowest rank first, until none applies.
    pub(crate) fn encode_word(&self, word: &[u8]) -> Vec<u32> {
        let mut syms: Vec<u32> = word.iter().map(|&b| b as u32).collect();
        while syms.len() > 1 {
            let best = syms
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&(r, id)| (r, w[0], w[1], id)))
                .min_by_key(|&(r, ..)| r);
            let Some((_, a, b, id)) = best else { break };
            syms = merge_pair(&syms, a, b, id);
        }
        syms
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            version: VOCAB_VERSION,
            tokens: self.tokens.iter().map(|t| B64.encode(t)).collect(),
            merges: self.merges.clone(),
            specials: self.specials,
        };
        serde_json::to_string(&file).expect("vocab serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(json)?;
        let bad = |m: &str| Error::Checkpoint(format!("vocab: {m}"));
        if file.version != VOCAB_VERSION {
            return Err(bad(&format!("unsupported version {}", file.version)));
        }
        let mut v = Vocab::bytes_only();
        if file.specials != v.specials {
            return Err(bad("unexpected special ids"));
        }
        for (a, b) in file.merges {
            if a as usize >= v.len() || b as usize >= v.len() || v.is_special(a) || v.is_special(b) {
                return Err(bad("merge references an unknown or special token"));
            }
            v.push_merge(a, b);
        }
        if file.tokens.len() != v.len() {
            return Err(bad("token count does not match merges"));
        }
        for (i, t) in file.tokens.iter().enumerate() {
            let bytes = B64.decode(t).map_err(|e| bad(&e.to_string()))?;
            if bytes != v.tokens[i] {
                return Err(bad(&format!("token {i} does not match its merge")));
            }
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

pub(crate) fn merge_pair(syms: &[u32], a: u32, b: u32, id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && syms[i] == a && syms[i + 1] == b {
            out.push(id);
            i += 2;
        } else {
            out.push(syms[i]);
            i += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::train_vocab;

    #[test]
    fn json_round_trip() {
        let v = train_vocab(["abab abab cdcd", "abcd"].iter().copied(), 270).unwrap();
        let back = Vocab::from_json(&v.to_json()).unwrap();
        assert_eq!(back.to_json(), v.to_json());
        assert_eq!(back.hash(), v.hash());
        assert_eq!(back.encode_word(b"abab"), v.encode_word(b"abab"));
    }

    #[test]
    fn rejects_tampered_tokens() {
        let v = train_vocab(["abab abab"].iter().copied(), 262).unwrap();
        let mut file: serde_json::Value = serde_json::from_str(&v.to_json()).unwrap();
        file["tokens"][259] = serde_json::Value::String(B64.encode(b"zz"));
        assert!(Vocab::from_json(&file.to_string()).is_err());
    }

    #[test]
    fn specials_follow_bytes() {
        let v = Vocab::bytes_only();
        assert_eq!(v.len(), 256 + NUM_SPECIALS);
        assert!(v.is_special(257));
        assert!(!v.is_special(255));
    }
}
