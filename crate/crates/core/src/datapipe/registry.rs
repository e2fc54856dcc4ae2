use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Label id reserved for "no punctuation follows".
pub const O: usize = 0;

const REGISTRY_VERSION: u32 = 1;

/// Ordered punctuation classes. Class `i` in [`classes`](Self::classes) has
/// label id `i + 1`; id 0 is [`O`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRegistry {
    pub version: u32,
    pub classes: Vec<String>,
    /// Indices into `classes`.
    pub focus: Vec<usize>,
}

/// The nine marks used for cross-model comparison.
pub const FOCUS_MARKS: [&str; 9] = [
    ".",        // period
    ",",        // comma
    ":",        // colon
    "?",        // question mark
    "\u{0964}", // Devanagari danda
    "\u{06D4}", // Urdu full stop
    "\u{061F}", // Urdu (Arabic) question mark
    "\u{060C}", // Arabic comma
    "\u{1C7E}", // Ol Chiki mucaad
];

const EXTRA_MARKS: [&str; 21] = [
    "!",
    ";",
    "-",
    "\u{2026}", // …
    "\u{0965}", // double danda
    "\"",
    "'",
    "\u{201D}", // ”
    "\u{2019}", // ’
    ".\"",
    "?\"",
    "!\"",
    ",\"",
    ".\u{201D}",
    "?\u{201D}",
    "!\u{201D}",
    ",\u{201D}",
    "...",
    "?!",
    "!!",
    "\u{1C7F}", // Ol Chiki double mucaad
];

impl Default for LabelRegistry {
    fn default() -> Self {
        let classes = FOCUS_MARKS
            .iter()
            .chain(EXTRA_MARKS.iter())
            .map(|s| s.to_string())
            .collect();
        Self {
            version: REGISTRY_VERSION,
            classes,
            focus: (0..FOCUS_MARKS.len()).collect(),
        }
    }
}

impl LabelRegistry {
    pub fn new(classes: Vec<String>, focus: Vec<usize>) -> Result<Self> {
        let reg = Self {
            version: REGISTRY_VERSION,
            classes,
            focus,
        };
        reg.validate()?;
        Ok(reg)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.classes {
            let n = c.chars().count();
            if n == 0 || n > 4 {
                return Err(Error::Registry(format!("class {c:?} must have 1 to 4 characters")));
            }
            if c.chars().any(char::is_whitespace) {
                return Err(Error::Registry(format!("class {c:?} contains whitespace")));
            }
            if !seen.insert(c.as_str()) {
                return Err(Error::Registry(format!("duplicate class {c:?}")));
            }
        }
        if self.classes.is_empty() {
            return Err(Error::Registry("no classes".into()));
        }
        if let Some(&f) = self.focus.iter().find(|&&f| f >= self.classes.len()) {
            return Err(Error::Registry(format!("focus index {f} out of range")));
        }
        Ok(())
    }

    /// Output classes of the tagging head, O included.
    pub fn n_labels(&self) -> usize {
        self.classes.len() + 1
    }

    pub fn label_str(&self, id: usize) -> Option<&str> {
        match id {
            O => Some("O"),
            _ => self.classes.get(id - 1).map(String::as_str),
        }
    }

    pub fn id_of(&self, mark: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == mark).map(|i| i + 1)
    }

    /// Label ids of every punctuation class (O excluded).
    pub fn class_ids(&self) -> Vec<usize> {
        (1..self.n_labels()).collect()
    }

    pub fn focus_ids(&self) -> Vec<usize> {
        self.focus.iter().map(|&i| i + 1).collect()
    }

    pub fn contains_char(&self, ch: char) -> bool {
        self.classes.iter().any(|c| c.contains(ch))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("registry serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let reg: Self = serde_json::from_str(json)?;
        reg.validate()?;
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}
