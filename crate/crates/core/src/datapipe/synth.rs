//! Seeded generator of multilingual punctuated text.
//!
//! Each synthetic language has its own character inventory and a lexicon
//! partitioned by the mark that follows a word: a word from the `,`
//! partition is always followed by `,`, a word from the unpunctuated
//! partition never carries a mark. Punctuation is therefore learnable from
//! the text, and MNTP pretraining on punctuated text sees the same signal.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::corpus::CorpusRecord;
use super::registry::LabelRegistry;

const MIN_PARTITION: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Borrow {
    /// Code of a language earlier in the same spec list.
    pub from: String,
    /// Fraction of each partition copied from that language.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthLanguage {
    pub code: String,
    /// Character inventory.
    pub alphabet: String,
    /// Inclusive word-length range in characters.
    pub word_len: [usize; 2],
    /// Inclusive sentence-length range in words.
    pub sentence_len: [usize; 2],
    pub lexicon_size: usize,
    pub sentences: usize,
    /// Probability that a word is followed by each mark.
    pub marks: BTreeMap<String, f64>,
    /// Seed of the lexicon, independent of the sentence seed so held-out
    /// corpora share vocabulary with training corpora.
    #[serde(default)]
    pub lexicon_seed: u64,
    #[serde(default)]
    pub borrow: Option<Borrow>,
}

fn range(a: u32, b: u32) -> String {
    (a..=b).filter_map(char::from_u32).collect()
}

fn lang(code: &str, alphabet: String, sentences: usize, marks: &[(&str, f64)]) -> SynthLanguage {
    SynthLanguage {
        code: code.into(),
        alphabet,
        word_len: [2, 6],
        sentence_len: [5, 14],
        lexicon_size: 120,
        sentences,
        marks: marks.iter().map(|(m, f)| (m.to_string(), *f)).collect(),
        lexicon_seed: 0,
        borrow: None,
    }
}

/// Eight languages over eight scripts, with uneven corpus sizes. Codes
/// follow the default curriculum.
pub fn default_languages() -> Vec<SynthLanguage> {
    vec![
        lang(
            "en",
            range(0x61, 0x7A),
            400,
            &[(".", 0.08), (",", 0.07), ("?", 0.03), (":", 0.02), ("!", 0.02)],
        ),
        lang("hi", range(0x0915, 0x0939), 400, &[("\u{0964}", 0.08), (",", 0.06), ("?", 0.03)]),
        lang("bn", range(0x0995, 0x09A8), 400, &[("\u{0964}", 0.08), (",", 0.06), ("?", 0.02)]),
        lang("ta", "கஙசஜஞடணதநனபமயரறலளழவஷஸஹ".into(), 300, &[(".", 0.08), (",", 0.07)]),
        lang(
            "ur",
            range(0x0628, 0x063A),
            300,
            &[("\u{06D4}", 0.08), ("\u{060C}", 0.06), ("\u{061F}", 0.03)],
        ),
        lang("sat", range(0x1C5A, 0x1C77), 60, &[("\u{1C7E}", 0.08), (",", 0.05)]),
        lang(
            "gu",
            "કખગઘઙચછજઝઞટઠડઢણતથદધનપફબભમયરલળવશષસહ".into(),
            100,
            &[(".", 0.08), (",", 0.06), ("?", 0.02)],
        ),
        lang("te", "కఖగఘఙచఛజఝఞటఠడఢణతథదధనపఫబభమయరఱలళవశషసహ".into(), 80, &[(".", 0.08), (",", 0.06)]),
    ]
}

impl SynthLanguage {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Synth(format!("{}: {m}", self.code)));
        if self.code.is_empty() {
            return Err(Error::Synth("empty language code".into()));
        }
        let alphabet: BTreeSet<char> = self.alphabet.chars().collect();
        if alphabet.is_empty() {
            return bad("empty alphabet".into());
        }
        let registry = LabelRegistry::default();
        if let Some(c) = alphabet
            .iter()
            .find(|&&c| c.is_whitespace() || c.is_ascii_punctuation() || registry.contains_char(c))
        {
            return bad(format!("alphabet contains whitespace or punctuation {c:?}"));
        }
        let [wmin, wmax] = self.word_len;
        if wmin == 0 || wmin > wmax {
            return bad("word_len must satisfy 1 <= min <= max".into());
        }
        let [smin, smax] = self.sentence_len;
        if smin == 0 || smin > smax {
            return bad("sentence_len must satisfy 1 <= min <= max".into());
        }
        let mut total = 0.0;
        for (m, &f) in &self.marks {
            if m.is_empty() || m.chars().any(char::is_whitespace) {
                return bad(format!("invalid mark {m:?}"));
            }
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("frequency of {m:?} outside [0, 1]"));
            }
            total += f;
        }
        if total > 1.0 + 1e-12 {
            return bad("mark frequencies sum above 1".into());
        }
        let partitions = self.marks.len() + 1;
        if self.lexicon_size < partitions * MIN_PARTITION {
            return bad(format!("lexicon_size must be at least {}", partitions * MIN_PARTITION));
        }
        let capacity = (alphabet.len() as f64).powi(wmax as i32);
        if capacity < 4.0 * self.lexicon_size as f64 {
            return bad("alphabet and word lengths too small for the lexicon".into());
        }
        if let Some(b) = &self.borrow {
            if !(0.0..=1.0).contains(&b.fraction) {
                return bad("borrow.fraction outside [0, 1]".into());
            }
        }
        Ok(())
    }
}

fn derive_seed(seed: u64, code: &str, purpose: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(code.as_bytes());
    h.update([0]);
    h.update(purpose.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Word partitions keyed by mark; `None` is the unpunctuated partition.
type Lexicon = BTreeMap<Option<String>, Vec<String>>;

fn build_lexicon(spec: &SynthLanguage, known: &HashMap<String, Lexicon>) -> Result<Lexicon> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.lexicon_seed, &spec.code, "lexicon"));
    let alphabet: Vec<char> = spec.alphabet.chars().collect();
    let n = spec.lexicon_size as f64;

    let mut sizes: Vec<(Option<String>, usize)> = spec
        .marks
        .iter()
        .map(|(m, &f)| (Some(m.clone()), ((n * f).round() as usize).max(MIN_PARTITION)))
        .collect();
    let used: usize = sizes.iter().map(|(_, s)| s).sum();
    let rest = spec.lexicon_size.saturating_sub(used).max(MIN_PARTITION);
    sizes.insert(0, (None, rest));

    let parent = match &spec.borrow {
        Some(b) => Some((
            known
                .get(&b.from)
                .ok_or_else(|| Error::Synth(format!("{}: borrows from unknown {:?}", spec.code, b.from)))?,
            b.fraction,
        )),
        None => None,
    };

    let mut taken: BTreeSet<String> = BTreeSet::new();
    let mut lexicon = Lexicon::new();
    for (key, size) in sizes {
        let mut words = Vec::with_capacity(size);
        if let Some((plex, frac)) = parent {
            if let Some(src) = plex.get(&key) {
                let k = ((size as f64) * frac).round() as usize;
                for w in src.iter().take(k.min(size)) {
                    if taken.insert(w.clone()) {
                        words.push(w.clone());
                    }
                }
            }
        }
        let mut attempts = 0;
        while words.len() < size {
            attempts += 1;
            if attempts > 1000 * size {
                return Err(Error::Synth(format!("{}: could not draw distinct words", spec.code)));
            }
            let len = rng.random_range(spec.word_len[0]..=spec.word_len[1]);
            let w: String = (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect();
            if taken.insert(w.clone()) {
                words.push(w);
            }
        }
        lexicon.insert(key, words);
    }
    Ok(lexicon)
}

/// Generates `spec.sentences` records per language, languages in list order.
pub fn synth_generate(langs: &[SynthLanguage], seed: u64) -> Result<Vec<CorpusRecord>> {
    let mut known: HashMap<String, Lexicon> = HashMap::new();
    let mut out = Vec::new();
    for spec in langs {
        spec.validate()?;
        if known.contains_key(&spec.code) {
            return Err(Error::Synth(format!("duplicate language {:?}", spec.code)));
        }
        let lexicon = build_lexicon(spec, &known)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &spec.code, "text"));
        let marks: Vec<(&String, f64)> = spec.marks.iter().map(|(m, &f)| (m, f)).collect();
        for _ in 0..spec.sentences {
            let len = rng.random_range(spec.sentence_len[0]..=spec.sentence_len[1]);
            let mut text = String::new();
            for i in 0..len {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut mark = None;
                for &(m, f) in &marks {
                    acc += f;
                    if u < acc {
                        mark = Some(m.clone());
                        break;
                    }
                }
                let pool = &lexicon[&mark];
                if i > 0 {
                    text.push(' ');
                }
                text.push_str(&pool[rng.random_range(0..pool.len())]);
                if let Some(m) = &mark {
                    text.push_str(m);
                }
            }
            out.push(CorpusRecord {
                lang: spec.code.clone(),
                text,
            });
        }
        known.insert(spec.code.clone(), lexicon);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::{extract, O};

    #[test]
    fn defaults_are_valid_and_distinct() {
        let langs = default_languages();
        for l in &langs {
            l.validate().unwrap();
        }
        for (i, a) in langs.iter().enumerate() {
            for b in &langs[i + 1..] {
                let sa: BTreeSet<char> = a.alphabet.chars().collect();
                assert!(b.alphabet.chars().all(|c| !sa.contains(&c)), "{} vs {}", a.code, b.code);
            }
        }
    }

    #[test]
    fn zero_frequencies_give_no_punctuation() {
        let mut l = default_languages().remove(0);
        l.marks.values_mut().for_each(|f| *f = 0.0);
        l.sentences = 50;
        let recs = synth_generate(&[l], 3).unwrap();
        let reg = LabelRegistry::default();
        for r in recs {
            assert!(extract(&r.text, &reg).labels.iter().all(|&x| x == O));
            assert!(!r.text.chars().any(|c| c.is_ascii_punctuation()));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let langs = default_languages();
        let a = synth_generate(&langs, 7).unwrap();
        let b = synth_generate(&langs, 7).unwrap();
        let c = synth_generate(&langs, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn mark_frequencies_follow_the_map() {
        let mut l = default_languages().remove(0);
        l.sentences = 10_000;
        let recs = synth_generate(std::slice::from_ref(&l), 11).unwrap();
        let reg = LabelRegistry::default();
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        let mut words = 0;
        for r in &recs {
            let e = extract(&r.text, &reg);
            words += e.labels.len();
            for x in e.labels {
                *counts.entry(x).or_default() += 1;
            }
        }
        for (m, &f) in &l.marks {
            let got = counts.get(&reg.id_of(m).unwrap()).copied().unwrap_or(0) as f64 / words as f64;
            assert!((got - f).abs() <= 0.1 * f, "{m}: {got} vs {f}");
        }
    }

    #[test]
    fn borrowing_shares_words() {
        let langs = default_languages();
        let mut child = langs[1].clone();
        child.code = "hi2".into();
        child.lexicon_seed = 99;
        child.borrow = Some(Borrow {
            from: "hi".into(),
            fraction: 0.5,
        });
        let mut known = HashMap::new();
        known.insert("hi".to_string(), build_lexicon(&langs[1], &known).unwrap());
        let lex = build_lexicon(&child, &known).unwrap();
        let parent = &known["hi"];
        let shared = lex[&None].iter().filter(|w| parent[&None].contains(w)).count();
        assert!(shared > 0 && shared < lex[&None].len());

        child.borrow.as_mut().unwrap().from = "nope".into();
        assert!(synth_generate(&[child], 1).is_err());
    }

    #[test]
    fn invalid_specs() {
        let base = default_languages().remove(0);
        let mut l = base.clone();
        l.alphabet = "ab.".into();
        assert!(l.validate().is_err());
        let mut l = base.clone();
        l.marks.insert(";".into(), 0.9);
        assert!(l.validate().is_err());
        let mut l = base.clone();
        l.word_len = [3, 2];
        assert!(l.validate().is_err());
        let mut l = base;
        l.lexicon_size = 5;
        assert!(l.validate().is_err());
    }
}
