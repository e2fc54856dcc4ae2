use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{encode, Vocab};

use super::registry::{LabelRegistry, O};

/// What `extract` does with trailing punctuation that no class matches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnregisteredPolicy {
    /// Remove it from both text and labels.
    #[default]
    Strip,
    /// Keep the characters as part of the word.
    KeepAsText,
}

/// Unpunctuated text and one label per word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extracted {
    pub plain: String,
    pub labels: Vec<usize>,
}

/// One fine-tuning example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSequence {
    pub lang: String,
    pub ids: Vec<u32>,
    pub labels: Vec<usize>,
    pub word_final: Vec<bool>,
}

fn is_unregistered_punct(c: char) -> bool {
    (c.is_ascii_punctuation() && !"#$%&*+/<=>@\\^_`|~".contains(c))
        || matches!(c, '\u{00A1}' | '\u{00AB}' | '\u{00BB}' | '\u{00BF}')
        || ('\u{2010}'..='\u{2027}').contains(&c)
        || ('\u{2030}'..='\u{205E}').contains(&c)
        || ('\u{3001}'..='\u{3003}').contains(&c)
}

fn is_punct(c: char, registry: &LabelRegistry) -> bool {
    registry.contains_char(c) || is_unregistered_punct(c)
}

/// Longest class that prefixes `run` at the earliest possible offset.
/// Returns `(label, chars before the match, chars after it)`.
fn match_run<'a>(run: &'a [char], registry: &LabelRegistry) -> (usize, &'a [char], &'a [char]) {
    for start in 0..run.len() {
        let rest = &run[start..];
        let best = registry
            .classes
            .iter()
            .enumerate()
            .filter(|(_, c)| {
                let n = c.chars().count();
                n <= rest.len() && c.chars().zip(rest).all(|(a, &b)| a == b)
            })
            .max_by_key(|(i, c)| (c.chars().count(), std::cmp::Reverse(*i)));
        if let Some((i, c)) = best {
            let n = c.chars().count();
            return (i + 1, &run[..start], &rest[n..]);
        }
    }
    (O, run, &[])
}

/// Splits punctuated text into plain words and per-word labels.
///
/// The maximal run of punctuation at the end of each word is matched
/// greedily, longest class first. Anything left over follows `policy`.
/// A word made only of punctuation lends its mark to the preceding word
/// when that word is still unlabeled.
pub fn extract_with(text: &str, registry: &LabelRegistry, policy: UnregisteredPolicy) -> Extracted {
    let mut words: Vec<String> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for word in text.split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        let mut stem_end = chars.len();
        while stem_end > 0 && is_punct(chars[stem_end - 1], registry) {
            stem_end -= 1;
        }
        let (stem, run) = chars.split_at(stem_end);
        let (label, before, after) = match_run(run, registry);

        let mut text: String = stem.iter().collect();
        if policy == UnregisteredPolicy::KeepAsText {
            text.extend(before);
            text.extend(after);
        }

        if stem.is_empty() {
            if label != O {
                if let Some(prev) = labels.last_mut() {
                    if *prev == O {
                        *prev = label;
                    }
                }
            }
            if !text.is_empty() {
                words.push(text);
                labels.push(O);
            }
        } else {
            words.push(text);
            labels.push(label);
        }
    }
    Extracted {
        plain: words.join(" "),
        labels,
    }
}

pub fn extract(text: &str, registry: &LabelRegistry) -> Extracted {
    extract_with(text, registry, UnregisteredPolicy::Strip)
}

/// Appends each word's mark directly after it; words are joined by single spaces.
pub fn render(plain: &str, labels: &[usize], registry: &LabelRegistry) -> Result<String> {
    let words: Vec<&str> = plain.split_whitespace().collect();
    if words.len() != labels.len() {
        return Err(Error::LengthMismatch {
            words: words.len(),
            labels: labels.len(),
        });
    }
    let mut out = String::with_capacity(plain.len() + labels.len());
    for (i, (w, &l)) in words.iter().zip(labels).enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(w);
        if l != O {
            let mark = registry
                .label_str(l)
                .ok_or_else(|| Error::Registry(format!("unknown label id {l}")))?;
            out.push_str(mark);
        }
    }
    Ok(out)
}

/// Tokenizes `plain` and puts each word's label on its last subtoken.
pub fn align(plain: &str, labels: &[usize], vocab: &Vocab) -> Result<TaggedSequence> {
    let enc = encode(plain, vocab);
    let words = enc.word_count();
    if words != labels.len() {
        return Err(Error::LengthMismatch {
            words,
            labels: labels.len(),
        });
    }
    let tags = enc
        .word_final
        .iter()
        .zip(&enc.word_index)
        .map(|(&fin, &w)| if fin { labels[w] } else { O })
        .collect();
    Ok(TaggedSequence {
        lang: String::new(),
        ids: enc.ids,
        labels: tags,
        word_final: enc.word_final,
    })
}

impl TaggedSequence {
    pub fn with_lang(mut self, lang: impl Into<String>) -> Self {
        self.lang = lang.into();
        self
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Labels of word-final positions, in word order.
    pub fn word_labels(&self) -> Vec<usize> {
        self.labels
            .iter()
            .zip(&self.word_final)
            .filter(|(_, &f)| f)
            .map(|(&l, _)| l)
            .collect()
    }

    pub fn validate(&self, n_labels: usize) -> Result<()> {
        if self.labels.len() != self.ids.len() || self.word_final.len() != self.ids.len() {
            return Err(Error::LengthMismatch {
                words: self.ids.len(),
                labels: self.labels.len(),
            });
        }
        for (p, (&l, &f)) in self.labels.iter().zip(&self.word_final).enumerate() {
            if l >= n_labels {
                return Err(Error::Registry(format!("label {l} at position {p} exceeds {n_labels}")));
            }
            if l != O && !f {
                return Err(Error::Registry(format!("label at non-final position {p}")));
            }
        }
        Ok(())
    }

    /// Splits into windows of at most `max_len` positions, cutting at word
    /// boundaries where possible.
    pub fn chunks(&self, max_len: usize) -> Vec<TaggedSequence> {
        assert!(max_len > 0);
        let mut out = Vec::new();
        let mut start = 0;
        while start < self.ids.len() {
            let hard_end = (start + max_len).min(self.ids.len());
            let end = if hard_end == self.ids.len() {
                hard_end
            } else {
                (start..hard_end)
                    .rev()
                    .find(|&p| self.word_final[p])
                    .map(|p| p + 1)
                    .unwrap_or(hard_end)
            };
            out.push(TaggedSequence {
                lang: self.lang.clone(),
                ids: self.ids[start..end].to_vec(),
                labels: self.labels[start..end].to_vec(),
                word_final: self.word_final[start..end].to_vec(),
            });
            start = end;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{normalize_whitespace, train_vocab};
    use proptest::prelude::*;

    fn reg() -> LabelRegistry {
        LabelRegistry::default()
    }

    #[test]
    fn hindi_example() {
        let r = reg();
        let e = extract("नमस्ते। आप कैसे हैं?", &r);
        assert_eq!(e.plain, "नमस्ते आप कैसे हैं");
        let danda = r.id_of("\u{0964}").unwrap();
        let q = r.id_of("?").unwrap();
        assert_eq!(e.labels, vec![danda, O, O, q]);
    }

    #[test]
    fn no_punctuation() {
        let e = extract("just some words", &reg());
        assert_eq!(e.plain, "just some words");
        assert!(e.labels.iter().all(|&l| l == O));
    }

    #[test]
    fn longest_match_and_residue() {
        let r = reg();
        let e = extract("he said?\u{201D} then... ok?.", &r);
        assert_eq!(e.plain, "he said then ok");
        assert_eq!(
            e.labels,
            vec![O, r.id_of("?\u{201D}").unwrap(), r.id_of("...").unwrap(), r.id_of("?").unwrap()]
        );
    }

    #[test]
    fn unregistered_policy() {
        let r = reg();
        let strip = extract("items) go]", &r);
        assert_eq!(strip.plain, "items go");
        assert_eq!(strip.labels, vec![O, O]);
        let keep = extract_with("items). go]", &r, UnregisteredPolicy::KeepAsText);
        assert_eq!(keep.plain, "items) go]");
        assert_eq!(keep.labels, vec![r.id_of(".").unwrap(), O]);
        // the kept text re-extracts to itself
        let again = extract_with(&keep.plain, &r, UnregisteredPolicy::KeepAsText);
        assert_eq!(again.plain, keep.plain);
        assert!(again.labels.iter().all(|&l| l == O));
    }

    #[test]
    fn standalone_mark_attaches_to_previous_word() {
        let r = reg();
        let e = extract("vraiment ? oui", &r);
        assert_eq!(e.plain, "vraiment oui");
        assert_eq!(e.labels, vec![r.id_of("?").unwrap(), O]);
        let e = extract("? start", &r);
        assert_eq!(e.plain, "start");
        assert_eq!(e.labels, vec![O]);
    }

    #[test]
    fn render_cases() {
        let r = reg();
        assert_eq!(render("a b c", &[O, O, O], &r).unwrap(), "a b c");
        assert_eq!(render("word", &[r.id_of(".").unwrap()], &r).unwrap(), "word.");
        assert!(matches!(
            render("a b", &[O], &r),
            Err(Error::LengthMismatch { words: 2, labels: 1 })
        ));
    }

    #[test]
    fn align_cases() {
        let r = reg();
        let vocab = train_vocab(["ab ab ab"], 260).unwrap(); // learns "ab" only
        let period = r.id_of(".").unwrap();
        let comma = r.id_of(",").unwrap();
        let seq = align("ab", &[period], &vocab).unwrap();
        assert_eq!(seq.labels, vec![period]);
        let seq = align("xyz", &[comma], &vocab).unwrap();
        assert_eq!(seq.labels, vec![O, O, comma]);
        assert_eq!(seq.word_final, vec![false, false, true]);
        assert!(align("a b", &[O], &vocab).is_err());
    }

    #[test]
    fn chunks_cut_at_word_boundaries() {
        let vocab = train_vocab(["zz"], 259).unwrap();
        let seq = align("abc de fghij k", &[1, 2, 3, 4], &vocab).unwrap();
        let parts = seq.chunks(6);
        assert!(parts.iter().all(|p| p.len() <= 6));
        let total: usize = parts.iter().map(|p| p.len()).sum();
        assert_eq!(total, seq.len());
        assert_eq!(parts[0].ids.len(), 5); // "abc" + "de"
        let labels: Vec<usize> = parts.iter().flat_map(|p| p.word_labels()).collect();
        assert_eq!(labels, vec![1, 2, 3, 4]);
    }

    fn word() -> impl Strategy<Value = String> {
        prop::collection::vec(prop::sample::select(vec!['a', 'k', 'z', 'क', 'ম', 'ب', 'ᱚ', '1', '-']), 1..6)
            .prop_map(|cs| cs.into_iter().collect::<String>())
            .prop_filter("word must not end with punctuation", |w: &String| !w.ends_with('-'))
    }

    proptest! {
        #[test]
        fn render_inverts_extract(
            items in prop::collection::vec((word(), 0usize..31), 1..12),
            spaces in prop::collection::vec(prop::sample::select(vec![" ", "  ", "\t", " \n "]), 12),
        ) {
            let r = reg();
            let mut text = String::from("  ");
            for (i, (w, l)) in items.iter().enumerate() {
                text.push_str(w);
                if *l != O {
                    text.push_str(r.label_str(*l).unwrap());
                }
                text.push_str(spaces[i]);
            }
            let e = extract(&text, &r);
            prop_assert_eq!(render(&e.plain, &e.labels, &r).unwrap(), normalize_whitespace(&text));
            let again = extract(&e.plain, &r);
            prop_assert_eq!(&again.plain, &e.plain);
            prop_assert!(again.labels.iter().all(|&l| l == O));
        }

        #[test]
        fn extract_inverts_render(items in prop::collection::vec((word(), 0usize..31), 1..12)) {
            let r = reg();
            let plain = items.iter().map(|(w, _)| w.as_str()).collect::<Vec<_>>().join(" ");
            let labels: Vec<usize> = items.iter().map(|(_, l)| *l).collect();
            let e = extract(&render(&plain, &labels, &r).unwrap(), &r);
            prop_assert_eq!(e.plain, plain);
            prop_assert_eq!(e.labels, labels);
        }

        #[test]
        fn labels_sit_on_word_final_positions(items in prop::collection::vec((word(), 0usize..31), 1..12)) {
            let vocab = train_vocab(["ak ak kz zz kaka"], 270).unwrap();
            let plain = items.iter().map(|(w, _)| w.as_str()).collect::<Vec<_>>().join(" ");
            let labels: Vec<usize> = items.iter().map(|(_, l)| *l).collect();
            let seq = align(&plain, &labels, &vocab).unwrap();
            seq.validate(31).unwrap();
            let punctuated = labels.iter().filter(|&&l| l != O).count();
            prop_assert_eq!(seq.labels.iter().filter(|&&l| l != O).count(), punctuated);
            prop_assert_eq!(seq.word_labels(), labels);
        }
    }
}
