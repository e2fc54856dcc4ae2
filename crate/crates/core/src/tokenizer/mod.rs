//! Byte-fallback subword tokenizer with word-boundary tracking.
//!
//! Text is pre-segmented on whitespace and each word into punctuation and
//! non-punctuation pieces; merges never cross either boundary,
//! and whitespace itself is never emitted as a token. Word boundaries are
//! carried by [`Encoding::word_final`] instead.

mod train;
mod vocab;

pub use train::train_vocab;
pub use vocab::{Specials, Vocab, DEFAULT_VOCAB_SIZE, NUM_SPECIALS};

use crate::error::{Error, Result};

/// Token ids of a text, with word structure.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<u32>,
    /// True on the last subtoken of each word.
    pub word_final: Vec<bool>,
    /// Ordinal of the source word each position belongs to.
    pub word_index: Vec<usize>,
}

impl Encoding {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn word_count(&self) -> usize {
        self.word_final.iter().filter(|&&f| f).count()
    }
}

/// Splits `bytes` into words at Unicode whitespace. Invalid UTF-8 bytes are
/// treated as word characters.
pub fn split_words(bytes: &[u8]) -> Vec<&[u8]> {
    let mut words = Vec::new();
    let mut start: Option<usize> = None;
    let mut offset = 0;
    for chunk in bytes.utf8_chunks() {
        for (i, ch) in chunk.valid().char_indices() {
            let pos = offset + i;
            if ch.is_whitespace() {
                if let Some(s) = start.take() {
                    words.push(&bytes[s..pos]);
                }
            } else if start.is_none() {
                start = Some(pos);
            }
        }
        offset += chunk.valid().len();
        if !chunk.invalid().is_empty() && start.is_none() {
            start = Some(offset);
        }
        offset += chunk.invalid().len();
    }
    if let Some(s) = start {
        words.push(&bytes[s..]);
    }
    words
}

/// Punctuation for the purpose of piece splitting: ASCII punctuation,
/// Indic and Perso-Arabic sentence marks, Ol Chiki marks, general
/// punctuation and CJK full stops.
pub fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{00A1}' | '\u{00AB}' | '\u{00BB}' | '\u{00BF}' | '\u{0964}' | '\u{0965}' | '\u{060C}' | '\u{061B}'
                | '\u{061F}' | '\u{06D4}' | '\u{1C7E}' | '\u{1C7F}'
        )
        || ('\u{2010}'..='\u{205E}').contains(&c)
        || ('\u{3001}'..='\u{3003}').contains(&c)
}

/// Splits a word into maximal runs of punctuation and non-punctuation.
/// Merges are learned and applied within pieces, so a trailing mark is
/// always its own token and the word before it tokenizes as it would bare.
pub fn split_pieces(word: &[u8]) -> Vec<&[u8]> {
    let mut classes: Vec<(usize, bool)> = Vec::new();
    let mut offset = 0;
    for chunk in word.utf8_chunks() {
        for (i, ch) in chunk.valid().char_indices() {
            classes.push((offset + i, is_punctuation(ch)));
        }
        offset += chunk.valid().len();
        if !chunk.invalid().is_empty() {
            classes.push((offset, false));
        }
        offset += chunk.invalid().len();
    }
    let mut pieces = Vec::new();
    let mut start = 0;
    for w in classes.windows(2) {
        if w[0].1 != w[1].1 {
            pieces.push(&word[start..w[1].0]);
            start = w[1].0;
        }
    }
    if start < word.len() {
        pieces.push(&word[start..]);
    }
    pieces
}

/// Collapses whitespace runs to single spaces and trims both ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn encode(text: &str, vocab: &Vocab) -> Encoding {
    encode_bytes(text.as_bytes(), vocab)
}

/// Encodes arbitrary bytes; never fails thanks to the byte fallback.
pub fn encode_bytes(bytes: &[u8], vocab: &Vocab) -> Encoding {
    let mut enc = Encoding::default();
    for (w, word) in split_words(bytes).into_iter().enumerate() {
        let pieces: Vec<u32> = split_pieces(word).into_iter().flat_map(|p| vocab.encode_word(p)).collect();
        let last = pieces.len() - 1;
        for (i, id) in pieces.into_iter().enumerate() {
            enc.ids.push(id);
            enc.word_final.push(i == last);
            enc.word_index.push(w);
        }
    }
    enc
}

/// Concatenates token bytes, inserting one space after every word-final
/// position except the last.
pub fn decode_bytes(ids: &[u32], vocab: &Vocab, word_final: &[bool]) -> Result<Vec<u8>> {
    if word_final.len() != ids.len() {
        return Err(Error::Shape {
            op: "decode",
            left: (ids.len(), 1),
            right: (word_final.len(), 1),
        });
    }
    let last_final = word_final.iter().rposition(|&f| f);
    let mut out = Vec::new();
    for (p, &id) in ids.iter().enumerate() {
        out.extend_from_slice(vocab.token_bytes(id).ok_or(Error::InvalidToken(id))?);
        if word_final[p] && Some(p) != last_final {
            out.push(b' ');
        }
    }
    Ok(out)
}

/// UTF-8 decode; invalid sequences are replaced with U+FFFD.
pub fn decode(ids: &[u32], vocab: &Vocab, word_final: &[bool]) -> Result<String> {
    let bytes = decode_bytes(ids, vocab, word_final)?;
    Ok(match String::from_utf8(bytes) {
        Ok(s) => s,
        Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pieces_split_at_punctuation_runs() {
        let pieces: Vec<&[u8]> = split_pieces("क्या?\"".as_bytes());
        assert_eq!(pieces, vec!["क्या".as_bytes(), "?\"".as_bytes()]);
        assert_eq!(split_pieces(b"a.b"), vec![&b"a"[..], b".", b"b"]);
        assert_eq!(split_pieces("यह।".as_bytes()), vec!["यह".as_bytes(), "।".as_bytes()]);
        assert_eq!(split_pieces(b"\xffab"), vec![&b"\xffab"[..]]);
        assert!(split_pieces(b"").is_empty());
    }

    proptest! {
        #[test]
        fn pieces_concatenate_to_word(bytes in proptest::collection::vec(any::<u8>(), 0..40)) {
            prop_assert_eq!(split_pieces(&bytes).concat(), bytes);
        }
    }

    fn small_vocab() -> Vocab {
        let corpus = [
            "the cat sat on the mat",
            "the dog sat on the log",
            "नमस्ते आप कैसे हैं",
            "থেকে এবং থেকে",
        ];
        train_vocab(corpus.iter().copied(), 330).unwrap()
    }

    #[test]
    fn empty_text() {
        let v = small_vocab();
        let e = encode("", &v);
        assert!(e.is_empty());
        assert_eq!(decode(&e.ids, &v, &e.word_final).unwrap(), "");
        let e = encode("  \t\n ", &v);
        assert!(e.is_empty());
    }

    #[test]
    fn unseen_script_falls_back_to_bytes() {
        let v = small_vocab();
        let word = "ꯃꯤꯇꯩ"; // Meitei Mayek, absent from the training corpus
        let e = encode(word, &v);
        assert_eq!(e.ids.len(), word.len());
        assert!(e.ids.iter().all(|&id| id < 256));
        assert_eq!(e.word_final.iter().filter(|&&f| f).count(), 1);
        assert!(*e.word_final.last().unwrap());
        assert_eq!(decode(&e.ids, &v, &e.word_final).unwrap(), word);
    }

    #[test]
    fn merges_apply_within_words() {
        let v = small_vocab();
        let e = encode("the  cat\tsat", &v);
        assert_eq!(e.word_count(), 3);
        assert!(e.ids.len() < "thecatsat".len());
        assert_eq!(decode(&e.ids, &v, &e.word_final).unwrap(), "the cat sat");
        assert_eq!(e.word_index.last(), Some(&2));
    }

    #[test]
    fn decode_rejects_invalid_ids() {
        let v = small_vocab();
        let err = decode(&[v.len() as u32], &v, &[true]).unwrap_err();
        assert!(matches!(err, Error::InvalidToken(_)));
    }

    #[test]
    fn non_utf8_input_is_total() {
        let v = small_vocab();
        let bytes = b"ab\xff\xfe cd\x80";
        let e = encode_bytes(bytes, &v);
        assert_eq!(e.word_count(), 2);
        assert_eq!(decode_bytes(&e.ids, &v, &e.word_final).unwrap(), bytes.to_vec());
    }

    proptest! {
        #[test]
        fn round_trip_normalizes_whitespace(s in "\\PC{0,40}( {1,3}\\PC{0,10}){0,4}") {
            let v = small_vocab();
            let e = encode(&s, &v);
            prop_assert_eq!(decode(&e.ids, &v, &e.word_final).unwrap(), normalize_whitespace(&s));
            prop_assert_eq!(e.word_count(), s.split_whitespace().count());
        }

        #[test]
        fn byte_input_never_fails(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
            let v = small_vocab();
            let e = encode_bytes(&bytes, &v);
            prop_assert_eq!(e.word_count(), split_words(&bytes).len());
            let joined = split_words(&bytes).join(&b' ');
            prop_assert_eq!(decode_bytes(&e.ids, &v, &e.word_final).unwrap(), joined);
        }
    }
}
