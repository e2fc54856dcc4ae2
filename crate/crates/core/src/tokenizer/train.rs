use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};

use crate::error::{Error, Result};

use super::vocab::{merge_pair, Vocab, NUM_SPECIALS};
use super::{split_pieces, split_words};

struct Candidate {
    count: u64,
    left: Vec<u8>,
    right: Vec<u8>,
    pair: (u32, u32),
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // max-heap: higher count first, then the lexicographically smaller pair
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| (&other.left, &other.right).cmp(&(&self.left, &self.right)))
    }
}

/// Learns byte-pair merges from `corpus` until the vocabulary holds
/// `target_size` tokens or no pair occurs at least twice.
///
/// Pairs are counted within word pieces only (see [`split_pieces`]). The most
/// frequent pair wins; ties go to the lexicographically smaller pair of
/// byte strings.
pub fn train_vocab<I, S>(corpus: I, target_size: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    let min = 256 + NUM_SPECIALS;
    if target_size < min {
        return Err(Error::VocabTooSmall {
            target: target_size,
            min,
        });
    }

    let mut word_counts: BTreeMap<Vec<u8>, u64> = BTreeMap::new();
    for text in corpus {
        for w in split_words(text.as_ref()) {
            for piece in split_pieces(w) {
                *word_counts.entry(piece.to_vec()).or_default() += 1;
            }
        }
    }
    if word_counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut words: Vec<(Vec<u32>, u64)> = word_counts
        .into_iter()
        .map(|(w, c)| (w.into_iter().map(u32::from).collect(), c))
        .collect();

    let mut pair_counts: HashMap<(u32, u32), u64> = HashMap::new();
    let mut occurs: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    for (wi, (syms, c)) in words.iter().enumerate() {
        for p in syms.windows(2) {
            let key = (p[0], p[1]);
            *pair_counts.entry(key).or_default() += c;
            occurs.entry(key).or_default().insert(wi);
        }
    }

    let mut vocab = Vocab::bytes_only();
    let candidate = |vocab: &Vocab, pair: (u32, u32), count: u64| Candidate {
        count,
        left: vocab.token_bytes(pair.0).unwrap().to_vec(),
        right: vocab.token_bytes(pair.1).unwrap().to_vec(),
        pair,
    };
    let mut heap: BinaryHeap<Candidate> = pair_counts
        .iter()
        .map(|(&p, &c)| candidate(&vocab, p, c))
        .collect();

    while vocab.len() < target_size {
        let Some(top) = heap.pop() else { break };
        let current = pair_counts.get(&top.pair).copied().unwrap_or(0);
        if current != top.count {
            continue; // stale entry
        }
        if current < 2 {
            break;
        }
        let (a, b) = top.pair;
        let id = vocab.push_merge(a, b);

        let mut touched: Vec<usize> = occurs.remove(&top.pair).unwrap_or_default().into_iter().collect();
        touched.sort_unstable();
        let mut changed: HashSet<(u32, u32)> = HashSet::new();
        for wi in touched {
            let (syms, c) = &mut words[wi];
            let merged = merge_pair(syms, a, b, id);
            if merged.len() == syms.len() {
                continue;
            }
            for p in syms.windows(2) {
                let key = (p[0], p[1]);
                if let Some(n) = pair_counts.get_mut(&key) {
                    *n -= *c;
                }
                changed.insert(key);
            }
            for p in merged.windows(2) {
                let key = (p[0], p[1]);
                *pair_counts.entry(key).or_default() += *c;
                occurs.entry(key).or_default().insert(wi);
                changed.insert(key);
            }
            *syms = merged;
        }
        pair_counts.remove(&top.pair);
        let mut changed: Vec<_> = changed.into_iter().collect();
        changed.sort_unstable();
        for key in changed {
            match pair_counts.get(&key) {
                Some(&0) => {
                    pair_counts.remove(&key);
                    occurs.remove(&key);
                }
                Some(&n) => heap.push(candidate(&vocab, key, n)),
                None => {}
            }
        }
    }
    Ok(vocab)
}
