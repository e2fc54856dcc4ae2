//! Label registry, corpus ingestion, label extraction and alignment,
//! language sampling, curriculum scheduling and synthetic corpora.

mod corpus;
mod curriculum;
mod labels;
mod registry;
mod sampler;
pub mod synth;

pub use corpus::{read_jsonl, write_jsonl, CorpusRecord};
pub use curriculum::{CurriculumPlan, Phase, PhaseAt, FOUNDATION_LANGS, LOW_LANGS, MID_HIGH_LANGS};
pub use labels::{align, extract, extract_with, render, Extracted, TaggedSequence, UnregisteredPolicy};
pub use registry::{LabelRegistry, FOCUS_MARKS, O};
pub use sampler::{sample_language, LanguageSampler, SamplerConfig, DEFAULT_ALPHA};
pub use synth::{default_languages, synth_generate, Borrow, SynthLanguage};

use crate::error::Result;
use crate::tokenizer::Vocab;

/// Extracts labels from punctuated records, aligns them to subtokens and
/// splits long documents into windows of at most `max_len` positions.
/// Output order follows input order.
pub fn prepare(
    records: &[CorpusRecord],
    registry: &LabelRegistry,
    vocab: &Vocab,
    policy: UnregisteredPolicy,
    max_len: usize,
) -> Result<Vec<TaggedSequence>> {
    let mut out = Vec::new();
    for rec in records {
        let e = extract_with(&rec.text, registry, policy);
        let seq = align(&e.plain, &e.labels, vocab)?.with_lang(rec.lang.clone());
        out.extend(seq.chunks(max_len).into_iter().filter(|s| !s.is_empty()));
    }
    Ok(out)
}
