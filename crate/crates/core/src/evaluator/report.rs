use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datapipe::{align, extract_with, render, CorpusRecord, LabelRegistry, TaggedSequence, UnregisteredPolicy, O};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, Model};
use crate::tokenizer::Vocab;

use super::{macro_f1, ConfusionCounts, MacroF1, ZeroSupport};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// Report only the focus classes and skip the all-label average.
    pub focus_only: bool,
    /// Include the per-language breakdown.
    pub per_lang: bool,
    pub zero_support: ZeroSupport,
    pub policy: UnregisteredPolicy,
}

/// Pooled tallies plus one table per language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusCounts {
    pub pooled: ConfusionCounts,
    pub per_lang: BTreeMap<String, ConfusionCounts>,
}

impl CorpusCounts {
    pub fn new(n_labels: usize) -> Self {
        Self {
            pooled: ConfusionCounts::new(n_labels),
            per_lang: BTreeMap::new(),
        }
    }

    pub fn accumulate(&mut self, reference: &TaggedSequence, predicted: &[usize]) -> Result<()> {
        let n = self.pooled.n_labels();
        let mut one = ConfusionCounts::new(n);
        one.accumulate(reference, predicted)?;
        self.pooled.merge(&one)?;
        self.per_lang
            .entry(reference.lang.clone())
            .or_insert_with(|| ConfusionCounts::new(n))
            .merge(&one)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub label: String,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub p: Option<f64>,
    pub r: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LangReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub macro_all: Option<MacroF1>,
    pub macro_focus: MacroF1,
    pub positions: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub checkpoint_hash: Option<String>,
    pub corpus_hash: Option<String>,
    pub registry_version: u32,
    pub zero_support: ZeroSupport,
    pub focus_only: bool,
}

/// Scores computed from pooled counts, plus per-language scores and their
/// unweighted mean over languages that have support.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_class: Vec<ClassReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub macro_all: Option<MacroF1>,
    pub macro_focus: MacroF1,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub per_lang: BTreeMap<String, LangReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lang_mean: Option<LangReport>,
    pub positions: u64,
    pub meta: ReportMeta,
}

fn mean_score(scores: impl Iterator<Item = MacroF1>) -> MacroF1 {
    let vals: Vec<f64> = scores.filter_map(MacroF1::value).collect();
    if vals.is_empty() {
        MacroF1::NoSupport
    } else {
        MacroF1::Score(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

impl EvalReport {
    pub fn from_counts(
        counts: &CorpusCounts,
        registry: &LabelRegistry,
        opts: &EvalOptions,
        mut meta: ReportMeta,
    ) -> Result<Self> {
        if counts.pooled.n_labels() != registry.n_labels() {
            return Err(Error::Alignment {
                reference: registry.n_labels(),
                predicted: counts.pooled.n_labels(),
            });
        }
        let focus = registry.focus_ids();
        let all = registry.class_ids();
        let shown = if opts.focus_only { &focus } else { &all };
        let score = |c: &ConfusionCounts| -> Result<LangReport> {
            Ok(LangReport {
                macro_all: if opts.focus_only { None } else { Some(macro_f1(c, &all, opts.zero_support)?) },
                macro_focus: macro_f1(c, &focus, opts.zero_support)?,
                positions: c.positions,
            })
        };
        let pooled = score(&counts.pooled)?;
        let mut per_lang = BTreeMap::new();
        let mut lang_mean = None;
        if opts.per_lang {
            for (l, c) in &counts.per_lang {
                per_lang.insert(l.clone(), score(c)?);
            }
            lang_mean = Some(LangReport {
                macro_all: (!opts.focus_only).then(|| mean_score(per_lang.values().filter_map(|r| r.macro_all))),
                macro_focus: mean_score(per_lang.values().map(|r| r.macro_focus)),
                positions: counts.pooled.positions,
            });
        }
        let per_class = shown
            .iter()
            .map(|&c| {
                let k = counts.pooled.classes[c];
                ClassReport {
                    label: registry.label_str(c).unwrap_or("?").to_string(),
                    tp: k.tp,
                    fp: k.fp,
                    fn_: k.fn_,
                    p: k.precision(),
                    r: k.recall(),
                    f1: k.f1(),
                }
            })
            .collect();
        meta.registry_version = registry.version;
        meta.zero_support = opts.zero_support;
        meta.focus_only = opts.focus_only;
        Ok(Self {
            per_class,
            macro_all: pooled.macro_all,
            macro_focus: pooled.macro_focus,
            per_lang,
            lang_mean,
            positions: counts.pooled.positions,
            meta,
        })
    }
}

/// Labels predicted for every position of `seq`, windowed to the model's
/// maximum length.
fn predict_sequence(model: &Model, seq: &TaggedSequence) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(seq.len());
    for chunk in seq.chunks(model.config.max_seq) {
        out.extend(model.predict_labels(&chunk.ids)?);
    }
    Ok(out)
}

/// Extracts reference labels from each punctuated record, predicts on the
/// stripped text and tallies word-final positions.
pub fn evaluate_corpus(
    model: &Model,
    vocab: &Vocab,
    registry: &LabelRegistry,
    records: &[CorpusRecord],
    opts: &EvalOptions,
) -> Result<CorpusCounts> {
    if model.config.n_labels != registry.n_labels() {
        return Err(Error::Registry(format!(
            "model has {} labels, registry has {}",
            model.config.n_labels,
            registry.n_labels()
        )));
    }
    let mut counts = CorpusCounts::new(registry.n_labels());
    for rec in records {
        let e = extract_with(&rec.text, registry, opts.policy);
        let reference = align(&e.plain, &e.labels, vocab)?.with_lang(rec.lang.clone());
        if reference.is_empty() {
            continue;
        }
        let predicted = predict_sequence(model, &reference)?;
        counts.accumulate(&reference, &predicted)?;
    }
    Ok(counts)
}

/// [`evaluate_corpus`] on a checkpoint, after the vocabulary and registry
/// hash checks.
pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    vocab: &Vocab,
    registry: &LabelRegistry,
    records: &[CorpusRecord],
    opts: &EvalOptions,
    meta: ReportMeta,
) -> Result<EvalReport> {
    ckpt.check_vocab(&vocab.hash())?;
    ckpt.check_registry(&registry.hash())?;
    let counts = evaluate_corpus(&ckpt.model, vocab, registry, records, opts)?;
    EvalReport::from_counts(&counts, registry, opts, meta)
}

/// Strips registered marks from `line`, predicts a mark per word and
/// renders the result. Words are re-joined with single spaces.
pub fn punctuate(model: &Model, vocab: &Vocab, registry: &LabelRegistry, line: &str) -> Result<String> {
    let e = extract_with(line, registry, UnregisteredPolicy::Strip);
    let words = e.labels.len();
    if words == 0 {
        return Ok(String::new());
    }
    let seq = align(&e.plain, &vec![O; words], vocab)?;
    let predicted = predict_sequence(model, &seq)?;
    let labels: Vec<usize> = predicted
        .iter()
        .zip(&seq.word_final)
        .filter(|(_, &f)| f)
        .map(|(&l, _)| l)
        .collect();
    render(&e.plain, &labels, registry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (Model, Vocab, LabelRegistry) {
        let registry = LabelRegistry::default();
        let vocab = Vocab::bytes_only();
        let cfg = ModelConfig {
            layers: 1,
            d_model: 16,
            heads: 2,
            d_ff: 32,
            vocab_size: vocab.len(),
            max_seq: 12,
            n_labels: registry.n_labels(),
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = Model::init(cfg, &mut rng).unwrap().replace_head(registry.n_labels(), 0.0, &mut rng);
        (model, vocab, registry)
    }

    fn corpus() -> Vec<CorpusRecord> {
        vec![
            CorpusRecord {
                lang: "en".into(),
                text: "hello there, how are you? fine.".into(),
            },
            CorpusRecord {
                lang: "hi".into(),
                text: "यह एक वाक्य है।".into(),
            },
        ]
    }

    #[test]
    fn all_o_model_scores_zero() {
        let (mut model, vocab, registry) = setup();
        model.params.tag_head.as_mut().unwrap().bias.set(0, 0, 10.0);
        let counts = evaluate_corpus(&model, &vocab, &registry, &corpus(), &EvalOptions::default()).unwrap();
        let opts = EvalOptions {
            per_lang: true,
            ..Default::default()
        };
        let r = EvalReport::from_counts(&counts, &registry, &opts, ReportMeta::default()).unwrap();
        assert_eq!(r.macro_all, Some(MacroF1::Score(0.0)));
        assert_eq!(r.macro_focus, MacroF1::Score(0.0));
        assert_eq!(r.per_lang.len(), 2);
        assert_eq!(r.positions, 10);
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["per_class"][0]["label"], ".");
        assert!(json["per_class"][0].get("fn").is_some());
    }

    #[test]
    fn focus_only_matches_filtered_full_report() {
        let (mut model, vocab, registry) = setup();
        // make the head favour "," everywhere: some hits, many misses
        model.params.tag_head.as_mut().unwrap().bias.set(0, 2, 10.0);
        let counts = evaluate_corpus(&model, &vocab, &registry, &corpus(), &EvalOptions::default()).unwrap();
        let full = EvalReport::from_counts(&counts, &registry, &EvalOptions::default(), ReportMeta::default()).unwrap();
        let focus_opts = EvalOptions {
            focus_only: true,
            ..Default::default()
        };
        let focus = EvalReport::from_counts(&counts, &registry, &focus_opts, ReportMeta::default()).unwrap();
        assert_eq!(focus.macro_all, None);
        assert_eq!(focus.per_class.len(), 9);
        let filtered = macro_f1(&counts.pooled.restricted(&registry.focus_ids()), &registry.class_ids(), ZeroSupport::Exclude).unwrap();
        assert_eq!(full.macro_focus, filtered);
        assert_eq!(focus.macro_focus, filtered);
        assert!(matches!(filtered, MacroF1::Score(v) if v > 0.0));
    }

    #[test]
    fn document_order_does_not_matter() {
        let (model, vocab, registry) = setup();
        let mut docs = corpus();
        let a = evaluate_corpus(&model, &vocab, &registry, &docs, &EvalOptions::default()).unwrap();
        docs.reverse();
        let b = evaluate_corpus(&model, &vocab, &registry, &docs, &EvalOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn punctuate_keeps_words_and_handles_empty_lines() {
        let (model, vocab, registry) = setup();
        assert_eq!(punctuate(&model, &vocab, &registry, "").unwrap(), "");
        assert_eq!(punctuate(&model, &vocab, &registry, "   ").unwrap(), "");
        let out = punctuate(&model, &vocab, &registry, "a long line, with   some words that needs windowing").unwrap();
        let stripped = extract_with(&out, &registry, UnregisteredPolicy::Strip).plain;
        assert_eq!(stripped, "a long line with some words that needs windowing");
    }

    #[test]
    fn checkpoint_mismatch_is_rejected() {
        let (model, vocab, registry) = setup();
        let ckpt = Checkpoint {
            model,
            meta: crate::model::CheckpointMeta {
                stage: crate::model::Stage::Finetuned,
                vocab_hash: "other".into(),
                registry_hash: Some(registry.hash()),
                training: serde_json::Value::Null,
            },
        };
        let err = evaluate_checkpoint(&ckpt, &vocab, &registry, &corpus(), &EvalOptions::default(), ReportMeta::default())
            .unwrap_err();
        assert!(matches!(err, Error::HashMismatch { .. }));
    }
}
