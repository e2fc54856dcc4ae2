//! Punctuation restoration with a small transformer whose attention can be
//! switched from causal to bidirectional.
//!
//! The pipeline: train a byte-fallback subword [`tokenizer`], continually
//! pretrain with masked next-token prediction under a language curriculum
//! ([`trainer`]), replace the language-model head with a punctuation tagging
//! head and fine-tune, then score with macro-F1 ([`evaluator`]).

pub mod datapipe;
pub mod error;
pub mod evaluator;
pub mod model;
pub mod numcore;
pub mod tokenizer;
pub mod trainer;

pub use datapipe::{CorpusRecord, CurriculumPlan, LabelRegistry, SamplerConfig, TaggedSequence};
pub use error::{Error, Result};
pub use evaluator::{macro_f1, ConfusionCounts, EvalOptions, EvalReport, MacroF1, ZeroSupport};
pub use model::{AttentionMode, Checkpoint, Model, ModelConfig};
pub use numcore::Matrix;
pub use tokenizer::Vocab;
pub use trainer::{FinetuneSettings, OptimizerConfig, PretrainSettings};
