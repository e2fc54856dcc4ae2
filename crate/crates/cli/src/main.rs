//! `cadence`: tokenizer training, data preparation, curriculum pretraining,
//! fine-tuning, evaluation, punctuation and synthetic corpora.

mod config;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use cadence_core::datapipe::{self, read_jsonl, synth, write_jsonl, CorpusRecord, LabelRegistry, TaggedSequence};
use cadence_core::evaluator::{evaluate_checkpoint, punctuate, EvalOptions, ReportMeta};
use cadence_core::model::checkpoint::file_hash;
use cadence_core::model::{Checkpoint, CheckpointMeta, Stage};
use cadence_core::tokenizer::{train_vocab, Vocab};
use cadence_core::trainer::{
    build_pools, finetune_checkpoint, init_model, pretrain_until, FinetuneSettings, LogRecord, PretrainSettings,
    TrainState,
};
use cadence_core::Error;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "cadence", version, about = "Punctuation restoration with a bidirectional transformer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Run configuration (JSON, or TOML by extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random draw; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn a byte-fallback BPE vocabulary from a JSONL corpus.
    BuildTokenizer {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `tokenizer.vocab_size`.
        #[arg(long)]
        vocab_size: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Extract labels from punctuated text and align them to subtokens.
    Prepare {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        registry: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Masked next-token pretraining under the language curriculum.
    Pretrain {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training log, one JSON object per update.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Continue from a saved training state.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Save the full-precision training state here when done.
        #[arg(long)]
        state_out: Option<PathBuf>,
        /// Stop after this many updates instead of the full plan.
        #[arg(long)]
        until: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Replace the LM head with a tagging head and train it.
    Finetune {
        /// Pretrained checkpoint.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        registry: Option<PathBuf>,
        /// Punctuated JSONL corpus.
        #[arg(long, required_unless_present = "data", conflicts_with = "data")]
        corpus: Option<PathBuf>,
        /// Output of `prepare`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a fine-tuned checkpoint on a punctuated JSONL corpus.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        registry: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        /// Write the full JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Restrict the report to the focus classes.
        #[arg(long)]
        focus_only: bool,
        /// Add per-language scores.
        #[arg(long)]
        per_lang: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Punctuate text line by line (stdin or --input) to stdout or --out.
    Punctuate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        registry: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic multilingual punctuated corpus.
    Synthgen {
        #[arg(long)]
        out: PathBuf,
        /// Sentences per language, overriding each spec.
        #[arg(long)]
        sentences: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    kind: &'static str,
    key: Option<String>,
    message: String,
}

fn classify(err: &anyhow::Error) -> Failure {
    let message = format!("{err:#}");
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            let (code, kind, key) = match e {
                Error::Config { key, .. } => (65, "config", Some(key.clone())),
                Error::HashMismatch { .. } | Error::Checkpoint(_) | Error::MissingHead(_) => (2, "mismatch", None),
                Error::Io(_) | Error::Json(_) | Error::Corpus { .. } | Error::Registry(_) | Error::EmptyCorpus => {
                    (3, "input", None)
                }
                _ => (1, "runtime", None),
            };
            return Failure { code, kind, key, message };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<serde_json::Error>().is_some() {
            return Failure {
                code: 3,
                kind: "input",
                key: None,
                message,
            };
        }
    }
    Failure {
        code: 1,
        kind: "runtime",
        key: None,
        message,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CADENCE_LOG", "error")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            let line = json!({"error": "usage", "exit": 64, "message": e.kind().to_string()});
            eprintln!("{line}");
            return ExitCode::from(64);
        }
    };
    match run(cli.command) {
        Ok(summary) => {
            if !summary.is_null() {
                println!("{summary}");
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            let f = classify(&err);
            let mut line = json!({"error": f.kind, "exit": f.code, "message": f.message});
            if let Some(k) = f.key {
                line["key"] = json!(k);
            }
            eprintln!("{line}");
            ExitCode::from(f.code)
        }
    }
}

/// Qualifies an optimizer key with the config section it came from.
fn in_section(section: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Config { key, reason } => Error::Config {
            key: format!("{section}.{key}"),
            reason,
        },
        other => other,
    }
}

fn load_config(common: &Common) -> anyhow::Result<(RunConfig, u64)> {
    let cfg = match &common.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    let seed = common.seed.or(cfg.seed).unwrap_or(0);
    Ok((cfg, seed))
}

fn read_records(path: &Path) -> anyhow::Result<Vec<CorpusRecord>> {
    read_jsonl(path).with_context(|| format!("reading {}", path.display()))
}

fn load_vocab(path: &Path) -> anyhow::Result<Vocab> {
    Vocab::load(path).with_context(|| format!("loading vocabulary {}", path.display()))
}

fn load_registry(path: Option<&Path>) -> anyhow::Result<LabelRegistry> {
    match path {
        Some(p) => Ok(LabelRegistry::load(p).with_context(|| format!("loading registry {}", p.display()))?),
        None => Ok(LabelRegistry::default()),
    }
}

fn load_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// Collects log records and writes them as JSONL at the end.
struct LogSink {
    records: Vec<LogRecord>,
}

impl LogSink {
    fn push(&mut self, r: &LogRecord) {
        log::info!("step {} {} {} loss {:.4} lr {:.3e}", r.step, r.phase, r.lang, r.loss, r.lr);
        self.records.push(r.clone());
    }

    fn write(&self, path: Option<&Path>) -> anyhow::Result<()> {
        if let Some(p) = path {
            write_jsonl(p, &self.records)?;
        }
        Ok(())
    }
}

fn run(command: Command) -> anyhow::Result<serde_json::Value> {
    match command {
        Command::BuildTokenizer {
            corpus,
            out,
            vocab_size,
            common,
        } => {
            let (cfg, seed) = load_config(&common)?;
            let size = vocab_size.unwrap_or(cfg.tokenizer.vocab_size);
            let records = read_records(&corpus)?;
            let vocab = train_vocab(records.iter().map(|r| r.text.as_bytes()), size)?;
            vocab.save(&out)?;
            Ok(json!({
                "command": "build-tokenizer",
                "seed": seed,
                "vocab_size": vocab.len(),
                "merges": vocab.merges().len(),
                "vocab_hash": vocab.hash(),
                "out": out,
            }))
        }
        Command::Prepare {
            corpus,
            vocab,
            registry,
            out,
            common,
        } => {
            let (cfg, seed) = load_config(&common)?;
            let vocab = load_vocab(&vocab)?;
            let registry = load_registry(registry.as_deref())?;
            let max_len = match cfg.prepare.max_len {
                Some(n) => n,
                None => cfg.model_config(vocab.len(), registry.n_labels())?.max_seq,
            };
            if max_len == 0 {
                return Err(Error::Config {
                    key: "prepare.max_len".into(),
                    reason: "must be positive".into(),
                }
                .into());
            }
            let records = read_records(&corpus)?;
            let seqs = datapipe::prepare(&records, &registry, &vocab, cfg.prepare.policy, max_len)?;
            write_jsonl(&out, &seqs)?;
            Ok(json!({
                "command": "prepare",
                "seed": seed,
                "records": records.len(),
                "sequences": seqs.len(),
                "out": out,
            }))
        }
        Command::Pretrain {
            corpus,
            vocab,
            out,
            log,
            resume,
            state_out,
            until,
            common,
        } => {
            let (cfg, seed) = load_config(&common)?;
            let vocab = load_vocab(&vocab)?;
            let plan = cfg.curriculum.plan()?;
            cfg.pretrain.optimizer.validate().map_err(in_section("pretrain"))?;
            let settings = PretrainSettings {
                optimizer: cfg.pretrain.optimizer.clone(),
                alpha: cfg.pretrain.alpha,
                seed,
                mask_id: vocab.specials().mask,
            };
            let mut state = match &resume {
                Some(p) => {
                    let st = TrainState::load(p).with_context(|| format!("loading training state {}", p.display()))?;
                    if st.model.config.vocab_size != vocab.len() {
                        bail!(Error::Checkpoint(format!(
                            "training state expects {} tokens, vocabulary has {}",
                            st.model.config.vocab_size,
                            vocab.len()
                        )));
                    }
                    st
                }
                None => {
                    let model_cfg = cfg.model_config(vocab.len(), LabelRegistry::default().n_labels())?;
                    TrainState::new(init_model(model_cfg, seed)?)
                }
            };
            let records = read_records(&corpus)?;
            let pools = build_pools(&records, &vocab, state.model.config.max_seq);
            let mut sink = LogSink { records: Vec::new() };
            let target = until.unwrap_or(plan.total_steps()).min(plan.total_steps());
            pretrain_until(&mut state, &plan, &pools, &settings, target, &mut |r| sink.push(r))?;
            sink.write(log.as_deref())?;
            if let Some(p) = &state_out {
                state.save(p)?;
            }
            let ckpt = Checkpoint {
                model: state.model.clone(),
                meta: CheckpointMeta {
                    stage: Stage::Pretrained,
                    vocab_hash: vocab.hash(),
                    registry_hash: None,
                    training: json!({"seed": seed, "pretrain": cfg.pretrain, "curriculum": plan}),
                },
            };
            ckpt.save(&out)?;
            Ok(json!({
                "command": "pretrain",
                "seed": seed,
                "steps": state.step,
                "total_steps": plan.total_steps(),
                "final_loss": sink.records.last().map(|r| r.loss),
                "out": out,
                "sha256": file_hash(&out)?,
            }))
        }
        Command::Finetune {
            model,
            vocab,
            registry,
            corpus,
            data,
            out,
            log,
            common,
        } => {
            let (cfg, seed) = load_config(&common)?;
            let vocab = load_vocab(&vocab)?;
            let registry = load_registry(registry.as_deref())?;
            let ckpt = load_checkpoint(&model)?;
            let seqs: Vec<TaggedSequence> = match (&corpus, &data) {
                (Some(c), _) => {
                    let max_len = cfg.prepare.max_len.unwrap_or(ckpt.model.config.max_seq);
                    datapipe::prepare(&read_records(c)?, &registry, &vocab, cfg.prepare.policy, max_len)?
                }
                (None, Some(d)) => {
                    read_jsonl(d).with_context(|| format!("reading {}", d.display()))?
                }
                (None, None) => bail!("either --corpus or --data is required"),
            };
            let settings = FinetuneSettings {
                optimizer: cfg.finetune.optimizer.clone(),
                steps: cfg.finetune.steps,
                alpha: cfg.finetune.alpha,
                seed,
                head_init_scale: cfg.finetune.head_init_scale,
            };
            settings.optimizer.validate().map_err(in_section("finetune"))?;
            let mut sink = LogSink { records: Vec::new() };
            let tuned = finetune_checkpoint(&ckpt, &vocab.hash(), &registry, &seqs, &settings, &mut |r| sink.push(r))?;
            sink.write(log.as_deref())?;
            tuned.save(&out)?;
            Ok(json!({
                "command": "finetune",
                "seed": seed,
                "steps": settings.steps,
                "sequences": seqs.len(),
                "final_loss": sink.records.last().map(|r| r.loss),
                "out": out,
                "sha256": file_hash(&out)?,
            }))
        }
        Command::Eval {
            model,
            vocab,
            registry,
            corpus,
            report,
            focus_only,
            per_lang,
            common,
        } => {
            let (cfg, seed) = load_config(&common)?;
            let vocab = load_vocab(&vocab)?;
            let registry = load_registry(registry.as_deref())?;
            let ckpt = load_checkpoint(&model)?;
            let records = read_records(&corpus)?;
            let opts = EvalOptions {
                focus_only,
                per_lang: per_lang || cfg.eval.per_lang,
                zero_support: cfg.eval.zero_support,
                policy: cfg.prepare.policy,
            };
            let meta = ReportMeta {
                checkpoint_hash: Some(file_hash(&model)?),
                corpus_hash: Some(file_hash(&corpus)?),
                ..Default::default()
            };
            let rep = evaluate_checkpoint(&ckpt, &vocab, &registry, &records, &opts, meta)?;
            if let Some(p) = &report {
                let mut w = create(p)?;
                serde_json::to_writer_pretty(&mut w, &rep)?;
                w.write_all(b"\n")?;
                w.flush()?;
            }
            Ok(json!({
                "command": "eval",
                "seed": seed,
                "positions": rep.positions,
                "macro_all": rep.macro_all,
                "macro_focus": rep.macro_focus,
                "report": report,
            }))
        }
        Command::Punctuate {
            model,
            vocab,
            registry,
            input,
            out,
            common,
        } => {
            let (_, seed) = load_config(&common)?;
            let vocab = load_vocab(&vocab)?;
            let registry = load_registry(registry.as_deref())?;
            let ckpt = load_checkpoint(&model)?;
            ckpt.check_vocab(&vocab.hash())?;
            ckpt.check_registry(&registry.hash())?;
            let reader: Box<dyn Read> = match &input {
                Some(p) => Box::new(File::open(p).with_context(|| format!("opening {}", p.display()))?),
                None => Box::new(std::io::stdin()),
            };
            let mut output = Vec::new();
            let mut lines = 0usize;
            for line in BufReader::new(reader).lines() {
                let line = line.context("reading input")?;
                let text = punctuate(&ckpt.model, &vocab, &registry, &line)?;
                output.push(text);
                lines += 1;
            }
            let mut body = output.join("\n");
            if lines > 0 {
                body.push('\n');
            }
            match &out {
                Some(p) => {
                    std::fs::write(p, &body).with_context(|| format!("writing {}", p.display()))?;
                    Ok(json!({"command": "punctuate", "seed": seed, "lines": lines, "out": p}))
                }
                None => {
                    // the text is the output; the summary goes to stderr
                    print!("{body}");
                    std::io::stdout().flush()?;
                    eprintln!("{}", json!({"command": "punctuate", "seed": seed, "lines": lines}));
                    Ok(serde_json::Value::Null)
                }
            }
        }
        Command::Synthgen { out, sentences, common } => {
            let (cfg, seed) = load_config(&common)?;
            let mut langs = cfg.synth.languages.clone().unwrap_or_else(synth::default_languages);
            if let Some(n) = sentences {
                langs.iter_mut().for_each(|l| l.sentences = n);
            }
            let records = synth::synth_generate(&langs, seed)?;
            write_jsonl(&out, &records)?;
            Ok(json!({
                "command": "synthgen",
                "seed": seed,
                "languages": langs.len(),
                "records": records.len(),
                "out": out,
                "sha256": file_hash(&out)?,
            }))
        }
    }
}
