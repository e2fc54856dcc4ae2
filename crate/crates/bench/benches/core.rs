use std::hint::black_box;

use cadence_core::datapipe::{default_languages, prepare, synth_generate, LabelRegistry, UnregisteredPolicy};
use cadence_core::evaluator::punctuate;
use cadence_core::model::{AttentionMode, Model, ModelConfig};
use cadence_core::numcore::Matrix;
use cadence_core::tokenizer::{encode, train_vocab};
use cadence_core::trainer::{finetune_step, make_mntp_batch, mntp_step};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("matmul");
    for n in [32, 64, 128] {
        let a = Matrix::random_normal(n, n, 1.0, &mut rng);
        let b = Matrix::random_normal(n, n, 1.0, &mut rng);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| black_box(&a).matmul(black_box(&b)).unwrap())
        });
    }
    group.finish();
}

fn model_config(d: usize) -> ModelConfig {
    ModelConfig {
        layers: 2,
        d_model: d,
        heads: 4,
        d_ff: 4 * d,
        vocab_size: 512,
        max_seq: 128,
        n_labels: 31,
        ..Default::default()
    }
}

fn forward_backward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = Model::init(model_config(64), &mut rng).unwrap();
    let ids: Vec<u32> = (0..64).map(|_| rng.random_range(0..500)).collect();
    let batch = make_mntp_batch(&ids, 0.3, 511, &mut rng).unwrap().unwrap();
    let tagger = model.replace_head(31, 0.02, &mut rng);
    let seq = cadence_core::TaggedSequence {
        lang: "x".into(),
        ids: ids.clone(),
        labels: (0..ids.len()).map(|_| rng.random_range(0..31)).collect(),
        word_final: vec![true; ids.len()],
    };

    let mut group = c.benchmark_group("model_d64_len64");
    group.bench_function("forward", |b| {
        b.iter(|| model.forward(black_box(&ids), AttentionMode::Bidirectional).unwrap())
    });
    group.bench_function("mntp_step", |b| b.iter(|| mntp_step(&model, black_box(&batch)).unwrap()));
    group.bench_function("finetune_step", |b| b.iter(|| finetune_step(&tagger, black_box(&seq)).unwrap()));
    group.finish();
}

fn text(c: &mut Criterion) {
    let mut langs = default_languages();
    for l in &mut langs {
        l.sentences = 50;
    }
    let records = synth_generate(&langs, 0).unwrap();
    let vocab = train_vocab(records.iter().map(|r| r.text.as_bytes()), 800).unwrap();
    let registry = LabelRegistry::default();
    let joined: String = records.iter().map(|r| r.text.as_str()).collect::<Vec<_>>().join(" ");

    let mut group = c.benchmark_group("text");
    group.bench_function("train_vocab_800", |b| {
        b.iter(|| train_vocab(records.iter().map(|r| r.text.as_bytes()), 800).unwrap())
    });
    group.bench_function("encode_400_sentences", |b| b.iter(|| encode(black_box(&joined), &vocab)));
    group.bench_function("prepare_400_sentences", |b| {
        b.iter(|| prepare(black_box(&records), &registry, &vocab, UnregisteredPolicy::Strip, 128).unwrap())
    });
    let mut cfg = model_config(32);
    cfg.vocab_size = vocab.len();
    let model = Model::init(cfg, &mut ChaCha8Rng::seed_from_u64(2))
        .unwrap()
        .replace_head(registry.n_labels(), 0.02, &mut ChaCha8Rng::seed_from_u64(3));
    let line = &records[0].text;
    group.bench_function("punctuate_line", |b| {
        b.iter(|| punctuate(&model, &vocab, &registry, black_box(line)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, matmul, forward_backward, text);
criterion_main!(benches);
