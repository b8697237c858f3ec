//! Per-patient forward and backward passes through `par::map` versus a plain
//! iterator. Build with `--no-default-features` to make both routes sequential.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use regabstract_core::corpus::{generate_corpus, GeneratorConfig, Patient};
use regabstract_core::model::{EncoderKind, Model, ModelConfig};
use regabstract_core::par;
use regabstract_core::textproc::{assemble_input, learn_vocab, AssembleOptions, TokenSequence};

fn fixture() -> (Model<f32>, Vec<TokenSequence>) {
    let bundle = generate_corpus(&GeneratorConfig {
        n_cancer_patients: 64,
        n_control_patients: 8,
        pretrain_pool_docs: 0,
        ..GeneratorConfig::default()
    })
    .expect("corpus");
    let texts: Vec<&str> = bundle.patients.iter().flat_map(|p| p.documents.iter().map(|d| d.text.as_str())).collect();
    let vocab = learn_vocab(&texts, 800).expect("vocab");
    let opts = AssembleOptions::default();
    let cancer: Vec<&Patient> = bundle.patients.iter().filter(|p| p.is_cancer()).collect();
    let seqs = cancer
        .iter()
        .map(|p| assemble_input(p, p.registry.as_ref().unwrap().diagnosis_date, &opts, &vocab, None).expect("assemble"))
        .collect();
    let mut config = ModelConfig::new(vocab.len(), 8, EncoderKind::ContextFree);
    config.embed_dim = 64;
    config.gru_hidden = 32;
    config.word_attn_dim = 32;
    config.sent_attn_dim = 32;
    (Model::new(config, vocab.content_hash()).expect("model"), seqs)
}

fn bench(c: &mut Criterion) {
    let (model, seqs) = fixture();
    let batch = &seqs[..16];
    let mut g = c.benchmark_group(format!("predict_{}_patients", seqs.len()));
    g.sample_size(10);
    g.bench_function(format!("par_map_{}_threads", par::threads()), |b| {
        b.iter(|| par::map(&seqs, |s| model.predict(s).unwrap().probs))
    });
    g.bench_function("sequential", |b| {
        b.iter(|| seqs.iter().map(|s| model.predict(s).unwrap().probs).collect::<Vec<_>>())
    });
    g.finish();

    let mut g = c.benchmark_group("loss_and_grads_batch_16");
    g.sample_size(10);
    let grads = |s: &TokenSequence| model.loss_and_grads(&s.ids, &s.sentences, 1, &mut None).unwrap().0;
    g.bench_function(format!("par_map_{}_threads", par::threads()), |b| b.iter(|| black_box(par::map(batch, grads))));
    g.bench_function("sequential", |b| b.iter(|| black_box(batch.iter().map(grads).collect::<Vec<_>>())));
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
