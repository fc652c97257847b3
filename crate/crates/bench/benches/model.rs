//! Forward/backward and sampling throughput at the default desk shape.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use sgmt_core::data::{generate_synthetic, vocabulary_of, SyntheticSpec};
use sgmt_core::model::{backward, forward, ModelConfig, ModelParams, TrainSample};
use sgmt_core::rng::derive_rng;
use sgmt_core::sampler::{sample_train, SamplerConfig};

fn desk_fixture() -> (ModelParams, TrainSample, SamplerConfig, usize) {
    let mut spec = SyntheticSpec::with_defaults(4, 2, 99).unwrap();
    spec.patches_per_slide = (64, 64);
    let records = generate_synthetic(&spec).unwrap();
    let vocab = vocabulary_of(&records).unwrap();
    let cfg = ModelConfig { vocab_size: vocab.size(), num_subtypes: 4, ..ModelConfig::default() };
    let params = ModelParams::init(&cfg, 1).unwrap();
    let record = &records[0];
    let sampler = SamplerConfig::default();
    let mut rng = derive_rng(1, "bench");
    let set = sample_train(record.patches.len(), &sampler, &mut rng).unwrap();
    let sample = TrainSample::gather(record, &set);
    let n = record.patches.len();
    (params, sample, sampler, n)
}

fn bench_model(c: &mut Criterion) {
    let (params, sample, sampler, n) = desk_fixture();

    c.bench_function("forward_desk_m32", |b| {
        b.iter(|| forward(&sample, &params).unwrap());
    });

    c.bench_function("backward_desk_m32", |b| {
        b.iter(|| backward(&sample, &params, 1.0, None).unwrap());
    });

    c.bench_function("sample_train_n64_m32", |b| {
        b.iter_batched(
            || derive_rng(7, "bench-sample"),
            |mut rng| sample_train(n, &sampler, &mut rng).unwrap(),
            BatchSize::SmallInput,
        );
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_model
}
criterion_main!(benches);
