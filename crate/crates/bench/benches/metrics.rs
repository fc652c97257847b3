//! Metric-suite throughput on a caption-sized corpus.

use criterion::{criterion_group, criterion_main, Criterion};
use rand::Rng;
use sgmt_core::metrics::{report, EvalCorpus, EvalItem};
use sgmt_core::rng::derive_rng;

fn corpus(items: usize, len: usize, vocab: usize) -> EvalCorpus {
    let mut rng = derive_rng(3, "bench-metrics");
    let sentence = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<String> {
        (0..len).map(|_| format!("w{}", rng.gen_range(0..vocab))).collect()
    };
    EvalCorpus::new(
        (0..items)
            .map(|i| EvalItem {
                id: format!("i{i}"),
                candidate: sentence(&mut rng),
                references: vec![sentence(&mut rng)],
            })
            .collect(),
    )
    .unwrap()
}

fn bench_metrics(c: &mut Criterion) {
    let corpus_small = corpus(50, 12, 40);
    c.bench_function("metric_report_50x12", |b| {
        b.iter(|| report(&corpus_small));
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = bench_metrics
}
criterion_main!(benches);
