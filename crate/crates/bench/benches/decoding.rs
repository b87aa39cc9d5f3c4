//! Decoding throughput for the three generation strategies.

use criterion::{criterion_group, criterion_main, Criterion};
use proplm::model::{generate, Strategy};
use proplm_bench::{bench_params, token_windows};
use std::hint::black_box;

fn decoding(c: &mut Criterion) {
    let params = bench_params();
    let prompt = token_windows(1, 8).remove(0);
    let mut group = c.benchmark_group("generate 24 tokens");
    for (name, strategy) in [
        ("greedy", Strategy::Greedy),
        ("top-k 50", Strategy::TopK { k: 50 }),
        ("beam 5", Strategy::Beam { width: 5 }),
    ] {
        group.bench_function(name, |bench| {
            bench.iter(|| {
                let out = generate(&params, &prompt, strategy, 24, 11).unwrap();
                black_box(out.len());
            })
        });
    }
    group.finish();
}

criterion_group!(benches, decoding);
criterion_main!(benches);
