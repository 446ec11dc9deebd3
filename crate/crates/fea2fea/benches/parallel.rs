//! Parallel vs sequential timing for the structural feature kernels.
//!
//! Both paths produce byte-identical output; the only question is wall
//! clock. Run with `cargo bench -p fea2fea`. On a single-core box the
//! parallel path is expected to tie or lose slightly to the sequential
//! one (rayon's scheduling is not free), which is exactly what the
//! `parallel` feature flag is there to let callers decide.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use fea2fea::features::{
    build_feature_matrix, build_feature_matrix_seq, pagerank_seq, pagerank_default,
};
use fea2fea::graph::{default_geometric_radius, generate_random_geometric, Graph};

fn bench_graph(n: usize, seed: u64) -> Graph {
    generate_random_geometric(n, default_geometric_radius(n), seed).expect("generator")
}

fn features(c: &mut Criterion) {
    let g = bench_graph(600, 11);
    let mut group = c.benchmark_group("features");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| build_feature_matrix(black_box(&g)).unwrap())
    });
    group.bench_function("sequential", |b| {
        b.iter(|| build_feature_matrix_seq(black_box(&g)).unwrap())
    });
    group.finish();
}

fn pagerank(c: &mut Criterion) {
    let g = bench_graph(2000, 13);
    let mut group = c.benchmark_group("pagerank");
    group.bench_function("parallel", |b| {
        b.iter(|| pagerank_default(black_box(&g)).unwrap())
    });
    group.bench_function("sequential", |b| {
        b.iter(|| pagerank_seq(black_box(&g), 0.85, 1e-8, 200).unwrap())
    });
    group.finish();
}

criterion_group!(benches, features, pagerank);
criterion_main!(benches);
