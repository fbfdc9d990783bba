//! Benchmarks for the hot kernels: local MLP training, loss evaluation,
//! and the clustering primitives, all at desk-scale shapes.
//!
//! `cargo bench -p cflsim-bench` — or `-- --quick` for a fast calibration
//! pass when sizing experiment grids.

use cflsim_core::clustering;
use cflsim_core::nn::{self, ModelParams, TrainConfig};
use cflsim_core::seeds;
use criterion::{criterion_group, criterion_main, Criterion};
use rand::Rng;
use std::hint::black_box;

const DIMS: (usize, usize, usize) = (784, 200, 10);

/// A synthetic client shard: n samples of sparse-ish [0,1] pixels.
fn synthetic_shard(n: usize) -> (Vec<f64>, Vec<u8>) {
    let mut rng = seeds::rng(7, "benchdata", 0, 0);
    let x = (0..n * DIMS.0)
        .map(|_| {
            if rng.random_range(0.0..1.0) < 0.8 {
                0.0
            } else {
                rng.random_range(0.0..1.0)
            }
        })
        .collect();
    let y = (0..n).map(|_| rng.random_range(0..10)).collect();
    (x, y)
}

fn bench_train_local(c: &mut Criterion) {
    let model = ModelParams::init_from_seed(DIMS, 1, 1, 1);
    let (x, y) = synthetic_shard(300);
    let cfg = TrainConfig {
        local_epochs: 10,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("train_local_300x10ep", |b| {
        b.iter(|| nn::train_local(black_box(&model), &x, &y, &cfg).unwrap())
    });
    group.finish();
}

fn bench_loss_eval(c: &mut Criterion) {
    let model = ModelParams::init_from_seed(DIMS, 2, 1, 1);
    let (x, y) = synthetic_shard(300);
    c.bench_function("mean_loss_300", |b| {
        b.iter(|| nn::mean_loss(black_box(&model), &x, &y, 300))
    });
}

fn bench_clustering(c: &mut Criterion) {
    // 20 flattened models, MLP-sized vectors.
    let vectors: Vec<Vec<f64>> = (0..20)
        .map(|k| ModelParams::init_from_seed(DIMS, 3, 1, k).flatten())
        .collect();
    let mut group = c.benchmark_group("clustering");
    group.sample_size(10);
    group.bench_function("ward_20xmlp", |b| {
        b.iter(|| clustering::ward_linkage(black_box(&vectors)))
    });
    group.bench_function("kmeans_20xmlp_k4", |b| {
        b.iter(|| clustering::kmeans(black_box(&vectors), 4, &mut seeds::rng(0, "kmeans", 1, 0), 100))
    });
    group.finish();
}

criterion_group!(benches, bench_train_local, bench_loss_eval, bench_clustering);
criterion_main!(benches);
