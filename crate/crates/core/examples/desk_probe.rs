//! End-to-end desk-scale probe on rotated MNIST (development aid).
//!
//! Runs a handful of algorithms on one seed and prints accuracy / ARI so
//! desk-scale constants can be sanity-checked before they are frozen into
//! configs and the acceptance suite.

use cflsim_core::algorithms::{run_algorithm, AlgoConfig, Algorithm};
use cflsim_core::clustering::adjusted_rand_index;
use cflsim_core::data::{ground_truth, load_idx, partition, HeterogeneitySpec, QSKind, QSSpec};
use cflsim_core::nn;
use std::path::Path;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let qs_kind = match args.get(1).map(String::as_str) {
        Some("qs1") => QSKind::QS1,
        Some("qs2") => QSKind::QS2,
        _ => QSKind::NonQS,
    };
    let algos: Vec<Algorithm> = args
        .get(2)
        .map(|s| {
            s.split(',')
                .map(|a| a.parse().expect("algorithm id"))
                .collect()
        })
        .unwrap_or_else(|| vec![Algorithm::FedAvg, Algorithm::Cfl, Algorithm::FlHc, Algorithm::Cornflqs]);
    let k: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(4);
    let seed: u64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0);

    let dir = Path::new("data/mnist_subset");
    let train = load_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
        "mnist_subset",
    )
    .unwrap();
    let test = load_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
        "mnist_subset",
    )
    .unwrap();
    println!("train n={} test n={}", train.n, test.n);

    let het = HeterogeneitySpec::rotations();
    let qs = QSSpec::new(qs_kind, 25, vec![2, 8, 40, 80]);
    let shards = partition(&train, &test, &het, &qs, 20, seed).unwrap();
    let truth = ground_truth(&shards);

    for algo in algos {
        let mut cfg = AlgoConfig::new(algo, k, 20);
        cfg.dims = (784, 200, 10);
        let t = Instant::now();
        let out = run_algorithm(&shards, &cfg, seed).unwrap();
        let dt = t.elapsed().as_secs_f64();
        let accs: Vec<f64> = shards
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let m = &out.models[out.assignment.membership[i]];
                nn::evaluate(m, &s.test_x, &s.test_y)
            })
            .collect();
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let ari = adjusted_rand_index(&truth, &out.assignment.membership).unwrap();
        println!(
            "{algo:<9} {qs_kind:?} K={k} seed={seed}: acc {:.4} ari {ari:.3} [{dt:.0} s] membership {:?}",
            mean, out.assignment.membership
        );
    }
}
