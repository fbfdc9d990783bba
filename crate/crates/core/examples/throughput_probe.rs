//! Quick wall-clock probe of desk-scale training cost (development aid).

use cflsim_core::nn::{self, ModelParams, TrainConfig};
use cflsim_core::seeds;
use rand::Rng;
use std::time::Instant;

fn main() {
    let dims = (784, 200, 10);
    let mut rng = seeds::rng(0, "probe", 0, 0);
    let model = ModelParams::init(dims, &mut rng);

    for &n in &[100usize, 250] {
        let x: Vec<f64> = (0..n * 784).map(|_| rng.random::<f64>()).collect();
        let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..10u8)).collect();
        let cfg = TrainConfig {
            local_epochs: 10,
            learning_rate: 0.05,
            batch_size: 32,
            prox_mu: 0.0,
            rng_seed: 1,
        };
        let t = Instant::now();
        let trained = nn::train_local(&model, &x, &y, &cfg).unwrap();
        let dt = t.elapsed().as_secs_f64();
        println!("train_local n={n} E=10: {dt:.3} s");
        let t = Instant::now();
        let loss = nn::mean_loss(&trained, &x, &y, n);
        println!("mean_loss  n={n}: {:.4} s (loss {loss:.3})", t.elapsed().as_secs_f64());
    }

    // Eval on a 625-sample test set (per-class desk test block).
    let n = 625;
    let x: Vec<f64> = (0..n * 784).map(|_| rng.random::<f64>()).collect();
    let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..10u8)).collect();
    let t = Instant::now();
    let acc = nn::evaluate(&model, &x, &y);
    println!("evaluate n=625: {:.4} s (acc {acc:.3})", t.elapsed().as_secs_f64());
}
