//! Tiny synthetic federations for driver tests: near-one-hot inputs with
//! per-group label permutations, trivially learnable by a (6, 10, 4) MLP in
//! a handful of waves, yet impossible for a single global model when the
//! groups' label maps conflict.

use crate::data::ClientShard;
use crate::seeds;
use rand::Rng;
use std::sync::Arc;

pub(crate) const TOY_DIMS: (usize, usize, usize) = (6, 10, 4);

/// Label permutations per heterogeneity group; group 0 is the identity.
const GROUP_PERMS: [[u8; 4]; 4] = [[0, 1, 2, 3], [1, 0, 3, 2], [2, 3, 0, 1], [3, 2, 1, 0]];

fn draw(
    n: usize,
    perm: &[u8; 4],
    rng: &mut rand_chacha::ChaCha8Rng,
) -> (Vec<f64>, Vec<u8>) {
    let mut x = Vec::with_capacity(n * TOY_DIMS.0);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let pattern = rng.random_range(0..4usize);
        for d in 0..TOY_DIMS.0 {
            let base = if d == pattern { 1.0 } else { 0.0 };
            x.push(base + 0.1 * rng.random_range(0.0..1.0));
        }
        y.push(perm[pattern]);
    }
    (x, y)
}

/// `num_groups` heterogeneity groups of `clients_per_group` clients each,
/// every client holding `samples` training samples. Clients are ordered by
/// group; all clients of a group share one test set.
pub(crate) fn toy_shards(
    clients_per_group: usize,
    num_groups: usize,
    samples: usize,
    seed: u64,
) -> Vec<ClientShard> {
    assert!(num_groups <= GROUP_PERMS.len());
    let mut shards = Vec::new();
    for (group, perm) in GROUP_PERMS.iter().enumerate().take(num_groups) {
        let mut test_rng = seeds::rng(seed, "toytest", group as u64, 0);
        let (tx, ty) = draw(samples, perm, &mut test_rng);
        let test_x = Arc::new(tx);
        let test_y = Arc::new(ty);
        for c in 0..clients_per_group {
            let client_id = group * clients_per_group + c;
            let mut rng = seeds::rng(seed, "toyshard", client_id as u64, 0);
            let (train_x, train_y) = draw(samples, perm, &mut rng);
            shards.push(ClientShard {
                client_id,
                train_x,
                train_y,
                test_x: Arc::clone(&test_x),
                test_y: Arc::clone(&test_y),
                het_class: group,
                samples_per_label: samples / 4,
            });
        }
    }
    shards
}

/// Toy-scale config: tiny MLP, 2 local epochs, aggressive learning rate.
pub(crate) fn toy_cfg(
    algorithm: super::Algorithm,
    k: usize,
    rounds: usize,
) -> super::AlgoConfig {
    let mut cfg = super::AlgoConfig::new(algorithm, k, rounds);
    cfg.dims = TOY_DIMS;
    cfg.train.local_epochs = 2;
    cfg.train.learning_rate = 0.3;
    cfg.train.batch_size = 16;
    cfg
}

/// Ground-truth group labels for shards built by [`toy_shards`].
pub(crate) fn toy_truth(shards: &[ClientShard]) -> Vec<usize> {
    shards.iter().map(|s| s.het_class).collect()
}
