//! FedAvg and FedProx: N rounds of broadcast → local training → sample-
//! weighted aggregation over a single global model. FedProx is the same
//! loop with a proximal penalty anchored at each wave's broadcast model
//! (the anchor is the model a client starts the wave from).

use super::{AlgoConfig, AlgoOutcome, Algorithm, Driver, PhaseTag};
use crate::data::ClientShard;
use crate::error::{Error, Result};

fn run_single_global(shards: &[ClientShard], cfg: &AlgoConfig, run_seed: u64) -> Result<AlgoOutcome> {
    let mut d = Driver::new(shards, cfg, run_seed)?;
    for _ in 0..cfg.rounds {
        let mean = d.assigned_mean_loss();
        d.train_wave()?;
        d.aggregate_weighted_clusters()?;
        d.record(PhaseTag::Standard, mean);
    }
    Ok(d.finish())
}

pub fn run_fedavg(shards: &[ClientShard], cfg: &AlgoConfig, run_seed: u64) -> Result<AlgoOutcome> {
    if cfg.algorithm != Algorithm::FedAvg {
        return Err(Error::Config(format!(
            "run_fedavg called with algorithm '{}'",
            cfg.algorithm
        )));
    }
    run_single_global(shards, cfg, run_seed)
}

/// FedProx. μ = 0 is allowed and reproduces FedAvg bit-for-bit (the
/// proximal code path is skipped entirely at 0).
pub fn run_fedprox(shards: &[ClientShard], cfg: &AlgoConfig, run_seed: u64) -> Result<AlgoOutcome> {
    if cfg.algorithm != Algorithm::FedProx {
        return Err(Error::Config(format!(
            "run_fedprox called with algorithm '{}'",
            cfg.algorithm
        )));
    }
    run_single_global(shards, cfg, run_seed)
}

#[cfg(test)]
mod tests {
    use super::super::testkit::{toy_cfg, toy_shards, TOY_DIMS};
    use super::*;
    use crate::nn::{self, ModelParams, TrainConfig};
    use crate::seeds;

    #[test]
    fn single_client_federation_is_sequential_local_training() {
        let shards = toy_shards(1, 1, 32, 5);
        let cfg = toy_cfg(Algorithm::FedAvg, 1, 4);
        let outcome = run_fedavg(&shards, &cfg, 9).unwrap();

        // Aggregating a single client is the identity, so the run must be
        // bit-identical to chaining train_local with the per-wave seeds.
        let mut model = ModelParams::init_from_seed(TOY_DIMS, 9, 1, 1);
        for wave in 1..=4u64 {
            let tc = TrainConfig {
                rng_seed: seeds::derive(9, "train", wave, 0),
                ..cfg.train.clone()
            };
            model = nn::train_local(&model, &shards[0].train_x, &shards[0].train_y, &tc).unwrap();
        }
        assert_eq!(outcome.models[0].flatten(), model.flatten());
        assert_eq!(outcome.trace.rounds.len(), 4);
    }

    #[test]
    fn two_iid_clients_track_centralized_training() {
        // Both clients draw from the identity-label group, so federated
        // averaging should match training on the pooled data.
        let shards = toy_shards(2, 1, 48, 11);
        let cfg = toy_cfg(Algorithm::FedAvg, 1, 10);
        let outcome = run_fedavg(&shards, &cfg, 3).unwrap();
        let fed_acc = nn::evaluate(&outcome.models[0], &shards[0].test_x, &shards[0].test_y);

        let mut pooled_x = shards[0].train_x.clone();
        pooled_x.extend_from_slice(&shards[1].train_x);
        let mut pooled_y = shards[0].train_y.clone();
        pooled_y.extend_from_slice(&shards[1].train_y);
        let central_cfg = TrainConfig {
            local_epochs: cfg.train.local_epochs * 10,
            rng_seed: seeds::derive(3, "train", 1, 0),
            ..cfg.train.clone()
        };
        let central = nn::train_local(
            &ModelParams::init_from_seed(TOY_DIMS, 3, 1, 1),
            &pooled_x,
            &pooled_y,
            &central_cfg,
        )
        .unwrap();
        let central_acc = nn::evaluate(&central, &shards[0].test_x, &shards[0].test_y);
        assert!(
            (fed_acc - central_acc).abs() <= 0.02,
            "federated {fed_acc} vs centralized {central_acc}"
        );
    }

    #[test]
    fn fedprox_at_mu_zero_is_fedavg_bit_for_bit() {
        let shards = toy_shards(2, 2, 32, 7);
        let cfg_avg = toy_cfg(Algorithm::FedAvg, 1, 5);
        let mut cfg_prox = toy_cfg(Algorithm::FedProx, 1, 5);
        cfg_prox.prox_mu = 0.0;
        let a = run_fedavg(&shards, &cfg_avg, 21).unwrap();
        let b = run_fedprox(&shards, &cfg_prox, 21).unwrap();
        assert_eq!(a.models[0].flatten(), b.models[0].flatten());
        assert_eq!(a.trace.digest(), b.trace.digest());
    }

    #[test]
    fn huge_mu_pins_client_updates_to_the_anchor() {
        let shards = toy_shards(2, 2, 32, 13);
        // Compare per-wave client displacement from the broadcast model
        // under μ = 0 vs μ = 10⁶, same seeds, wave by wave. The proximal
        // step rescales displacement by (1 − lr·μ), so explicit SGD is only
        // contractive for lr·μ ≤ 1; both arms run at lr = 10⁻⁶ to place
        // μ = 10⁶ exactly in that regime rather than in blow-up.
        let mut cfg_free = toy_cfg(Algorithm::FedProx, 1, 3);
        cfg_free.train.learning_rate = 1e-6;
        let mut cfg_pinned = toy_cfg(Algorithm::FedProx, 1, 3);
        cfg_pinned.train.learning_rate = 1e-6;
        cfg_pinned.prox_mu = 1e6;
        let mut free = Driver::new(&shards, &cfg_free, 17).unwrap();
        let mut pinned = Driver::new(&shards, &cfg_pinned, 17).unwrap();
        for _ in 0..3 {
            let disp = |d: &Driver| -> f64 {
                let anchor = &d.cluster_models[0];
                d.client_models
                    .iter()
                    .map(|m| m.sq_distance(anchor).sqrt())
                    .sum::<f64>()
                    / d.client_models.len() as f64
            };
            free.train_wave().unwrap();
            pinned.train_wave().unwrap();
            assert!(
                disp(&pinned) < disp(&free),
                "μ = 1e6 displacement {} not below μ = 0 displacement {}",
                disp(&pinned),
                disp(&free)
            );
            free.aggregate_weighted_clusters().unwrap();
            pinned.aggregate_weighted_clusters().unwrap();
        }
    }

    #[test]
    fn prox_never_increases_client_dispersion_on_heterogeneous_shards() {
        let shards = toy_shards(1, 2, 32, 19);
        let cfg_avg = toy_cfg(Algorithm::FedProx, 1, 4);
        let mut cfg_prox = toy_cfg(Algorithm::FedProx, 1, 4);
        cfg_prox.prox_mu = 0.5;
        let pairwise = |d: &Driver| -> f64 {
            let mut total = 0.0;
            let mut pairs = 0;
            for i in 0..d.client_models.len() {
                for j in (i + 1)..d.client_models.len() {
                    total += d.client_models[i].sq_distance(&d.client_models[j]).sqrt();
                    pairs += 1;
                }
            }
            total / pairs as f64
        };
        let mut plain = Driver::new(&shards, &cfg_avg, 23).unwrap();
        let mut prox = Driver::new(&shards, &cfg_prox, 23).unwrap();
        for _ in 0..4 {
            plain.train_wave().unwrap();
            prox.train_wave().unwrap();
            assert!(pairwise(&prox) <= pairwise(&plain) + 1e-12);
            plain.aggregate_weighted_clusters().unwrap();
            prox.aggregate_weighted_clusters().unwrap();
        }
    }

    #[test]
    fn wrong_algorithm_tag_is_rejected() {
        let shards = toy_shards(1, 1, 16, 1);
        let cfg = toy_cfg(Algorithm::Cfl, 1, 4);
        assert!(run_fedavg(&shards, &cfg, 0).is_err());
    }
}
