//! IFCA: K cluster models are maintained jointly; every round each client
//! evaluates all K on its own training data, adopts the argmin, trains it,
//! and the server aggregates per adopted cluster. The whole procedure runs
//! once per restart (independent model initializations); the best restart
//! wins. The emitted trace is the winning restart's.

use super::{AlgoConfig, AlgoOutcome, Algorithm, Driver, PhaseTag};
use crate::data::ClientShard;
use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::runtime::ClusterAssignment;

/// One restart's result plus its selection scores.
pub(crate) struct RestartOutcome {
    pub outcome: AlgoOutcome,
    pub mean_train_accuracy: f64,
    pub mean_train_loss: f64,
}

/// Run a single restart from the given initial cluster models.
pub(crate) fn run_restart(
    shards: &[ClientShard],
    cfg: &AlgoConfig,
    run_seed: u64,
    initial_models: Vec<ModelParams>,
) -> Result<RestartOutcome> {
    let mut d = Driver::new(shards, cfg, run_seed)?;
    d.assignment = ClusterAssignment::new(vec![0; shards.len()], initial_models.len())?;
    d.cluster_models = initial_models;
    for _ in 0..cfg.rounds {
        let losses = d.all_losses();
        d.select_argmin(&losses);
        let mean = d.mean_assigned_loss(&losses);
        d.train_wave()?;
        d.aggregate_weighted_clusters()?;
        d.record(PhaseTag::Standard, mean);
    }
    let mean_train_accuracy = d.mean_train_accuracy();
    let mean_train_loss = d.mean_assigned_loss(&d.all_losses());
    Ok(RestartOutcome {
        outcome: d.finish(),
        mean_train_accuracy,
        mean_train_loss,
    })
}

pub fn run_ifca(shards: &[ClientShard], cfg: &AlgoConfig, run_seed: u64) -> Result<AlgoOutcome> {
    if cfg.algorithm != Algorithm::Ifca {
        return Err(Error::Config(format!(
            "run_ifca called with algorithm '{}'",
            cfg.algorithm
        )));
    }
    cfg.validate()?;
    let mut best: Option<(usize, RestartOutcome)> = None;
    let mut score_notes = Vec::with_capacity(cfg.ifca_restarts);
    for restart in 1..=cfg.ifca_restarts {
        let initial: Vec<ModelParams> = (1..=cfg.k)
            .map(|slot| {
                ModelParams::init_from_seed(cfg.dims, run_seed, restart as u64, slot as u64)
            })
            .collect();
        let candidate = run_restart(shards, cfg, run_seed, initial)?;
        score_notes.push(format!(
            "restart {restart}: mean train accuracy {:.6}, mean train loss {:.6}",
            candidate.mean_train_accuracy, candidate.mean_train_loss
        ));
        let better = match &best {
            None => true,
            Some((_, incumbent)) => {
                if cfg.ifca_winner_by_loss {
                    candidate.mean_train_loss < incumbent.mean_train_loss
                } else {
                    candidate.mean_train_accuracy > incumbent.mean_train_accuracy
                }
            }
        };
        if better {
            best = Some((restart, candidate));
        }
    }
    let (winner, mut result) = best.expect("at least one restart ran");
    result.outcome.trace.flags.extend(score_notes);
    result.outcome.trace.flags.push(format!(
        "selected restart {winner} of {} by {}",
        cfg.ifca_restarts,
        if cfg.ifca_winner_by_loss {
            "lowest mean train loss"
        } else {
            "highest mean train accuracy"
        }
    ));
    Ok(result.outcome)
}

#[cfg(test)]
mod tests {
    use super::super::testkit::{toy_cfg, toy_shards, toy_truth, TOY_DIMS};
    use super::super::run_fedavg;
    use super::*;
    use crate::clustering::adjusted_rand_index;
    use crate::nn::{self, TrainConfig};
    use crate::seeds;

    #[test]
    fn k1_single_restart_is_fedavg_bit_for_bit() {
        let shards = toy_shards(2, 2, 32, 3);
        let mut cfg = toy_cfg(Algorithm::Ifca, 1, 5);
        cfg.ifca_restarts = 1;
        let ifca = run_ifca(&shards, &cfg, 99).unwrap();
        let avg = run_fedavg(&shards, &toy_cfg(Algorithm::FedAvg, 1, 5), 99).unwrap();
        assert_eq!(ifca.models[0].flatten(), avg.models[0].flatten());
    }

    #[test]
    fn planted_cluster_models_are_adopted_in_round_one() {
        // Pre-train one model per group centrally, then hand them to a
        // restart as its initial models: the very first argmin selection
        // must already match the ground-truth groups.
        let shards = toy_shards(3, 2, 48, 21);
        let cfg = toy_cfg(Algorithm::Ifca, 2, 1);
        let planted: Vec<_> = (0..2)
            .map(|group| {
                let donor = &shards[group * 3];
                let tc = TrainConfig {
                    local_epochs: 12,
                    rng_seed: seeds::derive(500, "train", group as u64, 0),
                    ..cfg.train.clone()
                };
                nn::train_local(
                    &crate::nn::ModelParams::init_from_seed(TOY_DIMS, 500, 1, 1),
                    &donor.train_x,
                    &donor.train_y,
                    &tc,
                )
                .unwrap()
            })
            .collect();
        let restart = run_restart(&shards, &cfg, 500, planted).unwrap();
        let round1 = &restart.outcome.trace.rounds[0].membership;
        let ari = adjusted_rand_index(&toy_truth(&shards), round1).unwrap();
        assert_eq!(ari, 1.0, "round-1 memberships {round1:?}");
    }

    #[test]
    fn restarts_recover_conflicting_label_groups() {
        let shards = toy_shards(3, 2, 48, 31);
        let mut cfg = toy_cfg(Algorithm::Ifca, 2, 8);
        cfg.ifca_restarts = 5;
        let out = run_ifca(&shards, &cfg, 7).unwrap();
        let ari = adjusted_rand_index(&toy_truth(&shards), &out.assignment.membership).unwrap();
        assert_eq!(ari, 1.0, "assignment {:?}", out.assignment.membership);
        assert!(out
            .trace
            .flags
            .iter()
            .any(|f| f.starts_with("selected restart")));
    }

    #[test]
    fn trace_covers_only_the_winning_restart() {
        let shards = toy_shards(2, 2, 32, 41);
        let mut cfg = toy_cfg(Algorithm::Ifca, 2, 4);
        cfg.ifca_restarts = 3;
        let out = run_ifca(&shards, &cfg, 11).unwrap();
        assert_eq!(out.trace.rounds.len(), cfg.rounds);
        let restart_notes = out
            .trace
            .flags
            .iter()
            .filter(|f| f.starts_with("restart "))
            .count();
        assert_eq!(restart_notes, 3, "one score note per restart");
    }

    #[test]
    fn loss_based_winner_switch_is_respected() {
        let shards = toy_shards(2, 2, 32, 51);
        let mut cfg = toy_cfg(Algorithm::Ifca, 2, 3);
        cfg.ifca_restarts = 2;
        cfg.ifca_winner_by_loss = true;
        let out = run_ifca(&shards, &cfg, 13).unwrap();
        assert!(out
            .trace
            .flags
            .iter()
            .any(|f| f.contains("lowest mean train loss")));
    }
}
