//! FedGroup: a cold-start wave (broadcast the initial model, one local
//! training pass) feeds EDC features of the client updates into k-means;
//! the resulting fixed partition then trains per-cluster for the full N
//! rounds. Total cost is N + 1 waves (the cold start is initialization
//! overhead, not part of the round budget).

use super::{AlgoConfig, AlgoOutcome, Algorithm, Driver, PhaseTag, KMEANS_MAX_ITER};
use crate::clustering;
use crate::data::ClientShard;
use crate::error::{Error, Result};

pub fn run_fedgroup(
    shards: &[ClientShard],
    cfg: &AlgoConfig,
    run_seed: u64,
) -> Result<AlgoOutcome> {
    if cfg.algorithm != Algorithm::FedGroup {
        return Err(Error::Config(format!(
            "run_fedgroup called with algorithm '{}'",
            cfg.algorithm
        )));
    }
    let mut d = Driver::new(shards, cfg, run_seed)?;

    // Cold start: one local pass from the shared initial model.
    let mean = d.assigned_mean_loss();
    let w0_flat = d.cluster_models[0].flatten();
    d.train_wave()?;
    if cfg.k > 1 {
        let updates: Vec<Vec<f64>> = d
            .client_models
            .iter()
            .map(|m| {
                m.flatten()
                    .iter()
                    .zip(&w0_flat)
                    .map(|(w, w0)| w - w0)
                    .collect()
            })
            .collect();
        // K feature directions: one discriminative axis per sought cluster.
        let (features, flagged) = clustering::edc_features(&updates, cfg.k)?;
        for i in flagged {
            d.trace
                .flags
                .push(format!("cold start: client {i} produced a zero update"));
        }
        let mut rng = d.kmeans_rng();
        let assignment = clustering::kmeans(&features, cfg.k, &mut rng, KMEANS_MAX_ITER)?;
        d.trace.flags.push(format!(
            "cold-start clustering: cluster sizes {:?}",
            assignment.counts()
        ));
        let carry = d.cluster_models[0].clone();
        d.set_assignment(assignment, carry);
    }
    d.aggregate_weighted_clusters()?;
    d.record(PhaseTag::Init, mean);

    // N per-cluster rounds over the frozen partition.
    for _ in 0..cfg.rounds {
        let mean = d.assigned_mean_loss();
        d.train_wave()?;
        d.aggregate_weighted_clusters()?;
        d.record(PhaseTag::Standard, mean);
    }
    Ok(d.finish())
}
