//! One-shot weight clustering: FedAvg up to the clustering round, then a
//! single clustering of the flattened client weights fixes the partition
//! for the rest of the run. CFL uses k-means; FL+HC uses Ward-linkage
//! agglomeration cut at K.

use super::{AlgoConfig, AlgoOutcome, Algorithm, Driver, PhaseTag, KMEANS_MAX_ITER};
use crate::clustering;
use crate::data::ClientShard;
use crate::error::{Error, Result};
use crate::runtime::ClusterAssignment;

fn run_oneshot(
    shards: &[ClientShard],
    cfg: &AlgoConfig,
    run_seed: u64,
    use_ward: bool,
) -> Result<AlgoOutcome> {
    let mut d = Driver::new(shards, cfg, run_seed)?;
    for r in 1..=cfg.rounds {
        let mean = d.assigned_mean_loss();
        d.train_wave()?;
        if r == cfg.clustering_round && cfg.k > 1 {
            let flat = d.flat_clients();
            let assignment = if use_ward {
                clustering::cut(&clustering::ward_linkage(&flat)?, cfg.k)?
            } else {
                let mut rng = d.kmeans_rng();
                clustering::kmeans(&flat, cfg.k, &mut rng, KMEANS_MAX_ITER)?
            };
            d.trace.flags.push(format!(
                "clustered at round {r}: cluster sizes {:?}",
                assignment.counts()
            ));
            // A cluster left empty by a stalled k-means falls back to the
            // pre-clustering global model.
            let carry = d.cluster_models[0].clone();
            d.set_assignment(assignment, carry);
        }
        d.aggregate_weighted_clusters()?;
        d.record(PhaseTag::Standard, mean);
    }
    Ok(d.finish())
}

/// One-shot CFL: k-means on flattened client weights at `clustering_round`.
pub fn run_cfl_oneshot(
    shards: &[ClientShard],
    cfg: &AlgoConfig,
    run_seed: u64,
) -> Result<AlgoOutcome> {
    if cfg.algorithm != Algorithm::Cfl {
        return Err(Error::Config(format!(
            "run_cfl_oneshot called with algorithm '{}'",
            cfg.algorithm
        )));
    }
    run_oneshot(shards, cfg, run_seed, false)
}

/// FL+HC: Ward-linkage agglomeration cut at K instead of k-means.
pub fn run_flhc(shards: &[ClientShard], cfg: &AlgoConfig, run_seed: u64) -> Result<AlgoOutcome> {
    if cfg.algorithm != Algorithm::FlHc {
        return Err(Error::Config(format!(
            "run_flhc called with algorithm '{}'",
            cfg.algorithm
        )));
    }
    run_oneshot(shards, cfg, run_seed, true)
}

/// Memberships recorded at the clustering round, for inspecting the
/// one-shot partition independently of later training.
pub fn oneshot_partition(outcome: &AlgoOutcome, cfg: &AlgoConfig) -> ClusterAssignment {
    let round = outcome
        .trace
        .rounds
        .iter()
        .find(|r| r.round == cfg.clustering_round as u64)
        .expect("clustering round present in trace");
    ClusterAssignment::new(round.membership.clone(), cfg.k).expect("trace membership valid")
}
