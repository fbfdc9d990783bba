//! CORNFLQS: four phases over one round budget N.
//!
//! 1. **Init** (2 extra waves): broadcast the shared initial model, train,
//!    average *uniformly*, broadcast, train again — producing the client
//!    weights the first CORN round clusters. Consumes no budget rounds.
//! 2. **CORN** (rounds 1..⌈N/2⌉): each round the server Ward-clusters the
//!    client weights into K groups and aggregates per group
//!    (sample-weighted); every client receives all K models, adopts the
//!    argmin-loss one, and trains it. The phase ends early as soon as the
//!    weight-based partition and the clients' loss-based choices agree as
//!    partitions (up to relabeling — the two live in unrelated label
//!    spaces).
//! 3. **LossBasedCFL** (until memberships stop changing or r = N): same
//!    loop without the server-side weight clustering; clients keep
//!    re-choosing among the K cluster models.
//! 4. **FedAvgforCFL** (remaining rounds): memberships frozen; each client
//!    receives only its own cluster's model. Skipped when phase 3 already
//!    exhausted the budget.

use super::{AlgoConfig, AlgoOutcome, Algorithm, Driver, PhaseTag};
use crate::clustering;
use crate::data::ClientShard;
use crate::error::{Error, Result};
use crate::runtime::ClusterAssignment;

pub fn run_cornflqs(
    shards: &[ClientShard],
    cfg: &AlgoConfig,
    run_seed: u64,
) -> Result<AlgoOutcome> {
    if cfg.algorithm != Algorithm::Cornflqs {
        return Err(Error::Config(format!(
            "run_cornflqs called with algorithm '{}'",
            cfg.algorithm
        )));
    }
    let mut d = Driver::new(shards, cfg, run_seed)?;
    let n_clients = shards.len();

    // Phase 1 — initialization, two waves outside the round budget.
    let mean = d.assigned_mean_loss();
    d.train_wave()?;
    d.aggregate_uniform_single()?;
    d.record(PhaseTag::Init, mean);

    let mean = d.assigned_mean_loss();
    d.train_wave()?;
    // No aggregation: these client models seed the first weight clustering.
    d.record(PhaseTag::Init, mean);

    // Phase 2 — CORN: alternate weight clustering and loss-based choice.
    let corn_limit = cfg.rounds.div_ceil(2);
    let mut r = 0usize;
    let mut agreed = false;
    while r < corn_limit && !agreed {
        r += 1;
        let weight_assignment = if cfg.k == 1 {
            ClusterAssignment::single(n_clients)
        } else {
            clustering::cut(&clustering::ward_linkage(&d.flat_clients())?, cfg.k)?
        };
        // Every Ward cut is exhaustive over clients, so no cluster is empty
        // and the previous (possibly shorter) model list is never consulted.
        d.assignment = weight_assignment.clone();
        d.aggregate_weighted_clusters()?;
        let losses = d.all_losses();
        d.select_argmin(&losses);
        agreed = weight_assignment.same_partition(&d.assignment);
        let mean = d.mean_assigned_loss(&losses);
        d.train_wave()?;
        d.record(PhaseTag::Corn, mean);
    }
    d.trace.flags.push(if agreed {
        format!("corn: weight and loss partitions agreed at round {r}")
    } else {
        format!("corn: no agreement within {corn_limit} rounds")
    });

    // Phase 3 — loss-based CFL: no more weight clustering.
    let mut changed = true;
    while r < cfg.rounds && changed {
        r += 1;
        d.aggregate_weighted_clusters()?;
        let losses = d.all_losses();
        changed = d.select_argmin(&losses);
        let mean = d.mean_assigned_loss(&losses);
        d.train_wave()?;
        d.record(PhaseTag::LossCfl, mean);
    }
    if changed {
        d.trace
            .flags
            .push("losscfl: memberships still changing at budget; final phase skipped".into());
    } else {
        d.trace
            .flags
            .push(format!("losscfl: memberships stabilized at round {r}"));
    }

    // Phase 4 — per-cluster FedAvg over the frozen memberships.
    while r < cfg.rounds {
        r += 1;
        d.aggregate_weighted_clusters()?;
        let mean = d.assigned_mean_loss();
        d.train_wave()?;
        d.record(PhaseTag::FedAvgCfl, mean);
    }

    // Final server-side aggregate of the last wave's client models.
    d.aggregate_weighted_clusters()?;
    Ok(d.finish())
}
