//! The simulated communication-round engine.
//!
//! One round is: broadcast each cluster's model to its members, train every
//! client locally (in parallel — results are collected in client order, so
//! output is identical for any worker count), then aggregate client models
//! per cluster. Aggregation is a single-threaded reduction in ascending
//! client-id order; floating-point results are therefore bit-stable.
//!
//! All three aggregation rules share one accumulation kernel (`acc +=
//! weight · value` in client order). That makes the algebraic coincidences
//! between them exact in floating point too: uniform equals weighted with
//! equal sizes bit-for-bit, and β = 0 trimming equals uniform bit-for-bit —
//! properties the K = 1 algorithm-reduction contract relies on.

use crate::data::ClientShard;
use crate::error::{Error, Result};
use crate::nn::{self, ModelParams, TrainConfig};
use crate::seeds;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// The map from client index to cluster id at one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub membership: Vec<usize>,
    pub num_clusters: usize,
}

impl ClusterAssignment {
    pub fn new(membership: Vec<usize>, num_clusters: usize) -> Result<Self> {
        if let Some(&bad) = membership.iter().find(|&&m| m >= num_clusters) {
            return Err(Error::Config(format!(
                "membership value {bad} outside [0, {num_clusters})"
            )));
        }
        Ok(ClusterAssignment {
            membership,
            num_clusters,
        })
    }

    /// Everyone in cluster 0.
    pub fn single(num_clients: usize) -> Self {
        ClusterAssignment {
            membership: vec![0; num_clients],
            num_clusters: 1,
        }
    }

    pub fn num_clients(&self) -> usize {
        self.membership.len()
    }

    /// Client indices of cluster `k`, ascending.
    pub fn members(&self, k: usize) -> Vec<usize> {
        self.membership
            .iter()
            .enumerate()
            .filter(|(_, &m)| m == k)
            .map(|(i, _)| i)
            .collect()
    }

    /// Cluster populations.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_clusters];
        for &m in &self.membership {
            counts[m] += 1;
        }
        counts
    }

    /// True when the two assignments induce the same partition of clients,
    /// i.e. they are equal up to a relabeling of cluster ids.
    pub fn same_partition(&self, other: &ClusterAssignment) -> bool {
        if self.membership.len() != other.membership.len() {
            return false;
        }
        let mut fwd = vec![usize::MAX; self.num_clusters];
        let mut bwd = vec![usize::MAX; other.num_clusters];
        for (&a, &b) in self.membership.iter().zip(&other.membership) {
            if fwd[a] == usize::MAX {
                fwd[a] = b;
            } else if fwd[a] != b {
                return false;
            }
            if bwd[b] == usize::MAX {
                bwd[b] = a;
            } else if bwd[b] != a {
                return false;
            }
        }
        true
    }
}

/// Full state between rounds: the cluster models, the most recent client
/// models, and the current assignment.
#[derive(Debug, Clone)]
pub struct RoundState {
    pub round: usize,
    pub cluster_models: Vec<ModelParams>,
    pub client_models: Vec<ModelParams>,
    pub assignment: ClusterAssignment,
}

/// Shared accumulation kernel: `out[p] = Σ_j weights[j] · models[j][p]`,
/// summed in slice order (callers pass ascending client id).
fn accumulate(models: &[&ModelParams], weights: &[f64]) -> ModelParams {
    let mut out = ModelParams::zeros(models[0].dims);
    for (model, &weight) in models.iter().zip(weights) {
        for (ol, ml) in out.layers.iter_mut().zip(&model.layers) {
            for (o, &m) in ol.w.iter_mut().zip(&ml.w) {
                *o += weight * m;
            }
            for (o, &m) in ol.b.iter_mut().zip(&ml.b) {
                *o += weight * m;
            }
        }
    }
    out
}

fn check_shapes(models: &[&ModelParams]) -> Result<()> {
    if models.is_empty() {
        return Err(Error::Data("cannot aggregate an empty cluster".into()));
    }
    if models.iter().any(|m| m.dims != models[0].dims) {
        return Err(Error::Config("aggregation inputs have mismatched shapes".into()));
    }
    Ok(())
}

/// Sample-size weighted average: weights |D_i| / Σ|D_j|.
pub fn aggregate_weighted(models: &[&ModelParams], sizes: &[usize]) -> Result<ModelParams> {
    check_shapes(models)?;
    if sizes.len() != models.len() || sizes.contains(&0) {
        return Err(Error::Config(format!(
            "need one positive size per model: {} sizes for {} models",
            sizes.len(),
            models.len()
        )));
    }
    let total: f64 = sizes.iter().map(|&s| s as f64).sum();
    let weights: Vec<f64> = sizes.iter().map(|&s| s as f64 / total).collect();
    Ok(accumulate(models, &weights))
}

/// Unweighted average (the deliberately fair initialization rule).
pub fn aggregate_uniform(models: &[&ModelParams]) -> Result<ModelParams> {
    check_shapes(models)?;
    let weight = 1.0 / models.len() as f64;
    Ok(accumulate(models, &vec![weight; models.len()]))
}

/// Per-coordinate trimmed mean: drop the ⌈β·n⌉ lowest and highest values
/// of every coordinate, average the rest. The kept values are accumulated
/// in ascending client order so β = 0 reproduces [`aggregate_uniform`]
/// bit-for-bit.
pub fn aggregate_trimmed(models: &[&ModelParams], beta: f64) -> Result<ModelParams> {
    check_shapes(models)?;
    if !(0.0..0.5).contains(&beta) {
        return Err(Error::Config(format!("trim fraction {beta} outside [0, 0.5)")));
    }
    let n = models.len();
    let k = (beta * n as f64).ceil() as usize;
    if 2 * k >= n {
        return Err(Error::Config(format!(
            "trimming {k} from each side leaves nothing of {n} models"
        )));
    }
    let weight = 1.0 / (n - 2 * k) as f64;
    let mut out = ModelParams::zeros(models[0].dims);
    let mut column: Vec<(f64, usize)> = vec![(0.0, 0); n];
    let mut kept: Vec<usize> = Vec::with_capacity(n);
    for l in 0..out.layers.len() {
        for which in 0..2 {
            let len = if which == 0 {
                out.layers[l].w.len()
            } else {
                out.layers[l].b.len()
            };
            for p in 0..len {
                for (j, model) in models.iter().enumerate() {
                    let v = if which == 0 {
                        model.layers[l].w[p]
                    } else {
                        model.layers[l].b[p]
                    };
                    column[j] = (v, j);
                }
                // Stable by construction: ties keep client order.
                column.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                kept.clear();
                kept.extend(column[k..n - k].iter().map(|&(_, j)| j));
                kept.sort_unstable();
                let mut acc = 0.0;
                for &j in &kept {
                    let v = if which == 0 {
                        models[j].layers[l].w[p]
                    } else {
                        models[j].layers[l].b[p]
                    };
                    acc += weight * v;
                }
                if which == 0 {
                    out.layers[l].w[p] = acc;
                } else {
                    out.layers[l].b[p] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Train every client from its assigned cluster model, in parallel.
///
/// `counter` is the run's training-wave counter; together with the client
/// id it derives each client's private shuffle stream, so results do not
/// depend on scheduling. Returns client models in client order.
pub fn train_all(
    cluster_models: &[ModelParams],
    assignment: &ClusterAssignment,
    shards: &[ClientShard],
    base: &TrainConfig,
    run_seed: u64,
    counter: u64,
) -> Result<Vec<ModelParams>> {
    if assignment.num_clients() != shards.len() {
        return Err(Error::Config(format!(
            "assignment covers {} clients, {} shards given",
            assignment.num_clients(),
            shards.len()
        )));
    }
    shards
        .par_iter()
        .map(|shard| {
            let k = assignment.membership[shard.client_id];
            let cfg = TrainConfig {
                rng_seed: seeds::derive(run_seed, "train", counter, shard.client_id as u64),
                ..base.clone()
            };
            nn::train_local(&cluster_models[k], &shard.train_x, &shard.train_y, &cfg)
        })
        .collect()
}

/// Aggregate client models per cluster, sample-weighted. Empty clusters
/// carry over their previous model unchanged. Returns the new cluster
/// models and the list of empty cluster ids (for trace flagging).
#[allow(clippy::needless_range_loop)] // k is a cluster id used in three roles, not a loop over one slice
pub fn aggregate_clusters(
    client_models: &[ModelParams],
    assignment: &ClusterAssignment,
    shards: &[ClientShard],
    previous: &[ModelParams],
) -> Result<(Vec<ModelParams>, Vec<usize>)> {
    let mut next = Vec::with_capacity(assignment.num_clusters);
    let mut empty = Vec::new();
    for k in 0..assignment.num_clusters {
        let members = assignment.members(k);
        if members.is_empty() {
            next.push(previous[k].clone());
            empty.push(k);
            continue;
        }
        let models: Vec<&ModelParams> = members.iter().map(|&i| &client_models[i]).collect();
        let sizes: Vec<usize> = members.iter().map(|&i| shards[i].num_train()).collect();
        next.push(aggregate_weighted(&models, &sizes)?);
    }
    Ok((next, empty))
}

/// One fixed-assignment communication round: train members from their
/// cluster models, aggregate per cluster.
pub fn run_round(
    state: &RoundState,
    shards: &[ClientShard],
    base: &TrainConfig,
    run_seed: u64,
    counter: u64,
) -> Result<RoundState> {
    let client_models = train_all(
        &state.cluster_models,
        &state.assignment,
        shards,
        base,
        run_seed,
        counter,
    )?;
    let (cluster_models, _) = aggregate_clusters(
        &client_models,
        &state.assignment,
        shards,
        &state.cluster_models,
    )?;
    Ok(RoundState {
        round: state.round + 1,
        cluster_models,
        client_models,
        assignment: state.assignment.clone(),
    })
}

/// Every client's loss for every candidate model (`n_clients × n_models`),
/// evaluated on the client's own training shard, in parallel.
pub fn client_losses(models: &[ModelParams], shards: &[ClientShard]) -> Vec<Vec<f64>> {
    shards
        .par_iter()
        .map(|shard| {
            models
                .iter()
                .map(|m| nn::mean_loss(m, &shard.train_x, &shard.train_y, shard.train_y.len()))
                .collect()
        })
        .collect()
}

/// Index of the smallest loss; ties break toward the lowest index.
pub fn argmin_loss(losses: &[f64]) -> usize {
    let mut best = 0;
    for (k, &l) in losses.iter().enumerate() {
        if l < losses[best] {
            best = k;
        }
    }
    best
}
