//! The eight training strategies: FedAvg, FedProx, one-shot CFL, FL+HC,
//! FedGroup, IFCA, SRFCA, and CORNFLQS.
//!
//! Each algorithm is a driver over [`crate::runtime`] (broadcast, parallel
//! local training, deterministic aggregation) plus [`crate::clustering`].
//! Every run emits a per-round [`AlgoTrace`] and ends with the final
//! cluster models and [`ClusterAssignment`].
//!
//! All drivers share one seed-substream discipline (model init, per-wave
//! training shuffles, k-means draws), so any algorithm degenerating to a
//! single cluster reproduces FedAvg bit-for-bit under the same seed and
//! wave count.

mod cornflqs;
mod fedavg;
mod fedgroup;
mod ifca;
mod oneshot;
mod srfca;
#[cfg(test)]
pub(crate) mod testkit;

pub use cornflqs::run_cornflqs;
pub use fedavg::{run_fedavg, run_fedprox};
pub use fedgroup::run_fedgroup;
pub use ifca::run_ifca;
pub use oneshot::{oneshot_partition, run_cfl_oneshot, run_flhc};
pub use srfca::run_srfca;

use crate::data::ClientShard;
use crate::error::{Error, Result};
use crate::nn::{self, ModelParams, TrainConfig};
use crate::runtime::{self, ClusterAssignment};
use crate::seeds;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::str::FromStr;

/// Lloyd iteration cap shared by every k-means call site.
pub const KMEANS_MAX_ITER: usize = 100;

/// The eight supported training strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    FedAvg,
    FedProx,
    Cfl,
    FlHc,
    FedGroup,
    Ifca,
    Srfca,
    Cornflqs,
}

impl Algorithm {
    /// Every algorithm, in canonical report order.
    pub const ALL: [Algorithm; 8] = [
        Algorithm::FedAvg,
        Algorithm::FedProx,
        Algorithm::Cfl,
        Algorithm::FlHc,
        Algorithm::FedGroup,
        Algorithm::Ifca,
        Algorithm::Srfca,
        Algorithm::Cornflqs,
    ];

    /// Stable lowercase identifier used in configs, file names, and reports.
    pub fn id(&self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedProx => "fedprox",
            Algorithm::Cfl => "cfl",
            Algorithm::FlHc => "flhc",
            Algorithm::FedGroup => "fedgroup",
            Algorithm::Ifca => "ifca",
            Algorithm::Srfca => "srfca",
            Algorithm::Cornflqs => "cornflqs",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm '{s}'")))
    }
}

/// Phase label attached to each trace round. CORNFLQS uses the first four
/// in order; FedGroup and SRFCA tag their setup wave `Init`; everything
/// else is `Standard`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseTag {
    Init,
    Corn,
    LossCfl,
    FedAvgCfl,
    Standard,
}

impl PhaseTag {
    /// Rank for monotonicity checks: phases may only advance within a run.
    pub fn rank(&self) -> u8 {
        match self {
            PhaseTag::Init => 0,
            PhaseTag::Corn => 1,
            PhaseTag::LossCfl => 2,
            PhaseTag::FedAvgCfl => 3,
            PhaseTag::Standard => 4,
        }
    }
}

/// One communication wave's observable state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundTrace {
    /// 1-based wave counter, counting initialization waves too.
    pub round: u64,
    pub phase: PhaseTag,
    /// Cluster memberships in force at the end of the wave.
    pub membership: Vec<usize>,
    /// Mean over clients of the cross-entropy (on the client's own train
    /// shard) of the model the client received or selected this wave,
    /// measured before training it.
    pub mean_train_loss: f64,
    /// L2 norms of the server-side cluster models when the entry was
    /// recorded (end of wave).
    pub cluster_norms: Vec<f64>,
}

/// Full per-run trace: one entry per communication wave, plus free-form
/// flags (empty-cluster carries, restart/threshold selection notes).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AlgoTrace {
    pub rounds: Vec<RoundTrace>,
    pub flags: Vec<String>,
}

impl AlgoTrace {
    /// SHA-256 hex digest of the canonical JSON serialization; stored in
    /// run records so byte-identical reruns are checkable without keeping
    /// whole traces around.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("trace serializes");
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// True when phase ranks never decrease across rounds.
    pub fn phases_are_monotone(&self) -> bool {
        self.rounds
            .windows(2)
            .all(|w| w[0].phase.rank() <= w[1].phase.rank())
    }
}

/// Everything needed to run one algorithm on one partitioned scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AlgoConfig {
    pub algorithm: Algorithm,
    /// Cluster count K (ignored by SRFCA, which discovers its own).
    pub k: usize,
    /// Communication-round budget N. Initialization overheads (CORNFLQS +2,
    /// FedGroup +1) and per-restart / per-threshold reruns come on top.
    pub rounds: usize,
    /// One-shot clustering round for CFL and FL+HC (conventionally N/2).
    pub clustering_round: usize,
    pub ifca_restarts: usize,
    /// IFCA restart selection: mean train accuracy (false, default) or
    /// mean train loss (true).
    pub ifca_winner_by_loss: bool,
    /// Quantile pair bounding SRFCA's threshold grid.
    pub srfca_threshold_grid: (f64, f64),
    /// Number of thresholds tried across that quantile range.
    pub srfca_grid_size: usize,
    /// First refine-phase length; 0 means ⌈N/3⌉.
    pub srfca_refine_rounds: usize,
    /// Proximal coefficient (FedProx only; 0 degenerates to FedAvg).
    pub prox_mu: f64,
    /// Trim fraction for SRFCA's robust aggregation.
    pub trim_beta: f64,
    /// MLP shape (input, hidden, output).
    pub dims: (usize, usize, usize),
    /// Local-training hyperparameters. `rng_seed` and `prox_mu` inside are
    /// overridden per wave by the driver.
    pub train: TrainConfig,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        AlgoConfig {
            algorithm: Algorithm::FedAvg,
            k: 1,
            rounds: 20,
            clustering_round: 10,
            ifca_restarts: 5,
            ifca_winner_by_loss: false,
            srfca_threshold_grid: (0.10, 0.25),
            srfca_grid_size: 4,
            srfca_refine_rounds: 0,
            prox_mu: 0.0,
            trim_beta: 0.1,
            dims: (784, 200, 10),
            train: TrainConfig::default(),
        }
    }
}

impl AlgoConfig {
    /// Config with conventional defaults: clustering at N/2, 5 IFCA
    /// restarts, decile-to-quartile threshold grid.
    pub fn new(algorithm: Algorithm, k: usize, rounds: usize) -> Self {
        AlgoConfig {
            algorithm,
            k,
            rounds,
            clustering_round: (rounds / 2).max(1),
            ..AlgoConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("K must be ≥ 1".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Config("round budget must be ≥ 1".into()));
        }
        let (i, h, o) = self.dims;
        if i == 0 || h == 0 || o == 0 {
            return Err(Error::Config(format!("invalid model dims {:?}", self.dims)));
        }
        match self.algorithm {
            Algorithm::FedAvg if self.prox_mu != 0.0 => {
                return Err(Error::Config(
                    "fedavg takes prox_mu = 0; use fedprox for μ > 0".into(),
                ));
            }
            Algorithm::FedProx if self.prox_mu < 0.0 => {
                return Err(Error::Config(format!(
                    "fedprox needs prox_mu ≥ 0, got {}",
                    self.prox_mu
                )));
            }
            Algorithm::Cfl | Algorithm::FlHc => {
                if self.clustering_round == 0 || self.clustering_round >= self.rounds {
                    return Err(Error::Config(format!(
                        "clustering_round must satisfy 1 ≤ r < N, got {} with N = {}",
                        self.clustering_round, self.rounds
                    )));
                }
            }
            Algorithm::Ifca if self.ifca_restarts == 0 => {
                return Err(Error::Config("ifca needs at least 1 restart".into()));
            }
            Algorithm::Srfca => {
                let (lo, hi) = self.srfca_threshold_grid;
                if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                    return Err(Error::Config(format!(
                        "threshold quantile grid must satisfy 0 ≤ lo ≤ hi ≤ 1, got ({lo}, {hi})"
                    )));
                }
                if self.srfca_grid_size == 0 {
                    return Err(Error::Config("threshold grid needs ≥ 1 point".into()));
                }
                if !(0.0..0.5).contains(&self.trim_beta) {
                    return Err(Error::Config(format!(
                        "trim_beta must lie in [0, 0.5), got {}",
                        self.trim_beta
                    )));
                }
            }
            Algorithm::Cornflqs if self.rounds < 4 => {
                return Err(Error::Config(format!(
                    "cornflqs needs N ≥ 4, got {}",
                    self.rounds
                )));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Final state of a run: one model per cluster, the final memberships, and
/// the full trace.
#[derive(Debug, Clone)]
pub struct AlgoOutcome {
    pub models: Vec<ModelParams>,
    pub assignment: ClusterAssignment,
    pub trace: AlgoTrace,
}

/// Dispatch on `cfg.algorithm`.
pub fn run_algorithm(
    shards: &[ClientShard],
    cfg: &AlgoConfig,
    run_seed: u64,
) -> Result<AlgoOutcome> {
    match cfg.algorithm {
        Algorithm::FedAvg => run_fedavg(shards, cfg, run_seed),
        Algorithm::FedProx => run_fedprox(shards, cfg, run_seed),
        Algorithm::Cfl => run_cfl_oneshot(shards, cfg, run_seed),
        Algorithm::FlHc => run_flhc(shards, cfg, run_seed),
        Algorithm::FedGroup => run_fedgroup(shards, cfg, run_seed),
        Algorithm::Ifca => run_ifca(shards, cfg, run_seed),
        Algorithm::Srfca => run_srfca(shards, cfg, run_seed),
        Algorithm::Cornflqs => run_cornflqs(shards, cfg, run_seed),
    }
}

/// Shared per-run state machine. Owns the monotone wave counter that keys
/// every client's training substream, the k-means call counter, the current
/// server/client models, and the trace.
#[derive(Clone)]
pub(crate) struct Driver<'a> {
    pub shards: &'a [ClientShard],
    pub run_seed: u64,
    /// Monotone training-wave counter; wave w trains with substream
    /// ("train", w, client_id).
    pub wave: u64,
    kmeans_calls: u64,
    base_train: TrainConfig,
    pub cluster_models: Vec<ModelParams>,
    pub client_models: Vec<ModelParams>,
    pub assignment: ClusterAssignment,
    pub trace: AlgoTrace,
}

impl<'a> Driver<'a> {
    /// Validates the config against the shards and seeds the shared initial
    /// model W⁰ from substream ("init", 1, 1).
    pub fn new(shards: &'a [ClientShard], cfg: &'a AlgoConfig, run_seed: u64) -> Result<Self> {
        cfg.validate()?;
        if shards.is_empty() {
            return Err(Error::Config("no client shards given".into()));
        }
        if cfg.k > shards.len() {
            return Err(Error::Config(format!(
                "K = {} exceeds the {} clients available",
                cfg.k,
                shards.len()
            )));
        }
        let w0 = ModelParams::init_from_seed(cfg.dims, run_seed, 1, 1);
        let base_train = TrainConfig {
            prox_mu: cfg.prox_mu,
            ..cfg.train.clone()
        };
        Ok(Driver {
            shards,
            run_seed,
            wave: 0,
            kmeans_calls: 0,
            base_train,
            client_models: vec![w0.clone(); shards.len()],
            cluster_models: vec![w0],
            assignment: ClusterAssignment::single(shards.len()),
            trace: AlgoTrace::default(),
        })
    }

    /// Every client's train-shard loss against every current cluster model.
    pub fn all_losses(&self) -> Vec<Vec<f64>> {
        runtime::client_losses(&self.cluster_models, self.shards)
    }

    /// Mean over clients of the loss of their currently assigned model.
    pub fn mean_assigned_loss(&self, losses: &[Vec<f64>]) -> f64 {
        let total: f64 = losses
            .iter()
            .zip(&self.assignment.membership)
            .map(|(row, &k)| row[k])
            .sum();
        total / losses.len() as f64
    }

    /// [`Self::mean_assigned_loss`] without materializing the full loss
    /// matrix — for waves where clients only ever see their own cluster's
    /// model and no selection happens.
    pub fn assigned_mean_loss(&self) -> f64 {
        // Collect per-client losses first (index-stable under rayon), then
        // reduce sequentially: a parallel float sum's tree shape — and so
        // its rounding — would depend on the worker count.
        let losses: Vec<f64> = self
            .shards
            .par_iter()
            .map(|s| {
                let m = &self.cluster_models[self.assignment.membership[s.client_id]];
                nn::mean_loss(m, &s.train_x, &s.train_y, s.train_y.len())
            })
            .collect();
        losses.iter().sum::<f64>() / self.shards.len() as f64
    }

    /// Reassign every client to its argmin-loss model (ties → lowest
    /// index). Returns true when any membership label changed.
    pub fn select_argmin(&mut self, losses: &[Vec<f64>]) -> bool {
        let choices: Vec<usize> = losses.iter().map(|row| runtime::argmin_loss(row)).collect();
        let changed = choices != self.assignment.membership;
        self.assignment =
            ClusterAssignment::new(choices, self.cluster_models.len()).expect("argmin in range");
        changed
    }

    /// Replace the assignment (after a server-side clustering step),
    /// padding `cluster_models` with `carry` so that any cluster left
    /// empty by a later selection still has a model to fall back on.
    pub fn set_assignment(&mut self, assignment: ClusterAssignment, carry: ModelParams) {
        self.cluster_models = vec![carry; assignment.num_clusters];
        self.assignment = assignment;
    }

    /// One parallel local-training pass: every client trains its assigned
    /// cluster model on its own shard. Advances the wave counter.
    pub fn train_wave(&mut self) -> Result<()> {
        self.wave += 1;
        self.client_models = runtime::train_all(
            &self.cluster_models,
            &self.assignment,
            self.shards,
            &self.base_train,
            self.run_seed,
            self.wave,
        )?;
        Ok(())
    }

    /// Sample-weighted per-cluster aggregation of the current client
    /// models. Empty clusters keep their previous model and are flagged.
    pub fn aggregate_weighted_clusters(&mut self) -> Result<()> {
        let (models, empty) = runtime::aggregate_clusters(
            &self.client_models,
            &self.assignment,
            self.shards,
            &self.cluster_models,
        )?;
        for k in empty {
            self.trace
                .flags
                .push(format!("wave {}: cluster {k} empty, model carried over", self.wave));
        }
        self.cluster_models = models;
        Ok(())
    }

    /// Trimmed-mean per-cluster aggregation (SRFCA refine). Clusters too
    /// small to trim β from both sides fall back to the untrimmed mean;
    /// empty clusters keep their previous model. Both cases are flagged.
    pub fn aggregate_trimmed_clusters(&mut self, beta: f64) -> Result<()> {
        let mut next = Vec::with_capacity(self.assignment.num_clusters);
        for k in 0..self.assignment.num_clusters {
            let members = self.assignment.members(k);
            if members.is_empty() {
                self.trace
                    .flags
                    .push(format!("wave {}: cluster {k} empty, model carried over", self.wave));
                next.push(self.cluster_models[k].clone());
                continue;
            }
            let models: Vec<&ModelParams> =
                members.iter().map(|&i| &self.client_models[i]).collect();
            let cut_each = (beta * models.len() as f64).ceil() as usize;
            let beta_eff = if models.len() > 2 * cut_each { beta } else { 0.0 };
            if beta_eff != beta {
                self.trace.flags.push(format!(
                    "wave {}: cluster {k} has {} members, too few to trim β = {beta}; untrimmed mean used",
                    self.wave,
                    models.len()
                ));
            }
            next.push(runtime::aggregate_trimmed(&models, beta_eff)?);
        }
        self.cluster_models = next;
        Ok(())
    }

    /// Uniform (unweighted) aggregation of all client models into a single
    /// global model. Only meaningful while the assignment is trivial.
    pub fn aggregate_uniform_single(&mut self) -> Result<()> {
        let refs: Vec<&ModelParams> = self.client_models.iter().collect();
        self.cluster_models = vec![runtime::aggregate_uniform(&refs)?];
        Ok(())
    }

    /// Record one trace entry for the wave just finished.
    pub fn record(&mut self, phase: PhaseTag, mean_train_loss: f64) {
        self.trace.rounds.push(RoundTrace {
            round: self.wave,
            phase,
            membership: self.assignment.membership.clone(),
            mean_train_loss,
            cluster_norms: self.cluster_models.iter().map(|m| m.norm()).collect(),
        });
    }

    /// Fresh RNG for the next k-means invocation, keyed by a per-run call
    /// counter so repeated calls get independent substreams.
    pub fn kmeans_rng(&mut self) -> rand_chacha::ChaCha8Rng {
        self.kmeans_calls += 1;
        seeds::rng(self.run_seed, "kmeans", self.kmeans_calls, 0)
    }

    /// Flattened client weight vectors, in client order.
    pub fn flat_clients(&self) -> Vec<Vec<f64>> {
        self.client_models.iter().map(|m| m.flatten()).collect()
    }

    /// Mean over clients of their assigned cluster model's accuracy on
    /// their own train shard (restart / threshold selection score).
    pub fn mean_train_accuracy(&self) -> f64 {
        // Same worker-count hazard as `assigned_mean_loss`: parallel map,
        // sequential sum.
        let accs: Vec<f64> = self
            .shards
            .par_iter()
            .map(|s| {
                let model = &self.cluster_models[self.assignment.membership[s.client_id]];
                nn::evaluate(model, &s.train_x, &s.train_y)
            })
            .collect();
        accs.iter().sum::<f64>() / self.shards.len() as f64
    }

    pub fn finish(self) -> AlgoOutcome {
        AlgoOutcome {
            models: self.cluster_models,
            assignment: self.assignment,
            trace: self.trace,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algorithm_ids_roundtrip() {
        for algo in Algorithm::ALL {
            assert_eq!(algo.id().parse::<Algorithm>().unwrap(), algo);
            assert_eq!(format!("{algo}"), algo.id());
        }
        assert!("fedsgd".parse::<Algorithm>().is_err());
    }

    #[test]
    fn default_config_validates_for_every_algorithm() {
        for algo in Algorithm::ALL {
            let mut cfg = AlgoConfig::new(algo, 4, 20);
            if algo == Algorithm::FedProx {
                cfg.prox_mu = 0.1;
            }
            cfg.validate().unwrap_or_else(|e| panic!("{algo}: {e}"));
        }
    }

    #[test]
    fn config_invariants_are_enforced() {
        let mut cfg = AlgoConfig::new(Algorithm::Cfl, 0, 20);
        assert!(cfg.validate().is_err(), "K = 0 rejected");
        cfg = AlgoConfig::new(Algorithm::Cfl, 2, 20);
        cfg.clustering_round = 20;
        assert!(cfg.validate().is_err(), "clustering_round ≥ N rejected");
        cfg = AlgoConfig::new(Algorithm::Ifca, 2, 20);
        cfg.ifca_restarts = 0;
        assert!(cfg.validate().is_err(), "0 restarts rejected");
        cfg = AlgoConfig::new(Algorithm::Cornflqs, 2, 3);
        assert!(cfg.validate().is_err(), "cornflqs N < 4 rejected");
        cfg = AlgoConfig::new(Algorithm::FedAvg, 1, 20);
        cfg.prox_mu = 0.5;
        assert!(cfg.validate().is_err(), "fedavg with μ > 0 rejected");
        cfg = AlgoConfig::new(Algorithm::Srfca, 1, 20);
        cfg.srfca_threshold_grid = (0.5, 0.2);
        assert!(cfg.validate().is_err(), "descending quantile pair rejected");
    }

    #[test]
    fn trace_digest_is_stable_and_content_sensitive() {
        let mut trace = AlgoTrace::default();
        trace.rounds.push(RoundTrace {
            round: 1,
            phase: PhaseTag::Standard,
            membership: vec![0, 0, 1],
            mean_train_loss: 1.25,
            cluster_norms: vec![3.0, 4.0],
        });
        let d1 = trace.digest();
        assert_eq!(d1, trace.digest(), "digest is deterministic");
        assert_eq!(d1.len(), 64);
        trace.rounds[0].mean_train_loss = 1.26;
        assert_ne!(d1, trace.digest(), "digest sees content changes");
    }

    #[test]
    fn phase_ranks_order_the_cornflqs_pipeline() {
        let order = [
            PhaseTag::Init,
            PhaseTag::Corn,
            PhaseTag::LossCfl,
            PhaseTag::FedAvgCfl,
        ];
        for w in order.windows(2) {
            assert!(w[0].rank() < w[1].rank());
        }
    }

    #[test]
    fn argmin_selection_is_scale_invariant() {
        let losses = vec![vec![0.9, 0.3, 0.5], vec![0.2, 0.6, 0.1], vec![0.4, 0.4, 0.8]];
        let scaled: Vec<Vec<f64>> = losses
            .iter()
            .map(|row| row.iter().map(|l| l * 17.5).collect())
            .collect();
        let pick = |m: &[Vec<f64>]| -> Vec<usize> {
            m.iter().map(|row| runtime::argmin_loss(row)).collect()
        };
        assert_eq!(pick(&losses), pick(&scaled));
        assert_eq!(pick(&losses), vec![1, 2, 0]);
    }
}
