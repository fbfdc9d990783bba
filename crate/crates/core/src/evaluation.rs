//! Per-run measurement records and cross-run aggregation.
//!
//! [`RunRecord`] captures everything measured about one (scenario, algorithm,
//! seed) execution. The operations in this module reduce sets of records to
//! the benchmark's headline numbers: mean global accuracy, client-accuracy
//! dispersion, ΔARI between quantity-skew regimes, average ranks, and
//! pairwise win rates.
//!
//! Conventions fixed here (no universal standard exists, so they are pinned
//! for comparability across runs):
//!
//! - standard deviations are **population** (divide by n), both across
//!   clients and across seeds;
//! - win-rate **ties count 0.5** for each side; the diagonal is undefined;
//! - rank 1 is the *highest* accuracy; tied entries share the mean of the
//!   positions they span;
//! - ΔARI pairs runs whose (dataset, heterogeneity, K, algorithm, seed)
//!   agree, with only the quantity-skew regime differing; the cross-cell
//!   summary is the mean of |Δ|.

use crate::algorithms::{AlgoOutcome, Algorithm};
use crate::clustering::adjusted_rand_index;
use crate::data::{ground_truth, ClientShard};
use crate::error::{Error, Result};
use crate::experiment::ScenarioSpec;
use crate::nn;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Everything measured about one (scenario, algorithm, seed) execution.
///
/// Records are self-describing: they embed the full [`ScenarioSpec`], so
/// reports need no external context. `wall_clock_secs` is informational and
/// deliberately excluded from serialization — rerunning a sweep must produce
/// byte-identical record files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: ScenarioSpec,
    /// Stable algorithm identifier (`fedavg`, `cornflqs`, …).
    pub algorithm: String,
    pub seed: u64,
    /// Test accuracy of each client under its assigned cluster model.
    pub per_client_accuracy: Vec<f64>,
    /// Final cluster membership, in client order.
    pub final_assignment: Vec<usize>,
    /// Adjusted Rand Index of `final_assignment` against the ground-truth
    /// heterogeneity classes.
    pub ari: f64,
    /// SHA-256 digest of the run's full trace.
    pub trace_digest: String,
    /// Human-readable notes accumulated by the algorithm driver.
    pub flags: Vec<String>,
    /// Run duration in seconds; in-memory only (see type docs).
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl RunRecord {
    /// Measure a finished run: per-client test accuracy under the assigned
    /// cluster models, ARI against the ground-truth heterogeneity classes,
    /// and the trace digest.
    pub fn measure(
        scenario: &ScenarioSpec,
        algorithm: Algorithm,
        seed: u64,
        outcome: &AlgoOutcome,
        shards: &[ClientShard],
    ) -> Result<RunRecord> {
        let membership = &outcome.assignment.membership;
        if membership.len() != shards.len() {
            return Err(Error::Config(format!(
                "assignment covers {} clients, shards cover {}",
                membership.len(),
                shards.len()
            )));
        }
        let per_client_accuracy: Vec<f64> = shards
            .iter()
            .enumerate()
            .map(|(i, s)| nn::evaluate(&outcome.models[membership[i]], &s.test_x, &s.test_y))
            .collect();
        let ari = adjusted_rand_index(&ground_truth(shards), membership)?;
        let record = RunRecord {
            scenario: scenario.clone(),
            algorithm: algorithm.id().to_string(),
            seed,
            per_client_accuracy,
            final_assignment: membership.clone(),
            ari,
            trace_digest: outcome.trace.digest(),
            flags: outcome.trace.flags.clone(),
            wall_clock_secs: 0.0,
        };
        record.validate()?;
        Ok(record)
    }

    /// Structural invariants: accuracy vector length matches the scenario's
    /// client count, accuracies lie in [0, 1], ARI lies in [−1, 1].
    pub fn validate(&self) -> Result<()> {
        if self.per_client_accuracy.len() != self.scenario.num_clients {
            return Err(Error::Config(format!(
                "record has {} client accuracies for {} clients",
                self.per_client_accuracy.len(),
                self.scenario.num_clients
            )));
        }
        if self.final_assignment.len() != self.scenario.num_clients {
            return Err(Error::Config(format!(
                "record assignment covers {} of {} clients",
                self.final_assignment.len(),
                self.scenario.num_clients
            )));
        }
        if !self.per_client_accuracy.iter().all(|a| (0.0..=1.0).contains(a)) {
            return Err(Error::Config("client accuracy outside [0, 1]".into()));
        }
        if !(-1.0..=1.0).contains(&self.ari) {
            return Err(Error::Config(format!("ARI {} outside [−1, 1]", self.ari)));
        }
        Ok(())
    }

    /// Key of the experiment cell this record competes in: scenario plus
    /// seed, *excluding* the algorithm. Ranks and win rates compare all
    /// algorithms that share one experiment key.
    pub fn experiment_key(&self) -> String {
        format!(
            "{}|{}|{}|k{}|s{}",
            self.scenario.dataset,
            self.scenario.het.id(),
            self.scenario.qs.id(),
            self.scenario.k,
            self.seed
        )
    }

    /// Key used to pair records across quantity-skew regimes for ΔARI:
    /// everything except the QS kind.
    pub fn align_key(&self) -> String {
        format!(
            "{}|{}|k{}|{}|s{}",
            self.scenario.dataset,
            self.scenario.het.id(),
            self.scenario.k,
            self.algorithm,
            self.seed
        )
    }
}

/// Arithmetic mean; NaN on an empty slice.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation (divide by n); NaN on an empty slice.
pub fn population_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Mean test accuracy across clients — the headline "Acc" of a run.
///
/// Unweighted: every client counts once regardless of its shard size.
pub fn global_accuracy(record: &RunRecord) -> f64 {
    mean(&record.per_client_accuracy)
}

/// Population standard deviation of client-level accuracies — the
/// performance-disparity measure reported next to the mean.
pub fn client_acc_std(record: &RunRecord) -> f64 {
    population_std(&record.per_client_accuracy)
}

/// Mean ΔARI between two aligned record sets: for each pair with equal
/// [`RunRecord::align_key`], `ari_a − ari_b`, averaged over pairs.
///
/// Errors if the sets do not pair up exactly (missing partner, duplicate
/// key, or size mismatch). Antisymmetric by construction:
/// `delta_ari(a, b) == -delta_ari(b, a)`.
pub fn delta_ari(records_a: &[RunRecord], records_b: &[RunRecord]) -> Result<f64> {
    if records_a.is_empty() || records_a.len() != records_b.len() {
        return Err(Error::Config(format!(
            "ΔARI needs equally sized non-empty record sets, got {} vs {}",
            records_a.len(),
            records_b.len()
        )));
    }
    let mut partners: BTreeMap<String, f64> = BTreeMap::new();
    for r in records_b {
        if partners.insert(r.align_key(), r.ari).is_some() {
            return Err(Error::Config(format!(
                "duplicate record for alignment key {}",
                r.align_key()
            )));
        }
    }
    let mut sum = 0.0;
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for r in records_a {
        let key = r.align_key();
        if !seen.insert(key.clone()) {
            return Err(Error::Config(format!("duplicate record for alignment key {key}")));
        }
        let partner = partners
            .get(&key)
            .ok_or_else(|| Error::Config(format!("no aligned partner for {key}")))?;
        sum += r.ari - partner;
    }
    Ok(sum / records_a.len() as f64)
}

/// Mean absolute value — the cross-cell summary rule for ΔARI columns.
pub fn mean_abs(deltas: &[f64]) -> f64 {
    if deltas.is_empty() {
        return f64::NAN;
    }
    deltas.iter().map(|d| d.abs()).sum::<f64>() / deltas.len() as f64
}

/// Competition ranks for `values`, rank 1 = largest; exact ties share the
/// mean of the positions they span, so the ranks of `n` values always sum
/// to `n(n+1)/2`.
pub fn ranks_desc(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).expect("NaN has no rank"));
    let mut ranks = vec![0.0; n];
    let mut pos = 0;
    while pos < n {
        let mut end = pos + 1;
        while end < n && values[order[end]] == values[order[pos]] {
            end += 1;
        }
        // Positions pos..end (0-based) hold equal values; mean 1-based rank.
        let mean_rank = (pos + 1 + end) as f64 / 2.0;
        for &i in &order[pos..end] {
            ranks[i] = mean_rank;
        }
        pos = end;
    }
    ranks
}

/// Average rank per algorithm: within every experiment cell (same
/// [`RunRecord::experiment_key`]) algorithms are ranked by global accuracy
/// (rank 1 = best, ties share the mean), then each algorithm's ranks are
/// averaged over the cells it appears in.
pub fn average_rank(records: &[RunRecord]) -> Result<BTreeMap<String, f64>> {
    let groups = group_by_experiment(records)?;
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for group in groups.values() {
        let accs: Vec<f64> = group.iter().map(|r| global_accuracy(r)).collect();
        let ranks = ranks_desc(&accs);
        for (r, rank) in group.iter().zip(ranks) {
            let e = sums.entry(r.algorithm.clone()).or_insert((0.0, 0));
            e.0 += rank;
            e.1 += 1;
        }
    }
    Ok(sums
        .into_iter()
        .map(|(alg, (sum, n))| (alg, sum / n as f64))
        .collect())
}

/// Pairwise win rates over aligned experiment cells.
///
/// Rates are stored as exact integer tallies — `half_points[i][j]` counts 2
/// per win of `i` over `j` and 1 per tie, out of `2 × comparisons[i][j]` —
/// so the complementarity invariant `half_points[i][j] + half_points[j][i]
/// == 2 × comparisons[i][j]` holds exactly. [`WinrateMatrix::rate`] derives
/// the fractional view.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WinrateMatrix {
    /// Sorted algorithm identifiers labelling rows and columns.
    pub algorithms: Vec<String>,
    pub half_points: Vec<Vec<u64>>,
    pub comparisons: Vec<Vec<u64>>,
}

impl WinrateMatrix {
    /// Fraction of aligned cells where algorithm `i` outperformed `j`
    /// (ties 0.5). NaN on the diagonal and for never-compared pairs.
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        if i == j || self.comparisons[i][j] == 0 {
            return f64::NAN;
        }
        self.half_points[i][j] as f64 / (2 * self.comparisons[i][j]) as f64
    }

    /// The full fractional matrix (see [`WinrateMatrix::rate`]).
    pub fn rates(&self) -> Vec<Vec<f64>> {
        (0..self.algorithms.len())
            .map(|i| (0..self.algorithms.len()).map(|j| self.rate(i, j)).collect())
            .collect()
    }
}

/// Build the win-rate matrix: entry (i, j) is the fraction of experiment
/// cells containing both algorithms where `i`'s global accuracy is strictly
/// higher (ties 0.5 each).
pub fn winrate_matrix(records: &[RunRecord]) -> Result<WinrateMatrix> {
    let algorithms: Vec<String> = records
        .iter()
        .map(|r| r.algorithm.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<&str, usize> = algorithms
        .iter()
        .enumerate()
        .map(|(i, a)| (a.as_str(), i))
        .collect();
    let a = algorithms.len();
    let mut half_points = vec![vec![0u64; a]; a];
    let mut comparisons = vec![vec![0u64; a]; a];
    for group in group_by_experiment(records)?.values() {
        for x in group {
            for y in group {
                let i = index[x.algorithm.as_str()];
                let j = index[y.algorithm.as_str()];
                if i == j {
                    continue;
                }
                comparisons[i][j] += 1;
                let (ax, ay) = (global_accuracy(x), global_accuracy(y));
                half_points[i][j] += if ax > ay {
                    2
                } else if ax == ay {
                    1
                } else {
                    0
                };
            }
        }
    }
    Ok(WinrateMatrix {
        algorithms,
        half_points,
        comparisons,
    })
}

/// One report-table cell: seed-aggregated statistics for a single algorithm
/// within a single scenario group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateCell {
    pub algorithm: String,
    pub num_runs: usize,
    /// Mean ± population-std of global accuracy over seeds.
    pub mean_acc: f64,
    pub std_acc: f64,
    /// Mean ± population-std of the per-run client-accuracy dispersion.
    pub mean_client_std: f64,
    pub std_client_std: f64,
    pub mean_ari: f64,
    /// Mean rank over the cells the algorithm appeared in (NaN when ranks
    /// were not computed for this aggregation).
    pub mean_rank: f64,
}

/// Aggregate one algorithm's records (typically: one scenario, all seeds).
/// `mean_rank` is supplied by the caller, who knows the ranking population.
pub fn aggregate_cell(records: &[RunRecord], mean_rank: f64) -> Result<AggregateCell> {
    if records.is_empty() {
        return Err(Error::Config("cannot aggregate zero records".into()));
    }
    let algorithm = records[0].algorithm.clone();
    if records.iter().any(|r| r.algorithm != algorithm) {
        return Err(Error::Config(
            "aggregate_cell needs records of a single algorithm".into(),
        ));
    }
    let accs: Vec<f64> = records.iter().map(global_accuracy).collect();
    let stds: Vec<f64> = records.iter().map(client_acc_std).collect();
    let aris: Vec<f64> = records.iter().map(|r| r.ari).collect();
    Ok(AggregateCell {
        algorithm,
        num_runs: records.len(),
        mean_acc: mean(&accs),
        std_acc: population_std(&accs),
        mean_client_std: mean(&stds),
        std_client_std: population_std(&stds),
        mean_ari: mean(&aris),
        mean_rank,
    })
}

/// Group records by experiment cell, rejecting duplicate (cell, algorithm)
/// combinations — those would make ranks and win rates ill-defined.
fn group_by_experiment(records: &[RunRecord]) -> Result<BTreeMap<String, Vec<&RunRecord>>> {
    let mut groups: BTreeMap<String, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.experiment_key()).or_default().push(r);
    }
    for (key, group) in &groups {
        let mut seen = BTreeSet::new();
        for r in group {
            if !seen.insert(r.algorithm.as_str()) {
                return Err(Error::Config(format!(
                    "two records for algorithm {} in experiment cell {key}",
                    r.algorithm
                )));
            }
        }
    }
    Ok(groups)
}
