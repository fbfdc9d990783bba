//! Clustering primitives over flattened model weights: k-means with
//! k-means++ seeding, agglomerative hierarchical clustering with Ward
//! linkage, EDC (Euclidean distance of cosine dissimilarity) features, and
//! the Adjusted Rand Index.
//!
//! Everything here is deterministic given its inputs (and, for k-means, the
//! caller-provided RNG substream): ties break toward lower indices, and all
//! reductions run in fixed index order.

use crate::error::{Error, Result};
use crate::runtime::ClusterAssignment;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Squared Euclidean distance.
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

// ---------------------------------------------------------------------------
// K-means
// ---------------------------------------------------------------------------

/// K-means outcome with per-iteration inertia (for property tests).
#[derive(Debug, Clone)]
pub struct KmeansResult {
    pub assignment: ClusterAssignment,
    /// Within-cluster SSE after each assignment step; non-increasing.
    pub inertia: Vec<f64>,
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Nearest-centroid ties break toward the lowest centroid index; a cluster
/// that ends up empty is re-seeded to the point farthest from its assigned
/// centroid. Terminates when assignments stop changing or after `max_iter`
/// update steps.
pub fn kmeans(
    vectors: &[Vec<f64>],
    k: usize,
    rng: &mut ChaCha8Rng,
    max_iter: usize,
) -> Result<ClusterAssignment> {
    kmeans_detailed(vectors, k, rng, max_iter).map(|r| r.assignment)
}

/// [`kmeans`] with the inertia trace exposed.
pub fn kmeans_detailed(
    vectors: &[Vec<f64>],
    k: usize,
    rng: &mut ChaCha8Rng,
    max_iter: usize,
) -> Result<KmeansResult> {
    let n = vectors.len();
    if k == 0 || k > n {
        return Err(Error::Config(format!(
            "k-means needs 1 ≤ K ≤ n, got K = {k} for n = {n}"
        )));
    }
    let mut centroids = plus_plus_seeding(vectors, k, rng);
    let mut membership = vec![0usize; n];
    let mut inertia_trace = Vec::new();

    for _ in 0..max_iter.max(1) {
        // Assignment step (ties → lowest centroid index).
        let mut changed = false;
        let mut inertia = 0.0;
        for (i, v) in vectors.iter().enumerate() {
            let mut best = 0;
            let mut best_d = sq_dist(v, &centroids[0]);
            for (c, centroid) in centroids.iter().enumerate().skip(1) {
                let d = sq_dist(v, centroid);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            if membership[i] != best {
                membership[i] = best;
                changed = true;
            }
            inertia += best_d;
        }
        inertia_trace.push(inertia);
        if !changed && inertia_trace.len() > 1 {
            break;
        }

        // Update step; empty clusters steal the farthest point.
        let mut counts = vec![0usize; k];
        for centroid in centroids.iter_mut() {
            centroid.fill(0.0);
        }
        for (i, v) in vectors.iter().enumerate() {
            let m = membership[i];
            counts[m] += 1;
            for (c, x) in centroids[m].iter_mut().zip(v) {
                *c += x;
            }
        }
        for (centroid, &count) in centroids.iter_mut().zip(&counts) {
            if count > 0 {
                for c in centroid.iter_mut() {
                    *c /= count as f64;
                }
            }
        }
        let mut claimed: Vec<usize> = Vec::new();
        for c in 0..k {
            if counts[c] == 0 {
                // Farthest point from its own (non-empty) centroid.
                let mut far = usize::MAX;
                let mut far_d = -1.0;
                for (i, v) in vectors.iter().enumerate() {
                    if claimed.contains(&i) {
                        continue;
                    }
                    let d = sq_dist(v, &centroids[membership[i]]);
                    if d > far_d {
                        far = i;
                        far_d = d;
                    }
                }
                centroids[c] = vectors[far].clone();
                claimed.push(far);
            }
        }
    }
    Ok(KmeansResult {
        assignment: ClusterAssignment::new(membership, k)?,
        inertia: inertia_trace,
    })
}

/// k-means++ seeding: first centroid uniform, then D²-weighted draws.
fn plus_plus_seeding(vectors: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(vectors[rng.random_range(0..n)].clone());
    let mut d2: Vec<f64> = vectors
        .iter()
        .map(|v| sq_dist(v, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // All points coincide with some centroid; fall back to uniform.
            rng.random_range(0..n)
        };
        centroids.push(vectors[next].clone());
        for (i, v) in vectors.iter().enumerate() {
            let d = sq_dist(v, centroids.last().unwrap());
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

// ---------------------------------------------------------------------------
// Ward agglomeration
// ---------------------------------------------------------------------------

/// Merge tree of an agglomerative clustering. Original points are nodes
/// `0..n-1`; the t-th merge creates node `n + t`.
#[derive(Debug, Clone)]
pub struct Dendrogram {
    pub n: usize,
    /// (node_a, node_b, linkage_distance, new_size), node_a < node_b.
    pub merges: Vec<(usize, usize, f64, usize)>,
}

/// Ward-linkage agglomeration via the Lance–Williams recurrence on squared
/// distances. Singleton linkage distance equals the Euclidean distance;
/// ties break on (smaller node id, then smaller partner id).
pub fn ward_linkage(vectors: &[Vec<f64>]) -> Result<Dendrogram> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::Config(format!("ward linkage needs n ≥ 2, got {n}")));
    }
    let total_nodes = 2 * n - 1;
    // Squared Ward distances between active nodes, indexed by node id.
    let mut d2 = vec![vec![0.0f64; total_nodes]; total_nodes];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = sq_dist(&vectors[i], &vectors[j]);
            d2[i][j] = d;
            d2[j][i] = d;
        }
    }
    let mut size = vec![0f64; total_nodes];
    for s in size.iter_mut().take(n) {
        *s = 1.0;
    }
    let mut active: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n - 1);

    for step in 0..n - 1 {
        // Minimum-distance active pair, ties to (lower id, lower partner).
        let (mut best_a, mut best_b, mut best_d) = (usize::MAX, usize::MAX, f64::INFINITY);
        for (ai, &a) in active.iter().enumerate() {
            for &b in &active[ai + 1..] {
                let (lo, hi) = (a.min(b), a.max(b));
                let d = d2[lo][hi];
                if d < best_d || (d == best_d && (lo, hi) < (best_a, best_b)) {
                    (best_a, best_b, best_d) = (lo, hi, d);
                }
            }
        }
        let new = n + step;
        let new_size = size[best_a] + size[best_b];
        merges.push((best_a, best_b, best_d.max(0.0).sqrt(), new_size as usize));
        // Lance–Williams (Ward): d²(new, k) = ((s_a+s_k)d²(a,k) +
        // (s_b+s_k)d²(b,k) − s_k d²(a,b)) / (s_a+s_b+s_k).
        for &k in &active {
            if k == best_a || k == best_b {
                continue;
            }
            let sk = size[k];
            let num = (size[best_a] + sk) * d2[best_a.min(k)][best_a.max(k)]
                + (size[best_b] + sk) * d2[best_b.min(k)][best_b.max(k)]
                - sk * best_d;
            let v = num / (new_size + sk);
            d2[new][k] = v;
            d2[k][new] = v;
        }
        size[new] = new_size;
        active.retain(|&x| x != best_a && x != best_b);
        active.push(new);
    }
    Ok(Dendrogram { n, merges })
}

/// Cut a dendrogram into exactly `k` clusters by replaying the first
/// `n − k` merges. Cluster ids are assigned by first appearance in point
/// order, so the labeling is deterministic.
pub fn cut(dendrogram: &Dendrogram, k: usize) -> Result<ClusterAssignment> {
    let n = dendrogram.n;
    if k == 0 || k > n {
        return Err(Error::Config(format!(
            "cannot cut {n}-leaf dendrogram into {k} clusters"
        )));
    }
    // parent[] over the merge-tree nodes; only the first n − k merges apply.
    let mut parent: Vec<usize> = (0..2 * n - 1).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (t, &(a, b, _, _)) in dendrogram.merges.iter().take(n - k).enumerate() {
        let new = n + t;
        let ra = find(&mut parent, a);
        let rb = find(&mut parent, b);
        parent[ra] = new;
        parent[rb] = new;
    }
    let mut label_of_root: Vec<Option<usize>> = vec![None; 2 * n - 1];
    let mut next = 0;
    let membership: Vec<usize> = (0..n)
        .map(|i| {
            let root = find(&mut parent, i);
            *label_of_root[root].get_or_insert_with(|| {
                let l = next;
                next += 1;
                l
            })
        })
        .collect();
    ClusterAssignment::new(membership, k)
}

// ---------------------------------------------------------------------------
// EDC features
// ---------------------------------------------------------------------------

/// EDC (Euclidean distance of cosine dissimilarity) feature rows.
///
/// Computes the top-`m` singular directions of the `n × d` update matrix
/// through the n×n Gram matrix, then `feature(i, j) = 1 − cos(update_i,
/// direction_j)`. Clustering these rows with Euclidean k-means realizes the
/// EDC metric. Zero-norm updates get a feature row of all 1.0 (orthogonal
/// convention); their indices are returned for run-log flagging.
pub fn edc_features(updates: &[Vec<f64>], m: usize) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let n = updates.len();
    if m == 0 || m > n {
        return Err(Error::Config(format!(
            "EDC needs 1 ≤ m ≤ n, got m = {m} for n = {n}"
        )));
    }
    let norms: Vec<f64> = updates
        .iter()
        .map(|u| u.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let flagged: Vec<usize> = norms
        .iter()
        .enumerate()
        .filter(|(_, &nm)| nm == 0.0)
        .map(|(i, _)| i)
        .collect();

    // Gram matrix G = U·Uᵀ.
    let mut gram = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in i..n {
            let mut acc = 0.0;
            for (x, y) in updates[i].iter().zip(&updates[j]) {
                acc += x * y;
            }
            gram[i][j] = acc;
            gram[j][i] = acc;
        }
    }
    let (eigvals, eigvecs) = jacobi_eigen(&gram);

    // Top-m eigenpairs by descending eigenvalue. For right singular vector
    // v_j = Uᵀq_j/σ_j, the cosine against update i collapses to
    // σ_j·q_j[i]/‖u_i‖ — no d-dimensional work needed.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eigvals[b].partial_cmp(&eigvals[a]).unwrap().then(a.cmp(&b)));
    let mut features = vec![vec![1.0f64; m]; n];
    for (j, &e) in order.iter().take(m).enumerate() {
        let sigma = eigvals[e].max(0.0).sqrt();
        if sigma == 0.0 {
            continue; // rank-deficient direction: leave the column at 1.0
        }
        // Deterministic sign: largest-|component| entry positive.
        let mut lead = 0;
        for i in 1..n {
            if eigvecs[i][e].abs() > eigvecs[lead][e].abs() {
                lead = i;
            }
        }
        let flip = if eigvecs[lead][e] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            if norms[i] > 0.0 {
                let cos = flip * sigma * eigvecs[i][e] / norms[i];
                features[i][j] = 1.0 - cos;
            }
        }
    }
    Ok((features, flagged))
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// (eigenvalues, eigenvectors-as-columns). Plenty for the n ≤ 100 Gram
/// matrices this crate produces.
#[allow(clippy::needless_range_loop)] // p/q/k rotations update rows and columns symmetrically
fn jacobi_eigen(matrix: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut v = vec![vec![0.0f64; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i][j] * a[i][j];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let eigvals = (0..n).map(|i| a[i][i]).collect();
    (eigvals, v)
}

// ---------------------------------------------------------------------------
// Adjusted Rand Index
// ---------------------------------------------------------------------------

/// Standard contingency-table ARI. Invariant to relabeling of either
/// argument; the degenerate case where both partitions are trivial (both
/// one cluster, or both all singletons) returns 1.0.
pub fn adjusted_rand_index(truth: &[usize], pred: &[usize]) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::Data(format!(
            "partition lengths differ: {} vs {}",
            truth.len(),
            pred.len()
        )));
    }
    let n = truth.len();
    if n < 2 {
        return Err(Error::Config("ARI needs at least 2 points".into()));
    }
    // Compact labels to dense ranges by first appearance.
    let compact = |labels: &[usize]| -> Vec<usize> {
        let mut map = std::collections::HashMap::new();
        labels
            .iter()
            .map(|&l| {
                let next = map.len();
                *map.entry(l).or_insert(next)
            })
            .collect()
    };
    let t = compact(truth);
    let p = compact(pred);
    let rows = t.iter().max().unwrap() + 1;
    let cols = p.iter().max().unwrap() + 1;
    let mut table = vec![vec![0u64; cols]; rows];
    for (&a, &b) in t.iter().zip(&p) {
        table[a][b] += 1;
    }
    let choose2 = |x: u64| (x * x.saturating_sub(1) / 2) as f64;
    let index: f64 = table
        .iter()
        .flat_map(|row| row.iter())
        .map(|&c| choose2(c))
        .sum();
    let row_sum: f64 = table
        .iter()
        .map(|row| choose2(row.iter().sum::<u64>()))
        .sum();
    let col_sum: f64 = (0..cols)
        .map(|j| choose2(table.iter().map(|row| row[j]).sum::<u64>()))
        .sum();
    let expected = row_sum * col_sum / choose2(n as u64);
    let max = 0.5 * (row_sum + col_sum);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}
