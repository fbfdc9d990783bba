//! Independent reference implementations used to cross-check the fast
//! paths.
//!
//! Everything in this module is deliberately written the *slow, obvious*
//! way — naive matrix arithmetic, exhaustive pair counting, greedy search
//! over all merges — sharing no code with the production implementations it
//! validates. The test suite and the CLI `verify` subcommand both run these
//! checks.

use crate::nn::ModelParams;

// ---------------------------------------------------------------------------
// Neural network references
// ---------------------------------------------------------------------------

/// Forward pass recomputed from the mathematical definition: per output
/// unit, an explicit dot product over inputs, then bias, then ReLU on the
/// hidden layer. Loop structure and summation order differ from the
/// production kernel on purpose.
pub fn forward_reference(model: &ModelParams, x: &[f64], n: usize) -> Vec<f64> {
    let (in_dim, hid, out) = model.dims;
    let l1 = &model.layers[0];
    let l2 = &model.layers[1];
    let mut logits = vec![0.0; n * out];
    for s in 0..n {
        let xs = &x[s * in_dim..(s + 1) * in_dim];
        let mut hidden = vec![0.0; hid];
        for (h, hv) in hidden.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, &xv) in xs.iter().enumerate() {
                acc += xv * l1.w[i * hid + h];
            }
            acc += l1.b[h];
            *hv = acc.max(0.0);
        }
        for o in 0..out {
            let mut acc = 0.0;
            for (h, &hv) in hidden.iter().enumerate() {
                acc += hv * l2.w[h * out + o];
            }
            logits[s * out + o] = acc + l2.b[o];
        }
    }
    logits
}

/// Mean cross-entropy via the reference forward pass and a from-scratch
/// stable softmax.
pub fn loss_reference(model: &ModelParams, x: &[f64], y: &[u8], n: usize) -> f64 {
    let out = model.dims.2;
    let logits = forward_reference(model, x, n);
    let mut total = 0.0;
    for s in 0..n {
        let row = &logits[s * out..(s + 1) * out];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let p = ((row[y[s] as usize] - max).exp() / denom).max(1e-12);
        total -= p.ln();
    }
    total / n as f64
}

/// Compare an analytic gradient against central finite differences of an
/// arbitrary loss function, entry by entry. Relative tolerance with a small
/// absolute floor so near-zero entries (ReLU-dead paths) compare sanely.
pub fn check_gradient_of(
    model: &ModelParams,
    grad: &ModelParams,
    loss_fn: impl Fn(&ModelParams) -> f64,
    h: f64,
    tol: f64,
) -> Result<(), String> {
    // Parameter k of layer l is w[k] for k < |w|, else b[k − |w|].
    fn set(p: &mut ModelParams, l: usize, k: usize, v: f64) {
        let w_len = p.layers[l].w.len();
        if k < w_len {
            p.layers[l].w[k] = v;
        } else {
            p.layers[l].b[k - w_len] = v;
        }
    }
    let mut probe = model.clone();
    for l in 0..model.layers.len() {
        let w_len = model.layers[l].w.len();
        for k in 0..w_len + model.layers[l].b.len() {
            let (original, analytic) = if k < w_len {
                (model.layers[l].w[k], grad.layers[l].w[k])
            } else {
                (model.layers[l].b[k - w_len], grad.layers[l].b[k - w_len])
            };
            set(&mut probe, l, k, original + h);
            let plus = loss_fn(&probe);
            set(&mut probe, l, k, original - h);
            let minus = loss_fn(&probe);
            set(&mut probe, l, k, original);
            let numeric = (plus - minus) / (2.0 * h);
            let scale = analytic.abs().max(numeric.abs()).max(1e-6);
            if (analytic - numeric).abs() > tol * scale {
                return Err(format!(
                    "layer {l} param {k}: analytic {analytic:e} vs numeric {numeric:e}"
                ));
            }
        }
    }
    Ok(())
}

/// Gradient check against the reference cross-entropy loss.
pub fn check_gradient(
    model: &ModelParams,
    x: &[f64],
    y: &[u8],
    n: usize,
    grad: &ModelParams,
    h: f64,
    tol: f64,
) -> Result<(), String> {
    check_gradient_of(model, grad, |m| loss_reference(m, x, y, n), h, tol)
}

// ---------------------------------------------------------------------------
// Clustering references
// ---------------------------------------------------------------------------

/// Adjusted Rand Index by exhaustive pair counting: classify every one of
/// the C(n,2) point pairs as co-clustered or separated in each partition,
/// then apply the pair-count identity. Independent of the contingency-table
/// formulation used in production.
pub fn ari_reference(truth: &[usize], pred: &[usize]) -> f64 {
    assert_eq!(truth.len(), pred.len());
    let n = truth.len();
    let (mut both, mut truth_only, mut pred_only, mut neither) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..n {
        for j in (i + 1)..n {
            let t = truth[i] == truth[j];
            let p = pred[i] == pred[j];
            match (t, p) {
                (true, true) => both += 1.0,
                (true, false) => truth_only += 1.0,
                (false, true) => pred_only += 1.0,
                (false, false) => neither += 1.0,
            }
        }
    }
    let denom =
        (both + truth_only) * (truth_only + neither) + (both + pred_only) * (pred_only + neither);
    if denom == 0.0 {
        return 1.0; // both partitions trivial (all-one-cluster or all-singletons)
    }
    2.0 * (both * neither - truth_only * pred_only) / denom
}

/// Ward agglomeration by exhaustive greedy search: at every step, evaluate
/// the SSE increase of merging every active pair directly from centroids
/// and sizes, and merge the minimizer. Node ids follow the convention that
/// original points are 0..n-1 and the t-th merge creates node n+t. Ties
/// break on (smaller min id, then smaller max id).
///
/// Returns (node_a, node_b, linkage_distance, new_size) with node_a < node_b
/// and linkage_distance = √(2·ΔSSE), which for singleton merges equals the
/// Euclidean distance.
pub fn ward_reference(vectors: &[Vec<f64>]) -> Vec<(usize, usize, f64, usize)> {
    let n = vectors.len();
    assert!(n >= 2);
    struct Node {
        id: usize,
        centroid: Vec<f64>,
        size: f64,
    }
    let mut active: Vec<Node> = vectors
        .iter()
        .enumerate()
        .map(|(id, v)| Node {
            id,
            centroid: v.clone(),
            size: 1.0,
        })
        .collect();
    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..active.len() {
            for b in (a + 1)..active.len() {
                let (na, nb) = (&active[a], &active[b]);
                let sq: f64 = na
                    .centroid
                    .iter()
                    .zip(&nb.centroid)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                let delta = na.size * nb.size / (na.size + nb.size) * sq;
                let key = (
                    delta,
                    na.id.min(nb.id),
                    na.id.max(nb.id),
                );
                let better = match &best {
                    None => true,
                    Some((d, lo, hi)) => {
                        key.0 < *d
                            || (key.0 == *d && (key.1, key.2) < (*lo, *hi))
                    }
                };
                if better {
                    best = Some(key);
                }
            }
        }
        let (delta, lo_id, hi_id) = best.unwrap();
        let pa = active.iter().position(|c| c.id == lo_id).unwrap();
        let pb = active.iter().position(|c| c.id == hi_id).unwrap();
        let na = active.swap_remove(pa.max(pb));
        let nb = active.swap_remove(pa.min(pb));
        let size = na.size + nb.size;
        let centroid: Vec<f64> = na
            .centroid
            .iter()
            .zip(&nb.centroid)
            .map(|(x, y)| (na.size * x + nb.size * y) / size)
            .collect();
        merges.push((lo_id, hi_id, (2.0 * delta).sqrt(), size as usize));
        active.push(Node {
            id: n + step,
            centroid,
            size,
        });
    }
    merges
}

/// Trimmed mean of one coordinate the obvious way: sort a copy, drop
/// ⌈β·n⌉ values from each end, average the rest.
pub fn trimmed_mean_reference(values: &[f64], beta: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = (beta * sorted.len() as f64).ceil() as usize;
    let kept = &sorted[k..sorted.len() - k];
    kept.iter().sum::<f64>() / kept.len() as f64
}

// ---------------------------------------------------------------------------
// Packaged verification battery
// ---------------------------------------------------------------------------

/// One suite's result in the verification battery.
#[derive(Debug, Clone)]
pub struct VerifyOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Human-readable evidence: trial counts and worst observed deviation.
    pub detail: String,
    pub seconds: f64,
}

/// Run every oracle cross-check — the whole battery completes in well under
/// a minute and needs no dataset. Used by both the CLI `verify` subcommand
/// and the acceptance tests; failures are collected, never early-aborted.
///
/// Suites: ARI vs pair-counting brute force (1000 random partition pairs,
/// 1e-12), Ward linkage vs exhaustive greedy agglomeration (100 random
/// instances, n ≤ 7), trimmed-mean aggregation vs sort-drop-mean (100
/// trials), sample-weighted aggregation duplication invariance (1e-12),
/// and analytic gradients vs central finite differences (100 draws, 1e-4
/// relative).
pub fn verify_suite(seed: u64) -> Vec<VerifyOutcome> {
    let run = |name: &'static str, f: &dyn Fn() -> (bool, String)| {
        let start = std::time::Instant::now();
        let (passed, detail) = f();
        VerifyOutcome {
            name,
            passed,
            detail,
            seconds: start.elapsed().as_secs_f64(),
        }
    };
    vec![
        run("ari_pair_counting", &|| suite_ari(seed)),
        run("ward_exhaustive", &|| suite_ward(seed)),
        run("trimmed_mean", &|| suite_trimmed(seed)),
        run("weighted_duplication", &|| suite_duplication(seed)),
        run("gradient_check", &|| suite_gradient(seed)),
    ]
}

fn suite_ari(seed: u64) -> (bool, String) {
    use rand::Rng;
    let mut rng = crate::seeds::rng(seed, "verifyari", 0, 0);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(2..=30);
        let kt = rng.random_range(1..=6usize).min(n);
        let kp = rng.random_range(1..=6usize).min(n);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..kt)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..kp)).collect();
        let fast = crate::clustering::adjusted_rand_index(&truth, &pred)
            .expect("equal-length partitions");
        let slow = ari_reference(&truth, &pred);
        worst = worst.max((fast - slow).abs());
    }
    (worst < 1e-12, format!("1000 pairs, max |Δ| = {worst:.2e}"))
}

fn suite_ward(seed: u64) -> (bool, String) {
    use rand::Rng;
    let mut rng = crate::seeds::rng(seed, "verifyward", 0, 0);
    let mut failures = 0usize;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=7);
        let d = rng.random_range(1..=4);
        let vectors: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
            .collect();
        let fast = crate::clustering::ward_linkage(&vectors).expect("n ≥ 2");
        let slow = ward_reference(&vectors);
        if fast.merges.len() != slow.len() {
            failures += 1;
            continue;
        }
        for (f, s) in fast.merges.iter().zip(&slow) {
            // Node ids and sizes must match exactly; the linkage distance is
            // computed by a different recurrence, so compare to tolerance.
            if f.0 != s.0 || f.1 != s.1 || f.3 != s.3 {
                failures += 1;
                break;
            }
            worst = worst.max((f.2 - s.2).abs());
        }
    }
    (
        failures == 0 && worst < 1e-9,
        format!("100 instances (n ≤ 7), {failures} structure mismatches, max |Δdist| = {worst:.2e}"),
    )
}

fn suite_trimmed(seed: u64) -> (bool, String) {
    use rand::Rng;
    let mut rng = crate::seeds::rng(seed, "verifytrim", 0, 0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let count = rng.random_range(3..=9);
        let dims = (2, 3, 2);
        let models: Vec<ModelParams> = (0..count)
            .map(|i| ModelParams::init_from_seed(dims, seed, 7, i as u64))
            .collect();
        // Draw the per-side trim count k directly (any k with 2k < count),
        // then pick a β that ceils to exactly k, so every legal trim level
        // is exercised and at least one value always survives.
        let k_max = (count - 1) / 2;
        let k = rng.random_range(0..=k_max);
        let beta = if k == 0 {
            0.0
        } else {
            (k as f64 - rng.random::<f64>() * 0.5) / count as f64
        };
        let refs: Vec<&ModelParams> = models.iter().collect();
        let fast = crate::runtime::aggregate_trimmed(&refs, beta).expect("non-empty");
        let flats: Vec<Vec<f64>> = models.iter().map(|m| m.flatten()).collect();
        let fast_flat = fast.flatten();
        for coord in 0..fast_flat.len() {
            let column: Vec<f64> = flats.iter().map(|f| f[coord]).collect();
            let slow = trimmed_mean_reference(&column, beta);
            worst = worst.max((fast_flat[coord] - slow).abs());
        }
    }
    (worst < 1e-12, format!("100 trials, max |Δ| = {worst:.2e}"))
}

fn suite_duplication(seed: u64) -> (bool, String) {
    use rand::Rng;
    let mut rng = crate::seeds::rng(seed, "verifydup", 0, 0);
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let count = rng.random_range(2..=5);
        let dims = (2, 3, 2);
        let models: Vec<ModelParams> = (0..count)
            .map(|i| ModelParams::init_from_seed(dims, seed, 11, trial * 8 + i as u64))
            .collect();
        let sizes: Vec<usize> = (0..count).map(|_| rng.random_range(1..=4)).collect();
        // Weighted mean with integer weights == uniform mean over the
        // multiset with each model repeated `size` times.
        let weighted_refs: Vec<&ModelParams> = models.iter().collect();
        let weighted =
            crate::runtime::aggregate_weighted(&weighted_refs, &sizes).expect("non-empty");
        let mut duplicated: Vec<&ModelParams> = Vec::new();
        for (m, &s) in models.iter().zip(&sizes) {
            for _ in 0..s {
                duplicated.push(m);
            }
        }
        let ones = vec![1usize; duplicated.len()];
        let uniform = crate::runtime::aggregate_weighted(&duplicated, &ones).expect("non-empty");
        let (a, b) = (weighted.flatten(), uniform.flatten());
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((x - y).abs());
        }
    }
    (worst < 1e-12, format!("100 trials, max |Δ| = {worst:.2e}"))
}

fn suite_gradient(seed: u64) -> (bool, String) {
    use rand::Rng;
    let mut rng = crate::seeds::rng(seed, "verifygrad", 0, 0);
    let mut failed: Option<String> = None;
    for trial in 0..100 {
        let dims = (
            rng.random_range(2..=5),
            rng.random_range(2..=6),
            rng.random_range(2..=4),
        );
        let n = rng.random_range(1..=6);
        let model = ModelParams::init_from_seed(dims, seed, 13, trial);
        let x: Vec<f64> = (0..n * dims.0).map(|_| rng.random::<f64>()).collect();
        let y: Vec<u8> = (0..n)
            .map(|_| rng.random_range(0..dims.2) as u8)
            .collect();
        let (_, grad) =
            crate::nn::loss_and_grad(&model, &x, &y, n, None, 0.0).expect("well-formed batch");
        if let Err(e) = check_gradient(&model, &x, &y, n, &grad, 1e-5, 1e-4) {
            failed = Some(format!("draw {trial}: {e}"));
            break;
        }
    }
    match failed {
        None => (true, "100 draws within 1e-4 relative".to_string()),
        Some(e) => (false, e),
    }
}
