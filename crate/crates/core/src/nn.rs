//! Minimal dense neural network: forward pass, softmax cross-entropy,
//! manual backpropagation, and mini-batch SGD with an optional proximal
//! term.
//!
//! The architecture is a fully connected MLP `input → hidden (ReLU) →
//! output (softmax)`. Everything is 64-bit floating point so that oracle
//! comparisons (finite differences, standalone matrix arithmetic) can be
//! tight, and every operation is a pure function of its inputs and seed —
//! repeated calls are bit-identical.
//!
//! Weight matrices are stored input-major (`w[i * out + o]`) so the hot
//! loops walk memory contiguously; the *logical* layout used for flattening
//! and checkpoints is row-major `[out × in]` (see [`ModelParams::flatten`]).

use crate::error::{Error, Result};
use crate::seeds;
use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use std::io::{Read as _, Write as _};
use std::path::Path;

/// Probabilities are clamped here before `ln` to keep the loss finite.
const PROB_FLOOR: f64 = 1e-12;

/// Magic bytes heading a model checkpoint file.
const CHECKPOINT_MAGIC: &[u8; 4] = b"CFLM";

/// One dense layer. `w[i * out_dim + o]` maps input `i` to output `o`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Parameters of the two-layer MLP exchanged between clients and server.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// (input_dim, hidden_dim, output_dim).
    pub dims: (usize, usize, usize),
    pub layers: Vec<Layer>,
}

/// Hyperparameters for one local-training call.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Proximal coefficient μ; 0 disables the penalty entirely (the penalty
    /// code path is skipped, so μ = 0 is bit-identical to plain SGD).
    pub prox_mu: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            local_epochs: 10,
            learning_rate: 0.05,
            batch_size: 32,
            prox_mu: 0.0,
            rng_seed: 0,
        }
    }
}

impl Layer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Layer {
            in_dim,
            out_dim,
            w: vec![0.0; in_dim * out_dim],
            b: vec![0.0; out_dim],
        }
    }

    /// Glorot-uniform weights in ±√(6/(in+out)); biases start at zero.
    fn glorot(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
        let w = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
        Layer {
            in_dim,
            out_dim,
            w,
            b: vec![0.0; out_dim],
        }
    }
}

impl ModelParams {
    /// All-zero model (useful as a gradient accumulator).
    pub fn zeros(dims: (usize, usize, usize)) -> Self {
        let (i, h, o) = dims;
        ModelParams {
            dims,
            layers: vec![Layer::zeros(i, h), Layer::zeros(h, o)],
        }
    }

    /// Fresh Glorot-initialized model drawn from `rng`.
    pub fn init(dims: (usize, usize, usize), rng: &mut ChaCha8Rng) -> Self {
        let (i, h, o) = dims;
        ModelParams {
            dims,
            layers: vec![Layer::glorot(i, h, rng), Layer::glorot(h, o, rng)],
        }
    }

    /// Convenience: the model every run starts from, derived from the run
    /// seed. `restart` and `slot` distinguish multi-model initializations
    /// (e.g. per-restart, per-cluster draws); single-model algorithms use
    /// (1, 1).
    pub fn init_from_seed(
        dims: (usize, usize, usize),
        seed: u64,
        restart: u64,
        slot: u64,
    ) -> Self {
        Self::init(dims, &mut seeds::rng(seed, "init", restart, slot))
    }

    /// Total number of scalar parameters (weights + biases).
    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w.len() + l.b.len())
            .sum()
    }

    /// Flatten to the documented clustering/checkpoint order: layer 0
    /// weights row-major `[out × in]`, layer 0 bias, layer 1 weights, layer
    /// 1 bias. The row-major transposition here is what fixes the distance
    /// geometry regardless of the internal input-major storage.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            for o in 0..layer.out_dim {
                for i in 0..layer.in_dim {
                    flat.push(layer.w[i * layer.out_dim + o]);
                }
            }
            flat.extend_from_slice(&layer.b);
        }
        flat
    }

    /// Inverse of [`ModelParams::flatten`].
    pub fn from_flat(dims: (usize, usize, usize), flat: &[f64]) -> Result<Self> {
        let mut model = ModelParams::zeros(dims);
        let expected = model.num_params();
        if flat.len() != expected {
            return Err(Error::Data(format!(
                "flat parameter vector has {} entries, model needs {expected}",
                flat.len()
            )));
        }
        let mut pos = 0;
        for layer in &mut model.layers {
            for o in 0..layer.out_dim {
                for i in 0..layer.in_dim {
                    layer.w[i * layer.out_dim + o] = flat[pos];
                    pos += 1;
                }
            }
            layer.b.copy_from_slice(&flat[pos..pos + layer.out_dim]);
            pos += layer.out_dim;
        }
        Ok(model)
    }

    /// Squared L2 distance to another model over all parameters.
    pub fn sq_distance(&self, other: &ModelParams) -> f64 {
        let mut acc = 0.0;
        for (a, b) in self.layers.iter().zip(&other.layers) {
            for (x, y) in a.w.iter().zip(&b.w) {
                let d = x - y;
                acc += d * d;
            }
            for (x, y) in a.b.iter().zip(&b.b) {
                let d = x - y;
                acc += d * d;
            }
        }
        acc
    }

    /// L2 norm over all parameters.
    pub fn norm(&self) -> f64 {
        let mut acc = 0.0;
        for layer in &self.layers {
            for x in &layer.w {
                acc += x * x;
            }
            for x in &layer.b {
                acc += x * x;
            }
        }
        acc.sqrt()
    }

    /// True when every entry is finite (no NaN/Inf).
    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().all(|x| x.is_finite()) && l.b.iter().all(|x| x.is_finite()))
    }

    /// Write the binary checkpoint: magic, dims, then the flattened
    /// parameters as little-endian f64.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(16 + self.num_params() * 8);
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        for d in [self.dims.0, self.dims.1, self.dims.2] {
            bytes.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in self.flatten() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let mut file =
            std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    /// Read a checkpoint written by [`ModelParams::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Data(format!(
                "{} is not a model checkpoint (bad magic)",
                path.display()
            )));
        }
        let dim = |k: usize| {
            u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap()) as usize
        };
        let dims = (dim(0), dim(1), dim(2));
        let body = &bytes[16..];
        if body.len() % 8 != 0 {
            return Err(Error::Data(format!(
                "{} has a truncated parameter section",
                path.display()
            )));
        }
        let flat: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        ModelParams::from_flat(dims, &flat)
    }
}

/// Forward pass: returns logits, row-major `[n × output_dim]`.
///
/// `x` is `[n × input_dim]` row-major. The hidden layer applies ReLU; the
/// output layer is linear (softmax lives in the loss).
pub fn forward(model: &ModelParams, x: &[f64], n: usize) -> Vec<f64> {
    let (in_dim, hid, out) = model.dims;
    assert_eq!(x.len(), n * in_dim, "batch shape mismatch");
    let mut hidden = vec![0.0; n * hid];
    dense_forward(&model.layers[0], x, n, &mut hidden);
    for v in hidden.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let mut logits = vec![0.0; n * out];
    dense_forward(&model.layers[1], &hidden, n, &mut logits);
    logits
}

/// `out[s] = x[s] · W + b` for every sample row. Skips zero inputs — a large
/// win on sparse image data and an exact no-op arithmetically (the skipped
/// term contributes `+0.0`).
fn dense_forward(layer: &Layer, x: &[f64], n: usize, out: &mut [f64]) {
    let (id, od) = (layer.in_dim, layer.out_dim);
    for s in 0..n {
        let row = &mut out[s * od..(s + 1) * od];
        row.copy_from_slice(&layer.b);
        let xs = &x[s * id..(s + 1) * id];
        for (i, &xv) in xs.iter().enumerate() {
            if xv != 0.0 {
                let wrow = &layer.w[i * od..(i + 1) * od];
                for (acc, &w) in row.iter_mut().zip(wrow) {
                    *acc += xv * w;
                }
            }
        }
    }
}

/// Row-wise softmax with max-subtraction, in place.
fn softmax_rows(logits: &mut [f64], n: usize, out: usize) {
    for s in 0..n {
        let row = &mut logits[s * out..(s + 1) * out];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Mean cross-entropy of `model` on `(x, y)`, without gradients.
pub fn mean_loss(model: &ModelParams, x: &[f64], y: &[u8], n: usize) -> f64 {
    let out = model.dims.2;
    let mut probs = forward(model, x, n);
    softmax_rows(&mut probs, n, out);
    let mut loss = 0.0;
    for s in 0..n {
        let p = probs[s * out + y[s] as usize].max(PROB_FLOOR);
        loss -= p.ln();
    }
    loss / n as f64
}

/// Workspace buffers reused across SGD steps to avoid per-batch allocation.
struct Scratch {
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
    d_hidden: Vec<f64>,
}

impl Scratch {
    fn new(n: usize, hid: usize, out: usize) -> Self {
        Scratch {
            hidden_pre: vec![0.0; n * hid],
            hidden: vec![0.0; n * hid],
            probs: vec![0.0; n * out],
            d_hidden: vec![0.0; n * hid],
        }
    }
}

/// Mean cross-entropy loss and its gradient, with an optional proximal
/// penalty `(μ/2)·‖w − anchor‖²` over all parameters (weights and biases).
///
/// When `prox_mu == 0` the penalty code path is skipped entirely, so the
/// μ = 0 case is bit-identical to a plain cross-entropy gradient.
pub fn loss_and_grad(
    model: &ModelParams,
    x: &[f64],
    y: &[u8],
    n: usize,
    anchor: Option<&ModelParams>,
    prox_mu: f64,
) -> Result<(f64, ModelParams)> {
    let out = model.dims.2;
    for &label in y {
        if usize::from(label) >= out {
            return Err(Error::Data(format!(
                "label {label} out of range for {out} classes"
            )));
        }
    }
    let mut grad = ModelParams::zeros(model.dims);
    let mut scratch = Scratch::new(n, model.dims.1, out);
    let loss = backprop(model, x, y, n, anchor, prox_mu, &mut grad, &mut scratch);
    Ok((loss, grad))
}

/// Core backward pass. `grad` must be zeroed; scratch buffers must be at
/// least batch-sized. Returns the (mean + proximal) loss.
#[allow(clippy::too_many_arguments)] // hot path: loose scalars beat a param struct rebuilt per batch
fn backprop(
    model: &ModelParams,
    x: &[f64],
    y: &[u8],
    n: usize,
    anchor: Option<&ModelParams>,
    prox_mu: f64,
    grad: &mut ModelParams,
    scratch: &mut Scratch,
) -> f64 {
    let (in_dim, hid, out) = model.dims;
    let (l1, l2) = (&model.layers[0], &model.layers[1]);
    let hidden_pre = &mut scratch.hidden_pre[..n * hid];
    let hidden = &mut scratch.hidden[..n * hid];
    let probs = &mut scratch.probs[..n * out];
    let d_hidden = &mut scratch.d_hidden[..n * hid];

    dense_forward(l1, x, n, hidden_pre);
    hidden.copy_from_slice(hidden_pre);
    for v in hidden.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    dense_forward(l2, hidden, n, probs);
    softmax_rows(probs, n, out);

    let mut loss = 0.0;
    for s in 0..n {
        loss -= probs[s * out + y[s] as usize].max(PROB_FLOOR).ln();
    }
    loss /= n as f64;

    // d(loss)/d(logit) = (softmax − one-hot) / n, folded into `probs`.
    let inv_n = 1.0 / n as f64;
    for s in 0..n {
        let row = &mut probs[s * out..(s + 1) * out];
        row[y[s] as usize] -= 1.0;
        for v in row.iter_mut() {
            *v *= inv_n;
        }
    }

    // Layer 2 gradients and the pullback into the hidden layer.
    let (g1, g2) = {
        let (a, b) = grad.layers.split_at_mut(1);
        (&mut a[0], &mut b[0])
    };
    for s in 0..n {
        let dlog = &probs[s * out..(s + 1) * out];
        let hrow = &hidden[s * hid..(s + 1) * hid];
        for (gb, &d) in g2.b.iter_mut().zip(dlog) {
            *gb += d;
        }
        for (h, &hv) in hrow.iter().enumerate() {
            if hv != 0.0 {
                let gw = &mut g2.w[h * out..(h + 1) * out];
                for (g, &d) in gw.iter_mut().zip(dlog) {
                    *g += hv * d;
                }
            }
        }
        // d_hidden[s] = W2 · dlog, masked by ReLU'.
        let drow = &mut d_hidden[s * hid..(s + 1) * hid];
        let prerow = &hidden_pre[s * hid..(s + 1) * hid];
        for h in 0..hid {
            drow[h] = if prerow[h] > 0.0 {
                let wrow = &l2.w[h * out..(h + 1) * out];
                dot(wrow, dlog)
            } else {
                0.0
            };
        }
    }

    // Layer 1 gradients.
    for s in 0..n {
        let drow = &d_hidden[s * hid..(s + 1) * hid];
        let xs = &x[s * in_dim..(s + 1) * in_dim];
        for (gb, &d) in g1.b.iter_mut().zip(drow) {
            *gb += d;
        }
        for (i, &xv) in xs.iter().enumerate() {
            if xv != 0.0 {
                let gw = &mut g1.w[i * hid..(i + 1) * hid];
                for (g, &d) in gw.iter_mut().zip(drow) {
                    *g += xv * d;
                }
            }
        }
    }

    if prox_mu > 0.0 {
        let anchor = anchor.expect("anchor required when prox_mu > 0");
        let mut sq = 0.0;
        for (gl, (ml, al)) in grad
            .layers
            .iter_mut()
            .zip(model.layers.iter().zip(&anchor.layers))
        {
            for ((g, &w), &a) in gl.w.iter_mut().zip(&ml.w).zip(&al.w) {
                let d = w - a;
                sq += d * d;
                *g += prox_mu * d;
            }
            for ((g, &w), &a) in gl.b.iter_mut().zip(&ml.b).zip(&al.b) {
                let d = w - a;
                sq += d * d;
                *g += prox_mu * d;
            }
        }
        loss += 0.5 * prox_mu * sq;
    }
    loss
}

/// Fixed-order dot product (plain left-to-right accumulation).
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Local training: `cfg.local_epochs` passes of mini-batch SGD over the
/// shard, shuffle order derived from `cfg.rng_seed`. Returns the updated
/// copy; the input model is untouched. With `prox_mu > 0` the incoming
/// model doubles as the proximal anchor (the broadcast global model).
pub fn train_local(
    model: &ModelParams,
    x: &[f64],
    y: &[u8],
    cfg: &TrainConfig,
) -> Result<ModelParams> {
    let in_dim = model.dims.0;
    let n = y.len();
    if n == 0 || x.len() != n * in_dim {
        return Err(Error::Data(format!(
            "shard shape mismatch: {} features for {} labels",
            x.len(),
            n
        )));
    }
    let out = model.dims.2;
    for &label in y {
        if usize::from(label) >= out {
            return Err(Error::Data(format!(
                "label {label} out of range for {out} classes"
            )));
        }
    }

    let anchor = (cfg.prox_mu > 0.0).then(|| model.clone());
    let mut current = model.clone();
    let mut rng = seeds::rng(cfg.rng_seed, "shuffle", 0, 0);
    let mut order: Vec<usize> = (0..n).collect();
    let batch = cfg.batch_size.max(1);
    let mut grad = ModelParams::zeros(model.dims);
    let mut scratch = Scratch::new(batch.min(n), model.dims.1, out);
    let mut bx = vec![0.0; batch.min(n) * in_dim];
    let mut by = vec![0u8; batch.min(n)];

    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let m = chunk.len();
            for (slot, &idx) in chunk.iter().enumerate() {
                bx[slot * in_dim..(slot + 1) * in_dim]
                    .copy_from_slice(&x[idx * in_dim..(idx + 1) * in_dim]);
                by[slot] = y[idx];
            }
            for layer in &mut grad.layers {
                layer.w.fill(0.0);
                layer.b.fill(0.0);
            }
            backprop(
                &current,
                &bx[..m * in_dim],
                &by[..m],
                m,
                anchor.as_ref(),
                cfg.prox_mu,
                &mut grad,
                &mut scratch,
            );
            for (layer, glayer) in current.layers.iter_mut().zip(&grad.layers) {
                for (w, &g) in layer.w.iter_mut().zip(&glayer.w) {
                    *w -= cfg.learning_rate * g;
                }
                for (b, &g) in layer.b.iter_mut().zip(&glayer.b) {
                    *b -= cfg.learning_rate * g;
                }
            }
        }
    }
    Ok(current)
}

/// Test accuracy: fraction of argmax-correct predictions, evaluated in
/// batches. Argmax ties break toward the lowest class index.
pub fn evaluate(model: &ModelParams, x: &[f64], y: &[u8]) -> f64 {
    let (in_dim, _, out) = model.dims;
    let n = y.len();
    assert!(n > 0, "evaluate requires a non-empty test set");
    assert_eq!(x.len(), n * in_dim, "test shape mismatch");
    let mut correct = 0usize;
    const CHUNK: usize = 256;
    for start in (0..n).step_by(CHUNK) {
        let m = (n - start).min(CHUNK);
        let logits = forward(model, &x[start * in_dim..(start + m) * in_dim], m);
        for s in 0..m {
            let row = &logits[s * out..(s + 1) * out];
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            if best == usize::from(y[start + s]) {
                correct += 1;
            }
        }
    }
    correct as f64 / n as f64
}
