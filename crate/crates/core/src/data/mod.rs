//! Dataset ingestion, heterogeneity transforms, and client partitioning.
//!
//! A scenario is built in three steps: load a base dataset ([`idx`]),
//! choose a heterogeneity kind (one transform per heterogeneity class,
//! [`transform`]), and split samples across clients under a quantity-skew
//! regime ([`partition`]). Clients of the same heterogeneity class share
//! one transformed test set; the per-class ground truth is what ARI is
//! later measured against.

pub mod cache;
pub mod idx;
pub mod transform;

use crate::error::{Error, Result};
use crate::seeds;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use transform::TransformDescriptor;

pub use cache::{load_shards, save_shards};
pub use idx::load_idx;
pub use transform::{apply_label_swap, apply_transform};

/// Shared (features, labels) test block for one heterogeneity class.
pub(crate) type ClassTestBlock = (Arc<Vec<f64>>, Arc<Vec<u8>>);

/// A loaded image-classification dataset, pixels in [0, 1].
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    /// Row-major `[n × side × side]`.
    pub images: Vec<f64>,
    pub labels: Vec<u8>,
    pub n: usize,
    /// Images are square: height = width = side.
    pub side: usize,
    pub num_classes: usize,
}

impl Dataset {
    /// Borrow image `i` as a flat slice.
    pub fn image(&self, i: usize) -> &[f64] {
        let d = self.side * self.side;
        &self.images[i * d..(i + 1) * d]
    }
}

/// The three heterogeneity taxonomies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HetKind {
    /// Same labels, transformed inputs (e.g. rotations).
    ConceptShiftFeatures,
    /// Same inputs, permuted labels.
    ConceptShiftLabels,
    /// Same labels, morphologically distorted inputs.
    FeatureDistributionSkew,
}

/// One transform per heterogeneity class; class 0 is always unmodified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneitySpec {
    pub kind: HetKind,
    pub descriptors: Vec<TransformDescriptor>,
}

impl HeterogeneitySpec {
    pub fn num_classes_het(&self) -> usize {
        self.descriptors.len()
    }

    /// Concept shift on features via quarter-turn rotations.
    pub fn rotations() -> Self {
        HeterogeneitySpec {
            kind: HetKind::ConceptShiftFeatures,
            descriptors: vec![
                TransformDescriptor::Identity,
                TransformDescriptor::Rotate(90),
                TransformDescriptor::Rotate(180),
                TransformDescriptor::Rotate(270),
            ],
        }
    }

    /// Concept shift on features via grayscale inversion and zooming — the
    /// variant used for medical-style grayscale datasets, where rotations
    /// are unnatural.
    pub fn medical() -> Self {
        HeterogeneitySpec {
            kind: HetKind::ConceptShiftFeatures,
            descriptors: vec![
                TransformDescriptor::Identity,
                TransformDescriptor::Invert,
                TransformDescriptor::Zoom,
                TransformDescriptor::InvertZoom,
            ],
        }
    }

    /// Concept shift on labels via per-class label-swap tables:
    /// class 0 identity, class 1 swaps (0↔1)(2↔3), class 2 swaps
    /// (4↔5)(6↔7), class 3 swaps (8↔9)(0↔2).
    pub fn label_swaps(num_classes: usize) -> Self {
        let identity: Vec<u8> = (0..num_classes as u8).collect();
        let with_swaps = |pairs: &[(u8, u8)]| {
            let mut t = identity.clone();
            for &(a, b) in pairs {
                t.swap(usize::from(a), usize::from(b));
            }
            TransformDescriptor::LabelSwap(t)
        };
        HeterogeneitySpec {
            kind: HetKind::ConceptShiftLabels,
            descriptors: vec![
                TransformDescriptor::LabelSwap(identity.clone()),
                with_swaps(&[(0, 1), (2, 3)]),
                with_swaps(&[(4, 5), (6, 7)]),
                with_swaps(&[(8, 9), (0, 2)]),
            ],
        }
    }

    /// Feature distribution skew via morphology: identity, one dilation,
    /// one erosion, two dilations.
    pub fn morphology() -> Self {
        HeterogeneitySpec {
            kind: HetKind::FeatureDistributionSkew,
            descriptors: vec![
                TransformDescriptor::Identity,
                TransformDescriptor::Dilate(1),
                TransformDescriptor::Erode(1),
                TransformDescriptor::Dilate(2),
            ],
        }
    }

    /// Structural checks: non-empty, class 0 unmodified, label swaps used
    /// exactly when the kind is ConceptShiftLabels.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.descriptors.is_empty() {
            return Err(Error::Config("heterogeneity spec has no classes".into()));
        }
        for d in &self.descriptors {
            d.validate(num_classes)?;
            let swap_ok = (self.kind == HetKind::ConceptShiftLabels) == d.is_label_swap();
            if !swap_ok {
                return Err(Error::Config(format!(
                    "descriptor {d:?} does not match heterogeneity kind {:?}",
                    self.kind
                )));
            }
        }
        let first_is_identity = match &self.descriptors[0] {
            TransformDescriptor::Identity | TransformDescriptor::Rotate(0) => true,
            TransformDescriptor::LabelSwap(t) => {
                t.iter().enumerate().all(|(i, &v)| usize::from(v) == i)
            }
            _ => false,
        };
        if !first_is_identity {
            return Err(Error::Config(
                "heterogeneity class 0 must be the unmodified class".into(),
            ));
        }
        Ok(())
    }
}

/// Quantity-skew regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QSKind {
    /// Every client draws the same samples-per-label count.
    NonQS,
    /// Size groups rotate round-robin *within* each heterogeneity class.
    QS1,
    /// One size group per heterogeneity class (ascending by class index).
    QS2,
}

impl QSKind {
    /// Stable lowercase identifier used in configs, filenames, and reports.
    pub fn id(self) -> &'static str {
        match self {
            QSKind::NonQS => "nonqs",
            QSKind::QS1 => "qs1",
            QSKind::QS2 => "qs2",
        }
    }
}

impl std::fmt::Display for QSKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

impl std::str::FromStr for QSKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nonqs" => Ok(QSKind::NonQS),
            "qs1" => Ok(QSKind::QS1),
            "qs2" => Ok(QSKind::QS2),
            other => Err(Error::Config(format!(
                "unknown quantity-skew kind '{other}' (expected nonqs, qs1, or qs2)"
            ))),
        }
    }
}

/// Sample-size policy for a partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QSSpec {
    pub kind: QSKind,
    pub samples_per_label_nonqs: usize,
    pub qs_group_sizes: Vec<usize>,
}

impl QSSpec {
    pub fn new(kind: QSKind, samples_per_label_nonqs: usize, qs_group_sizes: Vec<usize>) -> Self {
        QSSpec {
            kind,
            samples_per_label_nonqs,
            qs_group_sizes,
        }
    }

    /// Samples per label for the `idx_in_class`-th client of `het_class`.
    fn samples_per_label(&self, idx_in_class: usize, het_class: usize) -> usize {
        match self.kind {
            QSKind::NonQS => self.samples_per_label_nonqs,
            QSKind::QS1 => self.qs_group_sizes[idx_in_class % self.qs_group_sizes.len()],
            QSKind::QS2 => self.qs_group_sizes[het_class],
        }
    }
}

/// One client's private data plus its ground-truth heterogeneity class.
///
/// Test tensors are shared (`Arc`) between all clients of a class — the
/// class test set is identical by construction.
#[derive(Debug, Clone)]
pub struct ClientShard {
    pub client_id: usize,
    pub train_x: Vec<f64>,
    pub train_y: Vec<u8>,
    pub test_x: Arc<Vec<f64>>,
    pub test_y: Arc<Vec<u8>>,
    pub het_class: usize,
    pub samples_per_label: usize,
}

impl ClientShard {
    /// |D_i|: the client's training sample count.
    pub fn num_train(&self) -> usize {
        self.train_y.len()
    }
}

/// The ground-truth class of every shard, in client order (ARI reference).
pub fn ground_truth(shards: &[ClientShard]) -> Vec<usize> {
    shards.iter().map(|s| s.het_class).collect()
}

/// Split `train`/`test` into per-client shards.
///
/// Clients are assigned to heterogeneity classes in contiguous blocks
/// (`num_clients` must divide evenly). Each client draws `samples_per_label`
/// samples of every label from the train pool — without replacement within
/// the client, independently (with replacement) across clients, so skew
/// regimes whose totals exceed the pool remain valid. The test pool is
/// shuffled once and split into `floor(test.n / classes)`-sized blocks, one
/// per class, so class test sets are disjoint; every shard of a class
/// shares the same transformed block.
pub fn partition(
    train: &Dataset,
    test: &Dataset,
    het: &HeterogeneitySpec,
    qs: &QSSpec,
    num_clients: usize,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    het.validate(train.num_classes)?;
    let classes = het.num_classes_het();
    if num_clients == 0 || !num_clients.is_multiple_of(classes) {
        return Err(Error::Config(format!(
            "{num_clients} clients cannot be split evenly across {classes} heterogeneity classes"
        )));
    }
    if qs.kind == QSKind::QS2 && qs.qs_group_sizes.len() != classes {
        return Err(Error::Config(format!(
            "QS2 needs one group size per heterogeneity class: {} sizes for {classes} classes",
            qs.qs_group_sizes.len()
        )));
    }
    if (qs.kind != QSKind::NonQS) && qs.qs_group_sizes.is_empty() {
        return Err(Error::Config("quantity-skew group sizes are empty".into()));
    }
    if train.side != test.side || train.num_classes != test.num_classes {
        return Err(Error::Data(format!(
            "train ({}px, {} classes) and test ({}px, {} classes) sets disagree",
            train.side, train.num_classes, test.side, test.num_classes
        )));
    }

    // Train pool indices per label.
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); train.num_classes];
    for (i, &l) in train.labels.iter().enumerate() {
        pools[usize::from(l)].push(i);
    }

    // Disjoint per-class test blocks from one seeded shuffle.
    let per_class_test = test.n / classes;
    if per_class_test == 0 {
        return Err(Error::Data(format!(
            "test pool of {} samples cannot cover {classes} heterogeneity classes",
            test.n
        )));
    }
    let mut test_order: Vec<usize> = (0..test.n).collect();
    {
        use rand::seq::SliceRandom;
        test_order.shuffle(&mut seeds::rng(seed, "testsplit", 0, 0));
    }
    let dim = test.side * test.side;
    let mut class_test: Vec<ClassTestBlock> = Vec::with_capacity(classes);
    for c in 0..classes {
        let block = &test_order[c * per_class_test..(c + 1) * per_class_test];
        let mut x = Vec::with_capacity(per_class_test * dim);
        let mut y = Vec::with_capacity(per_class_test);
        for &i in block {
            x.extend_from_slice(&transform_features(het, c, test.image(i), test.side));
            y.push(test.labels[i]);
        }
        let y = transform_labels(het, c, &y);
        class_test.push((Arc::new(x), Arc::new(y)));
    }

    let per_class_clients = num_clients / classes;
    let mut shards = Vec::with_capacity(num_clients);
    for client_id in 0..num_clients {
        let het_class = client_id / per_class_clients;
        let idx_in_class = client_id % per_class_clients;
        let spl = qs.samples_per_label(idx_in_class, het_class);
        if spl == 0 {
            return Err(Error::Config(format!(
                "client {client_id} would receive 0 samples per label"
            )));
        }
        let mut rng = seeds::rng(seed, "shard", client_id as u64, 0);
        let mut train_x = Vec::with_capacity(spl * train.num_classes * dim);
        let mut train_y = Vec::with_capacity(spl * train.num_classes);
        for (label, pool) in pools.iter().enumerate() {
            if pool.len() < spl {
                return Err(Error::Data(format!(
                    "label {label} has {} training samples, client {client_id} needs {spl}",
                    pool.len()
                )));
            }
            let picks = rand::seq::index::sample(&mut rng, pool.len(), spl);
            for p in picks {
                let i = pool[p];
                train_x
                    .extend_from_slice(&transform_features(het, het_class, train.image(i), train.side));
                train_y.push(label as u8);
            }
        }
        let train_y = transform_labels(het, het_class, &train_y);
        let (test_x, test_y) = class_test[het_class].clone();
        shards.push(ClientShard {
            client_id,
            train_x,
            train_y,
            test_x,
            test_y,
            het_class,
            samples_per_label: spl,
        });
    }
    Ok(shards)
}

/// Apply class `c`'s transform to features (no-op for label-swap kinds).
fn transform_features(het: &HeterogeneitySpec, c: usize, image: &[f64], side: usize) -> Vec<f64> {
    apply_transform(&het.descriptors[c], image, side)
}

/// Apply class `c`'s label swap (no-op for feature kinds).
fn transform_labels(het: &HeterogeneitySpec, c: usize, labels: &[u8]) -> Vec<u8> {
    match &het.descriptors[c] {
        TransformDescriptor::LabelSwap(table) => apply_label_swap(table, labels),
        _ => labels.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A small synthetic dataset: `per_label` samples of each of 10 labels,
    /// 4×4 images whose pixel values encode the sample index.
    fn toy_dataset(per_label: usize, name: &str) -> Dataset {
        let num_classes = 10;
        let n = per_label * num_classes;
        let mut images = Vec::with_capacity(n * 16);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let base = (i as f64) / (n as f64);
            images.extend((0..16).map(|p| (base + p as f64 * 1e-6).min(1.0)));
            labels.push((i % num_classes) as u8);
        }
        Dataset {
            name: name.to_string(),
            images,
            labels,
            n,
            side: 4,
            num_classes,
        }
    }

    #[test]
    fn nonqs_partition_has_even_counts() {
        let train = toy_dataset(30, "train");
        let test = toy_dataset(12, "test");
        let qs = QSSpec::new(QSKind::NonQS, 5, vec![1, 2, 4, 8]);
        let shards =
            partition(&train, &test, &HeterogeneitySpec::rotations(), &qs, 8, 0).unwrap();
        assert_eq!(shards.len(), 8);
        for s in &shards {
            assert_eq!(s.num_train(), 5 * 10);
            assert_eq!(s.samples_per_label, 5);
            // Stratification: every label exactly 5 times.
            let mut counts = [0usize; 10];
            for &y in &s.train_y {
                counts[usize::from(y)] += 1;
            }
            assert!(counts.iter().all(|&c| c == 5));
        }
        // 2 clients per class, contiguous blocks.
        let truth = ground_truth(&shards);
        assert_eq!(truth, vec![0, 0, 1, 1, 2, 2, 3, 3]);
    }

    #[test]
    fn qs1_rotates_group_sizes_within_class() {
        let train = toy_dataset(30, "train");
        let test = toy_dataset(12, "test");
        let qs = QSSpec::new(QSKind::QS1, 5, vec![1, 2, 4]);
        // 8 clients per class: sizes cycle 1,2,4,1,2,4,1,2.
        let shards =
            partition(&train, &test, &HeterogeneitySpec::rotations(), &qs, 32, 1).unwrap();
        let class0: Vec<usize> = shards[..8].iter().map(|s| s.samples_per_label).collect();
        assert_eq!(class0, vec![1, 2, 4, 1, 2, 4, 1, 2]);
        // Same cycle in every class.
        let class3: Vec<usize> = shards[24..].iter().map(|s| s.samples_per_label).collect();
        assert_eq!(class0, class3);
    }

    #[test]
    fn qs2_assigns_one_group_per_class_ascending() {
        let train = toy_dataset(30, "train");
        let test = toy_dataset(12, "test");
        let qs = QSSpec::new(QSKind::QS2, 5, vec![1, 2, 4, 8]);
        let shards =
            partition(&train, &test, &HeterogeneitySpec::rotations(), &qs, 8, 2).unwrap();
        for s in &shards {
            assert_eq!(s.samples_per_label, [1, 1, 2, 2, 4, 4, 8, 8][s.client_id]);
        }
        // Totals per class follow the 1:2:4:8 ratio.
        let totals: Vec<usize> = (0..4)
            .map(|c| {
                shards
                    .iter()
                    .filter(|s| s.het_class == c)
                    .map(|s| s.num_train())
                    .sum()
            })
            .collect();
        assert_eq!(totals, vec![20, 40, 80, 160]);
    }

    #[test]
    fn partition_is_deterministic() {
        let train = toy_dataset(20, "train");
        let test = toy_dataset(8, "test");
        let qs = QSSpec::new(QSKind::NonQS, 3, vec![1, 2]);
        let het = HeterogeneitySpec::label_swaps(10);
        let a = partition(&train, &test, &het, &qs, 4, 7).unwrap();
        let b = partition(&train, &test, &het, &qs, 4, 7).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.train_x, y.train_x);
            assert_eq!(x.train_y, y.train_y);
            assert_eq!(x.test_x, y.test_x);
        }
        let c = partition(&train, &test, &het, &qs, 4, 8).unwrap();
        assert!(a.iter().zip(&c).any(|(x, y)| x.train_x != y.train_x));
    }

    #[test]
    fn class_test_sets_are_shared_and_disjoint_across_classes() {
        let train = toy_dataset(20, "train");
        let test = toy_dataset(8, "test");
        let qs = QSSpec::new(QSKind::NonQS, 3, vec![]);
        let shards =
            partition(&train, &test, &HeterogeneitySpec::rotations(), &qs, 8, 3).unwrap();
        assert!(Arc::ptr_eq(&shards[0].test_x, &shards[1].test_x));
        assert!(!Arc::ptr_eq(&shards[0].test_x, &shards[2].test_x));
        // 80 test samples / 4 classes = 20 per class.
        assert_eq!(shards[0].test_y.len(), 20);
    }

    #[test]
    fn label_swap_kind_changes_labels_not_features() {
        let train = toy_dataset(20, "train");
        let test = toy_dataset(8, "test");
        let qs = QSSpec::new(QSKind::NonQS, 2, vec![]);
        let het = HeterogeneitySpec::label_swaps(10);
        let shards = partition(&train, &test, &het, &qs, 4, 4).unwrap();
        // Class 1 swaps (0↔1)(2↔3): its shard must contain both raw
        // features (same multiset as drawn) and swapped labels.
        let class1 = &shards[1];
        assert_eq!(class1.het_class, 1);
        let mut counts = [0usize; 10];
        for &y in &class1.train_y {
            counts[usize::from(y)] += 1;
        }
        // Still stratified (swap permutes whole label groups).
        assert!(counts.iter().all(|&c| c == 2));
        // Test labels for class 1 differ from class 0's on swapped classes.
        let swapped_back: Vec<u8> =
            apply_label_swap(&[1, 0, 3, 2, 4, 5, 6, 7, 8, 9], &class1.test_y);
        let _ = swapped_back; // involution sanity is covered in transform tests
    }

    #[test]
    fn rotation_kind_changes_features_not_labels() {
        let train = toy_dataset(20, "train");
        let test = toy_dataset(8, "test");
        let qs = QSSpec::new(QSKind::NonQS, 2, vec![]);
        let het = HeterogeneitySpec::rotations();
        let shards = partition(&train, &test, &het, &qs, 4, 5).unwrap();
        for s in &shards {
            let mut counts = [0usize; 10];
            for &y in &s.train_y {
                counts[usize::from(y)] += 1;
            }
            assert!(counts.iter().all(|&c| c == 2), "labels untouched by rotation");
        }
    }

    #[test]
    fn insufficient_pool_is_data_error_naming_label() {
        let train = toy_dataset(4, "train");
        let test = toy_dataset(8, "test");
        let qs = QSSpec::new(QSKind::NonQS, 9, vec![]);
        let err = partition(&train, &test, &HeterogeneitySpec::rotations(), &qs, 4, 0)
            .unwrap_err();
        assert!(matches!(err, Error::Data(_)));
        assert!(err.to_string().contains("label 0"), "{err}");
    }

    #[test]
    fn uneven_client_count_is_config_error() {
        let train = toy_dataset(20, "train");
        let test = toy_dataset(8, "test");
        let qs = QSSpec::new(QSKind::NonQS, 2, vec![]);
        let err =
            partition(&train, &test, &HeterogeneitySpec::rotations(), &qs, 6, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
