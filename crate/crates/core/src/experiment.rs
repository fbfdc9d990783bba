//! Config-driven experiment runner: grid expansion, parallel execution,
//! a results store with idempotent reruns, and CSV report emission.
//!
//! A sweep is described by a TOML [`Config`] (sections `[data]`, `[grid]`,
//! `[scenario]`, `[algo]`, `[output]`). [`expand_grid`] turns it into a
//! deterministic list of [`Cell`]s — one (scenario, algorithm, seed) run
//! each — and [`run_all`] executes them, any number at a time, writing one
//! JSON [`RunRecord`] per cell into a [`ResultsStore`]. Records are a pure
//! function of the cell, so reruns and different worker counts reproduce
//! them byte for byte; completed cells are skipped unless forced.
//!
//! Datasets live under a data directory (defaulting to `$CFLSIM_DATA_DIR`,
//! then `data/`), one subdirectory per dataset holding the four IDX files
//! `train-images-idx3-ubyte`, `train-labels-idx1-ubyte`,
//! `t10k-images-idx3-ubyte`, `t10k-labels-idx1-ubyte`.

use crate::algorithms::{run_algorithm, AlgoConfig, Algorithm};
use crate::data::{load_idx, partition, Dataset, HeterogeneitySpec, QSKind, QSSpec};
use crate::error::{Error, Result};
use crate::evaluation::{
    aggregate_cell, average_rank, delta_ari, global_accuracy, mean, mean_abs, population_std,
    winrate_matrix, RunRecord,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

/// Named heterogeneity constructions selectable from a config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HetName {
    /// Concept shift on features: quarter-turn rotations.
    Rotations,
    /// Concept shift on labels: per-class label-swap tables.
    LabelSwaps,
    /// Feature distribution skew: dilation / erosion morphology.
    Morphology,
    /// Concept shift on features for grayscale medical-style data:
    /// inversion and zoom.
    Medical,
}

impl HetName {
    /// All selectable kinds, in a stable order.
    pub const ALL: [HetName; 4] = [
        HetName::Rotations,
        HetName::LabelSwaps,
        HetName::Morphology,
        HetName::Medical,
    ];

    /// Stable identifier used in configs, filenames, and reports.
    pub fn id(self) -> &'static str {
        match self {
            HetName::Rotations => "rotations",
            HetName::LabelSwaps => "label_swaps",
            HetName::Morphology => "morphology",
            HetName::Medical => "medical",
        }
    }

    /// Number of heterogeneity classes the construction produces.
    pub fn num_classes(self) -> usize {
        4
    }

    /// Materialize the transform set for a dataset with `num_classes`
    /// label classes.
    pub fn to_spec(self, num_classes: usize) -> Result<HeterogeneitySpec> {
        match self {
            HetName::Rotations => Ok(HeterogeneitySpec::rotations()),
            HetName::Medical => Ok(HeterogeneitySpec::medical()),
            HetName::Morphology => Ok(HeterogeneitySpec::morphology()),
            HetName::LabelSwaps => {
                if num_classes < 10 {
                    return Err(Error::Config(format!(
                        "label_swaps heterogeneity needs ≥ 10 label classes, dataset has {num_classes}"
                    )));
                }
                Ok(HeterogeneitySpec::label_swaps(num_classes))
            }
        }
    }
}

impl std::fmt::Display for HetName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

impl std::str::FromStr for HetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HetName::ALL
            .into_iter()
            .find(|h| h.id() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown heterogeneity kind '{s}' (expected rotations, label_swaps, morphology, or medical)"
                ))
            })
    }
}

/// One fully resolved scenario: everything that defines a run except the
/// algorithm and the seed. Embedded verbatim in every [`RunRecord`] so
/// records are self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    /// Dataset name (a subdirectory of the data directory).
    pub dataset: String,
    pub het: HetName,
    pub qs: QSKind,
    pub num_clients: usize,
    /// Cluster count K given to the algorithm (SRFCA discovers its own).
    pub k: usize,
    /// Communication-round budget N.
    pub rounds: usize,
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Per-label samples each client draws under non-QS.
    pub samples_per_label: usize,
    /// Per-label size groups for the QS regimes.
    pub qs_group_sizes: Vec<usize>,
    /// Hidden-layer width; input/output widths come from the dataset.
    pub hidden: usize,
}

/// `[data]` section: where datasets live and which ones to use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Data directory; `None` falls back to `$CFLSIM_DATA_DIR`, then `data`.
    pub dir: Option<PathBuf>,
    pub datasets: Vec<String>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            dir: None,
            datasets: vec!["mnist_subset".to_string()],
        }
    }
}

impl DataSection {
    /// The effective data directory (config value, else `$CFLSIM_DATA_DIR`,
    /// else `data`).
    pub fn resolve_dir(&self) -> PathBuf {
        if let Some(d) = &self.dir {
            return d.clone();
        }
        if let Ok(d) = std::env::var("CFLSIM_DATA_DIR") {
            if !d.is_empty() {
                return PathBuf::from(d);
            }
        }
        PathBuf::from("data")
    }
}

/// `[grid]` section: the axes whose product defines the run set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub heterogeneity: Vec<HetName>,
    pub qs: Vec<QSKind>,
    /// Cluster counts; more than one entry turns the sweep into a
    /// K-sensitivity study.
    pub k: Vec<usize>,
    pub algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            heterogeneity: vec![HetName::Rotations],
            qs: vec![QSKind::NonQS],
            k: vec![4],
            algorithms: Algorithm::ALL.to_vec(),
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

/// `[scenario]` section: client population and trainer hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub num_clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub samples_per_label: usize,
    pub qs_group_sizes: Vec<usize>,
    pub hidden: usize,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection {
            num_clients: 20,
            rounds: 20,
            local_epochs: 10,
            learning_rate: 0.05,
            batch_size: 32,
            samples_per_label: 25,
            qs_group_sizes: vec![2, 8, 40, 80],
            hidden: 200,
        }
    }
}

/// `[algo]` section: algorithm-specific knobs shared across the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgoSection {
    /// One-shot clustering round for CFL / FL+HC; `None` means N/2.
    pub clustering_round: Option<usize>,
    pub ifca_restarts: usize,
    pub ifca_winner_by_loss: bool,
    /// Proximal coefficient, applied to FedProx cells only.
    pub prox_mu: f64,
    pub trim_beta: f64,
    pub srfca_quantile_lo: f64,
    pub srfca_quantile_hi: f64,
    pub srfca_grid_size: usize,
    /// First SRFCA refine-phase length; 0 means ⌈N/3⌉.
    pub srfca_refine_rounds: usize,
}

impl Default for AlgoSection {
    fn default() -> Self {
        AlgoSection {
            clustering_round: None,
            ifca_restarts: 5,
            ifca_winner_by_loss: false,
            prox_mu: 0.01,
            trim_beta: 0.1,
            srfca_quantile_lo: 0.10,
            srfca_quantile_hi: 0.25,
            srfca_grid_size: 4,
            srfca_refine_rounds: 0,
        }
    }
}

/// `[output]` section: artifact destination and parallelism. These fields
/// do not affect run results and are excluded from the manifest hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub out_dir: PathBuf,
    /// Worker threads for cell-level parallelism; 0 = one per CPU.
    pub workers: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            out_dir: PathBuf::from("results"),
            workers: 0,
        }
    }
}

/// A full sweep description, loadable from TOML.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataSection,
    pub grid: GridSection,
    pub scenario: ScenarioSection,
    pub algo: AlgoSection,
    pub output: OutputSection,
}

/// `true` for names safe to embed in filenames and CSV cells.
fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '.' || c == '_' || c == '-')
}

impl Config {
    /// Parse a TOML string. Unknown keys are configuration errors.
    pub fn from_toml_str(s: &str) -> Result<Config> {
        let config: Config =
            toml::from_str(s).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Load and validate a config file.
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Structural checks that do not need the datasets on disk.
    pub fn validate(&self) -> Result<()> {
        let c = |cond: bool, msg: &str| -> Result<()> {
            if cond {
                Ok(())
            } else {
                Err(Error::Config(msg.to_string()))
            }
        };
        c(!self.data.datasets.is_empty(), "no datasets configured")?;
        for name in &self.data.datasets {
            if !valid_name(name) {
                return Err(Error::Config(format!(
                    "dataset name '{name}' may only contain [A-Za-z0-9._-]"
                )));
            }
        }
        c(!self.grid.heterogeneity.is_empty(), "grid.heterogeneity is empty")?;
        c(!self.grid.qs.is_empty(), "grid.qs is empty")?;
        c(!self.grid.k.is_empty(), "grid.k is empty")?;
        c(!self.grid.algorithms.is_empty(), "grid.algorithms is empty")?;
        c(!self.grid.seeds.is_empty(), "grid.seeds is empty")?;
        c(self.grid.k.iter().all(|&k| k >= 1), "grid.k entries must be ≥ 1")?;
        let s = &self.scenario;
        c(s.num_clients >= 1, "scenario.num_clients must be ≥ 1")?;
        c(s.rounds >= 1, "scenario.rounds must be ≥ 1")?;
        c(s.local_epochs >= 1, "scenario.local_epochs must be ≥ 1")?;
        c(s.batch_size >= 1, "scenario.batch_size must be ≥ 1")?;
        c(s.samples_per_label >= 1, "scenario.samples_per_label must be ≥ 1")?;
        c(s.hidden >= 1, "scenario.hidden must be ≥ 1")?;
        c(
            s.learning_rate.is_finite() && s.learning_rate > 0.0,
            "scenario.learning_rate must be positive",
        )?;
        let uses_qs = self.grid.qs.iter().any(|&q| q != QSKind::NonQS);
        if uses_qs {
            c(
                !s.qs_group_sizes.is_empty(),
                "scenario.qs_group_sizes must be non-empty for QS regimes",
            )?;
            c(
                s.qs_group_sizes.iter().all(|&g| g >= 1),
                "scenario.qs_group_sizes entries must be ≥ 1",
            )?;
        }
        if self.grid.qs.contains(&QSKind::QS2) {
            for het in &self.grid.heterogeneity {
                if s.qs_group_sizes.len() != het.num_classes() {
                    return Err(Error::Config(format!(
                        "QS2 needs one group size per heterogeneity class: {} sizes for {} ({} classes)",
                        s.qs_group_sizes.len(),
                        het.id(),
                        het.num_classes()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Shift every grid seed by `offset` (the CLI's `--seed-offset`).
    pub fn offset_seeds(&mut self, offset: u64) {
        for s in &mut self.grid.seeds {
            *s = s.wrapping_add(offset);
        }
    }

    /// SHA-256 over every config field that affects results — the grid,
    /// the scenario, the algorithm knobs, and the dataset names. Output
    /// location, worker count, and the data directory do not contribute.
    pub fn results_hash(&self) -> String {
        let relevant = (
            &self.data.datasets,
            &self.grid,
            &self.scenario,
            &self.algo,
        );
        let json = serde_json::to_string(&relevant).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// One executable unit of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub scenario: ScenarioSpec,
    pub algorithm: Algorithm,
    pub seed: u64,
}

impl Cell {
    /// Filesystem-safe unique name for this cell's artifacts.
    pub fn file_stem(&self) -> String {
        format!(
            "{}_{}_{}_k{}_{}_s{}",
            self.scenario.dataset,
            self.scenario.het.id(),
            self.scenario.qs.id(),
            self.scenario.k,
            self.algorithm.id(),
            self.seed
        )
    }
}

/// Expand a config into its run set, in deterministic lexicographic order
/// of (dataset, heterogeneity, qs, K, algorithm, seed) — each axis in its
/// configured order, seeds varying fastest.
pub fn expand_grid(config: &Config) -> Vec<Cell> {
    let mut cells = Vec::new();
    for dataset in &config.data.datasets {
        for &het in &config.grid.heterogeneity {
            for &qs in &config.grid.qs {
                for &k in &config.grid.k {
                    let scenario = ScenarioSpec {
                        dataset: dataset.clone(),
                        het,
                        qs,
                        num_clients: config.scenario.num_clients,
                        k,
                        rounds: config.scenario.rounds,
                        local_epochs: config.scenario.local_epochs,
                        learning_rate: config.scenario.learning_rate,
                        batch_size: config.scenario.batch_size,
                        samples_per_label: config.scenario.samples_per_label,
                        qs_group_sizes: config.scenario.qs_group_sizes.clone(),
                        hidden: config.scenario.hidden,
                    };
                    for &algorithm in &config.grid.algorithms {
                        for &seed in &config.grid.seeds {
                            cells.push(Cell {
                                scenario: scenario.clone(),
                                algorithm,
                                seed,
                            });
                        }
                    }
                }
            }
        }
    }
    cells
}

/// Store manifest: pins the result-affecting config hash so stale stores
/// are never silently extended.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub config: Config,
}

/// A failed cell, recorded so the sweep can continue.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureRecord {
    pub cell: Cell,
    pub error: String,
}

/// On-disk layout: `manifest.json`, `records/*.json`, `failures/*.json`,
/// `reports/*.csv`, all under one root directory.
#[derive(Debug, Clone)]
pub struct ResultsStore {
    pub root: PathBuf,
}

impl ResultsStore {
    pub fn open(root: impl Into<PathBuf>) -> Self {
        ResultsStore { root: root.into() }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn records_dir(&self) -> PathBuf {
        self.root.join("records")
    }

    pub fn failures_dir(&self) -> PathBuf {
        self.root.join("failures")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn record_path(&self, cell: &Cell) -> PathBuf {
        self.records_dir().join(format!("{}.json", cell.file_stem()))
    }

    pub fn failure_path(&self, cell: &Cell) -> PathBuf {
        self.failures_dir().join(format!("{}.json", cell.file_stem()))
    }

    /// Read the manifest, if one exists.
    pub fn load_manifest(&self) -> Result<Option<Manifest>> {
        let path = self.manifest_path();
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        Ok(Some(manifest))
    }

    /// Load every run record, sorted by file name for determinism.
    pub fn load_records(&self) -> Result<Vec<RunRecord>> {
        let dir = self.records_dir();
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        paths.sort();
        let mut records = Vec::with_capacity(paths.len());
        for path in paths {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let record: RunRecord = serde_json::from_str(&text)
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            record
                .validate()
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            records.push(record);
        }
        Ok(records)
    }

    /// Load every failure record, sorted by file name.
    pub fn load_failures(&self) -> Result<Vec<FailureRecord>> {
        let dir = self.failures_dir();
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        paths.sort();
        let mut failures = Vec::with_capacity(paths.len());
        for path in paths {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let failure: FailureRecord = serde_json::from_str(&text)
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            failures.push(failure);
        }
        Ok(failures)
    }
}

/// What a sweep did: cells executed now, skipped as already complete, and
/// failed (failures are also on disk, and retried on the next run).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub executed: usize,
    pub skipped: usize,
    pub failed: usize,
}

impl SweepSummary {
    /// CLI exit code for this sweep: 4 on partial failure, else 0.
    pub fn exit_code(&self) -> i32 {
        if self.failed > 0 {
            4
        } else {
            0
        }
    }
}

/// Atomically write `bytes` (write to a sibling temp file, then rename).
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Load a dataset's four IDX files from `<data_dir>/<name>/`.
pub fn load_dataset(data_dir: &Path, name: &str) -> Result<(Dataset, Dataset)> {
    let dir = data_dir.join(name);
    let train = load_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
        name,
    )?;
    let test = load_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
        name,
    )?;
    Ok((train, test))
}

/// Build the algorithm config for one cell.
fn algo_config(
    scenario: &ScenarioSpec,
    algorithm: Algorithm,
    knobs: &AlgoSection,
    dims: (usize, usize, usize),
) -> AlgoConfig {
    let mut cfg = AlgoConfig::new(algorithm, scenario.k, scenario.rounds);
    cfg.dims = dims;
    cfg.train.local_epochs = scenario.local_epochs;
    cfg.train.learning_rate = scenario.learning_rate;
    cfg.train.batch_size = scenario.batch_size;
    if let Some(r) = knobs.clustering_round {
        cfg.clustering_round = r;
    }
    cfg.ifca_restarts = knobs.ifca_restarts;
    cfg.ifca_winner_by_loss = knobs.ifca_winner_by_loss;
    cfg.srfca_threshold_grid = (knobs.srfca_quantile_lo, knobs.srfca_quantile_hi);
    cfg.srfca_grid_size = knobs.srfca_grid_size;
    cfg.srfca_refine_rounds = knobs.srfca_refine_rounds;
    cfg.trim_beta = knobs.trim_beta;
    // The proximal term is FedProx's own knob; every other algorithm runs
    // plain SGD.
    cfg.prox_mu = if algorithm == Algorithm::FedProx {
        knobs.prox_mu
    } else {
        0.0
    };
    cfg
}

/// Execute one cell end to end: partition, run, measure.
fn run_cell(
    datasets: &BTreeMap<String, (Dataset, Dataset)>,
    knobs: &AlgoSection,
    cell: &Cell,
) -> Result<RunRecord> {
    let started = Instant::now();
    let (train, test) = datasets
        .get(&cell.scenario.dataset)
        .ok_or_else(|| Error::Data(format!("dataset {} not loaded", cell.scenario.dataset)))?;
    let het = cell.scenario.het.to_spec(train.num_classes)?;
    let qs = QSSpec::new(
        cell.scenario.qs,
        cell.scenario.samples_per_label,
        cell.scenario.qs_group_sizes.clone(),
    );
    let shards = partition(train, test, &het, &qs, cell.scenario.num_clients, cell.seed)?;
    let dims = (
        train.side * train.side,
        cell.scenario.hidden,
        train.num_classes,
    );
    let cfg = algo_config(&cell.scenario, cell.algorithm, knobs, dims);
    let outcome = run_algorithm(&shards, &cfg, cell.seed)?;
    let mut record =
        RunRecord::measure(&cell.scenario, cell.algorithm, cell.seed, &outcome, &shards)?;
    record.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(record)
}

/// Run the whole grid into the config's output directory.
///
/// Loads every dataset up front (a missing dataset fails the sweep before
/// any run starts), skips cells whose record already exists unless `force`,
/// executes the rest on `config.output.workers` threads, and records
/// per-cell failures without aborting. Records are byte-identical for any
/// worker count. With `progress`, one line per executed cell goes to
/// stderr.
pub fn run_all(config: &Config, force: bool, progress: bool) -> Result<(ResultsStore, SweepSummary)> {
    config.validate()?;
    let store = ResultsStore::open(&config.output.out_dir);
    let cells = expand_grid(config);

    // Sweep-level preconditions: all datasets must load.
    let data_dir = config.data.resolve_dir();
    let mut datasets = BTreeMap::new();
    for name in &config.data.datasets {
        datasets.insert(name.clone(), load_dataset(&data_dir, name)?);
    }

    // Manifest discipline: never silently extend a store built from a
    // different config.
    let hash = config.results_hash();
    if let Some(manifest) = store.load_manifest()? {
        if manifest.config_hash != hash && !force {
            return Err(Error::Config(format!(
                "results store {} was produced by a different config (hash {} vs {}); \
                 pass --force to overwrite or choose a fresh --out-dir",
                store.root.display(),
                manifest.config_hash,
                hash
            )));
        }
    }
    std::fs::create_dir_all(store.records_dir()).map_err(|e| Error::io(store.records_dir(), e))?;
    std::fs::create_dir_all(store.failures_dir())
        .map_err(|e| Error::io(store.failures_dir(), e))?;
    let manifest = Manifest {
        config_hash: hash,
        config: config.clone(),
    };
    let manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Data(format!("manifest serialization: {e}")))?;
    write_atomic(&store.manifest_path(), format!("{manifest_json}\n").as_bytes())?;

    let todo: Vec<&Cell> = cells
        .iter()
        .filter(|cell| force || !store.record_path(cell).exists())
        .collect();
    let skipped = cells.len() - todo.len();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.output.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let errors: Mutex<Vec<String>> = Mutex::new(Vec::new());
    let outcomes: Vec<Result<()>> = pool.install(|| {
        todo.par_iter()
            .map(|cell| {
                let result = run_cell(&datasets, &config.algo, cell);
                match result {
                    Ok(record) => {
                        let json = serde_json::to_string_pretty(&record)
                            .map_err(|e| Error::Data(format!("record serialization: {e}")))?;
                        write_atomic(&store.record_path(cell), format!("{json}\n").as_bytes())?;
                        // A success supersedes any stale failure marker.
                        let _ = std::fs::remove_file(store.failure_path(cell));
                        if progress {
                            eprintln!(
                                "ok   {} ({:.1} s)",
                                cell.file_stem(),
                                record.wall_clock_secs
                            );
                        }
                        Ok(())
                    }
                    Err(e) => {
                        let failure = FailureRecord {
                            cell: (*cell).clone(),
                            error: e.to_string(),
                        };
                        let json = serde_json::to_string_pretty(&failure)
                            .map_err(|e| Error::Data(format!("failure serialization: {e}")))?;
                        write_atomic(&store.failure_path(cell), format!("{json}\n").as_bytes())?;
                        let _ = std::fs::remove_file(store.record_path(cell));
                        if progress {
                            eprintln!("FAIL {} ({e})", cell.file_stem());
                        }
                        errors.lock().expect("error log").push(cell.file_stem());
                        Err(e)
                    }
                }
            })
            .collect()
    });
    let failed = outcomes.iter().filter(|r| r.is_err()).count();
    let summary = SweepSummary {
        executed: todo.len() - failed,
        skipped,
        failed,
    };
    Ok((store, summary))
}

/// The report families `report` can emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    /// Per-scenario accuracy / dispersion / ARI / rank cells.
    Tables,
    /// ΔARI between non-QS and each QS regime, plus the |Δ| summary.
    DeltaHeatmap,
    /// Pairwise win-rate matrix (full precision and 2-decimal views).
    Winrate,
    /// Global per-algorithm ranking.
    Rank,
    /// Accuracy as a function of K.
    Sensitivity,
}

impl ReportKind {
    pub const ALL: [ReportKind; 5] = [
        ReportKind::Tables,
        ReportKind::DeltaHeatmap,
        ReportKind::Winrate,
        ReportKind::Rank,
        ReportKind::Sensitivity,
    ];

    pub fn id(self) -> &'static str {
        match self {
            ReportKind::Tables => "tables",
            ReportKind::DeltaHeatmap => "delta_heatmap",
            ReportKind::Winrate => "winrate",
            ReportKind::Rank => "rank",
            ReportKind::Sensitivity => "sensitivity",
        }
    }
}

impl std::str::FromStr for ReportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ReportKind::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown report kind '{s}' (expected tables, delta_heatmap, winrate, rank, or sensitivity)"
                ))
            })
    }
}

/// Full-precision float cell (shortest round-trip decimal).
fn fmt_full(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v}")
    }
}

/// Two-decimal "mean±std" display cell in percent, the table style used
/// for accuracies (e.g. `73.06±14.88`).
fn fmt_pm_percent(mean: f64, std: f64) -> String {
    format!("{:.2}±{:.2}", 100.0 * mean, 100.0 * std)
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut text = String::with_capacity(64 * (rows.len() + 1));
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

/// Emit one report family as CSV files under `<store>/reports/`, returning
/// the paths written. Errors if the store holds no records.
pub fn report(store: &ResultsStore, kind: ReportKind) -> Result<Vec<PathBuf>> {
    let records = store.load_records()?;
    if records.is_empty() {
        return Err(Error::Data(format!(
            "results store {} contains no run records; nothing to report",
            store.root.display()
        )));
    }
    let dir = store.reports_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    match kind {
        ReportKind::Tables => report_tables(&records, &dir),
        ReportKind::DeltaHeatmap => report_delta(&records, &dir),
        ReportKind::Winrate => report_winrate(&records, &dir),
        ReportKind::Rank => report_rank(&records, &dir),
        ReportKind::Sensitivity => report_sensitivity(&records, &dir),
    }
}

type ScenarioKey = (String, String, String, usize);

fn scenario_key(r: &RunRecord) -> ScenarioKey {
    (
        r.scenario.dataset.clone(),
        r.scenario.het.id().to_string(),
        r.scenario.qs.id().to_string(),
        r.scenario.k,
    )
}

fn report_tables(records: &[RunRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut groups: BTreeMap<ScenarioKey, Vec<RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(scenario_key(r)).or_default().push(r.clone());
    }
    let mut rows = Vec::new();
    for ((dataset, het, qs, k), group) in &groups {
        let ranks = average_rank(group)?;
        let mut by_alg: BTreeMap<String, Vec<RunRecord>> = BTreeMap::new();
        for r in group {
            by_alg.entry(r.algorithm.clone()).or_default().push(r.clone());
        }
        for (alg, runs) in by_alg {
            let cell = aggregate_cell(&runs, ranks[&alg])?;
            let ari_display = format!("{:.2}", cell.mean_ari);
            rows.push(format!(
                "{dataset},{het},{qs},{k},{alg},{},{},{},{},{},{},{},{},{},{},{:.2}",
                cell.num_runs,
                fmt_full(cell.mean_acc),
                fmt_full(cell.std_acc),
                fmt_pm_percent(cell.mean_acc, cell.std_acc),
                fmt_full(cell.mean_client_std),
                fmt_full(cell.std_client_std),
                fmt_pm_percent(cell.mean_client_std, cell.std_client_std),
                fmt_full(cell.mean_ari),
                ari_display,
                fmt_full(cell.mean_rank),
                cell.mean_rank,
            ));
        }
    }
    let path = dir.join("tables.csv");
    write_csv(
        &path,
        "dataset,heterogeneity,qs,k,algorithm,num_runs,acc_mean,acc_std,acc_display,\
         client_std_mean,client_std_std,client_std_display,ari_mean,ari_display,\
         rank_mean,rank_display",
        &rows,
    )?;
    Ok(vec![path])
}

fn report_delta(records: &[RunRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    // Group by (dataset, het, k, algorithm); inside, split by QS kind.
    type DeltaKey = (String, String, usize, String);
    let mut groups: BTreeMap<DeltaKey, BTreeMap<QSKind, Vec<RunRecord>>> = BTreeMap::new();
    for r in records {
        let key = (
            r.scenario.dataset.clone(),
            r.scenario.het.id().to_string(),
            r.scenario.k,
            r.algorithm.clone(),
        );
        groups
            .entry(key)
            .or_default()
            .entry(r.scenario.qs)
            .or_default()
            .push(r.clone());
    }
    let mut rows = Vec::new();
    // (algorithm, qs) → per-(dataset, het, k) deltas, for the |Δ| summary.
    let mut summary: BTreeMap<(String, QSKind), Vec<f64>> = BTreeMap::new();
    for ((dataset, het, k, alg), by_qs) in &groups {
        let Some(nonqs) = by_qs.get(&QSKind::NonQS) else {
            continue;
        };
        for qs in [QSKind::QS1, QSKind::QS2] {
            let Some(qs_records) = by_qs.get(&qs) else {
                continue;
            };
            let delta = delta_ari(nonqs, qs_records)?;
            rows.push(format!(
                "{dataset},{het},{k},{alg},{},{},{:.2}",
                qs.id(),
                fmt_full(delta),
                delta,
            ));
            summary.entry((alg.clone(), qs)).or_default().push(delta);
        }
    }
    let heatmap = dir.join("delta_heatmap.csv");
    write_csv(
        &heatmap,
        "dataset,heterogeneity,k,algorithm,qs,delta_ari,delta_display",
        &rows,
    )?;
    let mut summary_rows = Vec::new();
    for ((alg, qs), deltas) in &summary {
        let m = mean_abs(deltas);
        summary_rows.push(format!(
            "{alg},{},{},{},{:.2}",
            qs.id(),
            deltas.len(),
            fmt_full(m),
            m,
        ));
    }
    let summary_path = dir.join("delta_summary.csv");
    write_csv(
        &summary_path,
        "algorithm,qs,num_cells,mean_abs_delta,mean_abs_delta_display",
        &summary_rows,
    )?;
    Ok(vec![heatmap, summary_path])
}

fn report_winrate(records: &[RunRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    let w = winrate_matrix(records)?;
    let header = format!("algorithm,{}", w.algorithms.join(","));
    let mut full_rows = Vec::new();
    let mut disp_rows = Vec::new();
    for i in 0..w.algorithms.len() {
        let full: Vec<String> = (0..w.algorithms.len())
            .map(|j| {
                if i == j {
                    String::new()
                } else {
                    fmt_full(w.rate(i, j))
                }
            })
            .collect();
        let disp: Vec<String> = (0..w.algorithms.len())
            .map(|j| {
                if i == j {
                    String::new()
                } else {
                    format!("{:.2}", w.rate(i, j))
                }
            })
            .collect();
        full_rows.push(format!("{},{}", w.algorithms[i], full.join(",")));
        disp_rows.push(format!("{},{}", w.algorithms[i], disp.join(",")));
    }
    let full_path = dir.join("winrate.csv");
    let disp_path = dir.join("winrate_display.csv");
    write_csv(&full_path, &header, &full_rows)?;
    write_csv(&disp_path, &header, &disp_rows)?;
    Ok(vec![full_path, disp_path])
}

fn report_rank(records: &[RunRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    let ranks = average_rank(records)?;
    let mut by_alg: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut aris: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        by_alg
            .entry(r.algorithm.clone())
            .or_default()
            .push(global_accuracy(r));
        aris.entry(r.algorithm.clone()).or_default().push(r.ari);
    }
    let mut entries: Vec<(String, f64)> = ranks.into_iter().collect();
    entries.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("ranks are finite"));
    let rows: Vec<String> = entries
        .iter()
        .map(|(alg, rank)| {
            format!(
                "{alg},{},{},{},{}",
                fmt_full(*rank),
                fmt_full(mean(&by_alg[alg])),
                fmt_full(population_std(&by_alg[alg])),
                fmt_full(mean(&aris[alg])),
            )
        })
        .collect();
    let path = dir.join("rank.csv");
    write_csv(&path, "algorithm,rank,acc_mean,acc_std,ari", &rows)?;
    Ok(vec![path])
}

fn report_sensitivity(records: &[RunRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut groups: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    let mut aris: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for r in records {
        let key = (r.algorithm.clone(), r.scenario.k);
        groups.entry(key.clone()).or_default().push(global_accuracy(r));
        aris.entry(key).or_default().push(r.ari);
    }
    let rows: Vec<String> = groups
        .iter()
        .map(|((alg, k), accs)| {
            let m = mean(accs);
            let s = population_std(accs);
            format!(
                "{alg},{k},{},{},{},{},{}",
                accs.len(),
                fmt_full(m),
                fmt_full(s),
                fmt_pm_percent(m, s),
                fmt_full(mean(&aris[&(alg.clone(), *k)])),
            )
        })
        .collect();
    let path = dir.join("sensitivity.csv");
    write_csv(
        &path,
        "algorithm,k,num_runs,acc_mean,acc_std,acc_display,ari_mean",
        &rows,
    )?;
    Ok(vec![path])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    /// Write a deterministic toy dataset in IDX format: `n` samples of
    /// `side`×`side` random bytes, labels cycling 0..10.
    fn write_idx_dataset(data_dir: &Path, name: &str, n_train: usize, n_test: usize, side: usize) {
        use rand::RngCore;
        let dir = data_dir.join(name);
        fs::create_dir_all(&dir).unwrap();
        let mut rng = crate::seeds::rng(99, "idxfixture", 0, 0);
        let mut write_pair = |prefix: &str, n: usize| {
            let mut images = Vec::with_capacity(16 + n * side * side);
            images.extend_from_slice(&[0, 0, 8, 3]);
            images.extend_from_slice(&(n as u32).to_be_bytes());
            images.extend_from_slice(&(side as u32).to_be_bytes());
            images.extend_from_slice(&(side as u32).to_be_bytes());
            let mut pixels = vec![0u8; n * side * side];
            rng.fill_bytes(&mut pixels);
            images.extend_from_slice(&pixels);
            fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), images).unwrap();

            let mut labels = Vec::with_capacity(8 + n);
            labels.extend_from_slice(&[0, 0, 8, 1]);
            labels.extend_from_slice(&(n as u32).to_be_bytes());
            labels.extend((0..n).map(|i| (i % 10) as u8));
            fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), labels).unwrap();
        };
        write_pair("train", n_train);
        write_pair("t10k", n_test);
    }

    /// A micro config against a synthesized IDX dataset: tiny model, two
    /// rounds of everything, fast enough to sweep all algorithms.
    fn micro_config(data_dir: &Path, out_dir: &Path) -> Config {
        let mut config = Config::default();
        config.data.dir = Some(data_dir.to_path_buf());
        config.data.datasets = vec!["toyidx".to_string()];
        config.grid.heterogeneity = vec![HetName::Rotations];
        config.grid.qs = vec![QSKind::NonQS, QSKind::QS1];
        config.grid.k = vec![2];
        config.grid.algorithms = Algorithm::ALL.to_vec();
        config.grid.seeds = vec![0];
        config.scenario.num_clients = 8;
        config.scenario.rounds = 4;
        config.scenario.local_epochs = 1;
        config.scenario.batch_size = 16;
        config.scenario.samples_per_label = 2;
        config.scenario.qs_group_sizes = vec![1, 2];
        config.scenario.hidden = 8;
        config.algo.ifca_restarts = 2;
        config.output.out_dir = out_dir.to_path_buf();
        config.output.workers = 1;
        config
    }

    #[test]
    fn expand_grid_product_counts() {
        let mut config = Config::default();
        config.data.datasets = (0..6).map(|i| format!("d{i}")).collect();
        config.grid.heterogeneity =
            vec![HetName::Rotations, HetName::LabelSwaps, HetName::Morphology];
        config.grid.qs = vec![QSKind::NonQS, QSKind::QS1, QSKind::QS2];
        config.grid.k = vec![4];
        config.grid.algorithms = vec![Algorithm::FedAvg, Algorithm::Cornflqs];
        config.grid.seeds = vec![0, 1, 2, 3, 4];
        let cells = expand_grid(&config);
        // 6 datasets × 3 het × 3 qs × 5 seeds = 270 per algorithm.
        assert_eq!(cells.len(), 270 * 2);
        let fedavg = cells
            .iter()
            .filter(|c| c.algorithm == Algorithm::FedAvg)
            .count();
        assert_eq!(fedavg, 270);

        config.data.datasets = vec!["d".into()];
        config.grid.heterogeneity = vec![HetName::Rotations];
        config.grid.qs = vec![QSKind::NonQS];
        config.grid.algorithms = vec![Algorithm::FedAvg];
        config.grid.seeds = vec![7];
        assert_eq!(expand_grid(&config).len(), 1);

        // Desk grid: 1 dataset × 3 het × 3 qs × 5 seeds = 45 per algorithm.
        config.grid.heterogeneity =
            vec![HetName::Rotations, HetName::LabelSwaps, HetName::Morphology];
        config.grid.qs = vec![QSKind::NonQS, QSKind::QS1, QSKind::QS2];
        config.grid.seeds = vec![0, 1, 2, 3, 4];
        assert_eq!(expand_grid(&config).len(), 45);
    }

    #[test]
    fn expand_grid_order_is_lexicographic_with_seeds_fastest() {
        let mut config = Config::default();
        config.data.datasets = vec!["a".into(), "b".into()];
        config.grid.heterogeneity = vec![HetName::Rotations, HetName::Morphology];
        config.grid.qs = vec![QSKind::NonQS];
        config.grid.k = vec![2, 4];
        config.grid.algorithms = vec![Algorithm::FedAvg, Algorithm::Cfl];
        config.grid.seeds = vec![0, 1];
        let cells = expand_grid(&config);
        assert_eq!(cells.len(), 2 * 2 * 2 * 2 * 2);
        // Seeds vary fastest, then algorithms, then K, then het, then dataset.
        assert_eq!(cells[0].file_stem(), "a_rotations_nonqs_k2_fedavg_s0");
        assert_eq!(cells[1].file_stem(), "a_rotations_nonqs_k2_fedavg_s1");
        assert_eq!(cells[2].file_stem(), "a_rotations_nonqs_k2_cfl_s0");
        assert_eq!(cells[4].file_stem(), "a_rotations_nonqs_k4_fedavg_s0");
        assert_eq!(cells[8].file_stem(), "a_morphology_nonqs_k2_fedavg_s0");
        assert_eq!(cells[16].file_stem(), "b_rotations_nonqs_k2_fedavg_s0");
        // Deterministic: same config, same order.
        assert_eq!(expand_grid(&config), cells);
    }

    #[test]
    fn config_toml_roundtrip_defaults_and_errors() {
        // Minimal file: all defaults.
        let config = Config::from_toml_str("").unwrap();
        assert_eq!(config.scenario.num_clients, 20);
        assert_eq!(config.grid.seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(config.grid.algorithms.len(), 8);

        let config = Config::from_toml_str(
            r#"
            [grid]
            algorithms = ["cornflqs", "fedavg"]
            qs = ["nonqs", "qs2"]
            seeds = [3]

            [scenario]
            num_clients = 8
            qs_group_sizes = [1, 2, 3, 4]

            [output]
            out_dir = "elsewhere"
            "#,
        )
        .unwrap();
        assert_eq!(
            config.grid.algorithms,
            vec![Algorithm::Cornflqs, Algorithm::FedAvg]
        );
        assert_eq!(config.grid.qs, vec![QSKind::NonQS, QSKind::QS2]);
        assert_eq!(config.output.out_dir, PathBuf::from("elsewhere"));

        // Unknown keys and malformed values are config errors.
        assert!(matches!(
            Config::from_toml_str("[grid]\nalgos = [\"fedavg\"]"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            Config::from_toml_str("[scenario]\nnum_clients = \"many\""),
            Err(Error::Config(_))
        ));
        // Structural validation: empty seeds.
        assert!(matches!(
            Config::from_toml_str("[grid]\nseeds = []"),
            Err(Error::Config(_))
        ));
        // QS2 with the wrong number of group sizes.
        assert!(matches!(
            Config::from_toml_str("[grid]\nqs = [\"qs2\"]\n[scenario]\nqs_group_sizes = [1, 2]"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn results_hash_tracks_exactly_the_result_affecting_fields() {
        let base = Config::default();
        let hash = base.results_hash();

        let mut changed = base.clone();
        changed.scenario.rounds += 1;
        assert_ne!(changed.results_hash(), hash);

        let mut changed = base.clone();
        changed.grid.seeds = vec![9];
        assert_ne!(changed.results_hash(), hash);

        let mut changed = base.clone();
        changed.algo.trim_beta = 0.2;
        assert_ne!(changed.results_hash(), hash);

        let mut changed = base.clone();
        changed.data.datasets = vec!["other".into()];
        assert_ne!(changed.results_hash(), hash);

        // Output location, workers, and the data directory do not affect
        // results.
        let mut same = base.clone();
        same.output.out_dir = PathBuf::from("elsewhere");
        same.output.workers = 7;
        same.data.dir = Some(PathBuf::from("/somewhere"));
        assert_eq!(same.results_hash(), hash);
    }

    #[test]
    fn seed_offset_shifts_every_seed() {
        let mut config = Config::default();
        config.offset_seeds(100);
        assert_eq!(config.grid.seeds, vec![100, 101, 102, 103, 104]);
    }

    #[test]
    fn micro_sweep_runs_all_algorithms_and_is_idempotent() {
        let tmp = tempfile::tempdir().unwrap();
        let data_dir = tmp.path().join("data");
        write_idx_dataset(&data_dir, "toyidx", 80, 40, 8);
        let out = tmp.path().join("out");
        let config = micro_config(&data_dir, &out);

        let (store, summary) = run_all(&config, false, false).unwrap();
        // 1 dataset × 1 het × 2 qs × 1 k × 8 algorithms × 1 seed.
        assert_eq!(summary.executed, 16);
        assert_eq!(summary.skipped, 0);
        assert_eq!(summary.failed, 0);
        assert_eq!(summary.exit_code(), 0);
        let records = store.load_records().unwrap();
        assert_eq!(records.len(), 16);
        for r in &records {
            r.validate().unwrap();
            assert_eq!(r.scenario.num_clients, 8);
            assert_eq!(r.trace_digest.len(), 64);
        }

        // Rerun without force: nothing executes, bytes untouched.
        let before: BTreeMap<PathBuf, Vec<u8>> = fs::read_dir(store.records_dir())
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                let bytes = fs::read(&p).unwrap();
                (p, bytes)
            })
            .collect();
        let (_, summary2) = run_all(&config, false, false).unwrap();
        assert_eq!(summary2.executed, 0);
        assert_eq!(summary2.skipped, 16);
        for (path, bytes) in &before {
            assert_eq!(&fs::read(path).unwrap(), bytes, "{}", path.display());
        }
    }

    #[test]
    fn worker_count_does_not_change_record_bytes() {
        let tmp = tempfile::tempdir().unwrap();
        let data_dir = tmp.path().join("data");
        write_idx_dataset(&data_dir, "toyidx", 80, 40, 8);

        let mut config1 = micro_config(&data_dir, &tmp.path().join("serial"));
        config1.output.workers = 1;
        let mut config4 = micro_config(&data_dir, &tmp.path().join("parallel"));
        config4.output.workers = 4;

        let (store1, s1) = run_all(&config1, false, false).unwrap();
        let (store4, s4) = run_all(&config4, false, false).unwrap();
        assert_eq!(s1.executed, s4.executed);
        assert_eq!(s1.failed + s4.failed, 0);

        let mut names: Vec<String> = fs::read_dir(store1.records_dir())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(names.len(), 16);
        for name in names {
            let a = fs::read(store1.records_dir().join(&name)).unwrap();
            let b = fs::read(store4.records_dir().join(&name)).unwrap();
            assert_eq!(a, b, "record {name} differs between worker counts");
        }
    }

    #[test]
    fn invalid_k_cell_fails_without_aborting_the_sweep() {
        let tmp = tempfile::tempdir().unwrap();
        let data_dir = tmp.path().join("data");
        write_idx_dataset(&data_dir, "toyidx", 80, 40, 8);
        let mut config = micro_config(&data_dir, &tmp.path().join("out"));
        config.grid.algorithms = vec![Algorithm::FedAvg, Algorithm::FlHc];
        config.grid.qs = vec![QSKind::NonQS];
        // 9 clusters for 8 clients: every cell at k = 9 must fail.
        config.grid.k = vec![2, 9];

        let (store, summary) = run_all(&config, false, false).unwrap();
        assert_eq!(summary.executed, 2);
        assert_eq!(summary.failed, 2);
        assert_eq!(summary.exit_code(), 4);
        let failures = store.load_failures().unwrap();
        assert_eq!(failures.len(), 2);
        assert!(failures.iter().all(|f| f.cell.scenario.k == 9));
        assert!(failures[0].error.contains("config error"), "{}", failures[0].error);
        // The k = 2 records exist and are valid.
        assert_eq!(store.load_records().unwrap().len(), 2);
    }

    #[test]
    fn missing_dataset_is_a_sweep_level_error_before_any_run() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("out");
        let config = micro_config(&tmp.path().join("nodata"), &out);
        let err = run_all(&config, false, false).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        // Nothing was written.
        assert!(!out.join("records").exists());
    }

    #[test]
    fn manifest_mismatch_requires_force() {
        let tmp = tempfile::tempdir().unwrap();
        let data_dir = tmp.path().join("data");
        write_idx_dataset(&data_dir, "toyidx", 80, 40, 8);
        let out = tmp.path().join("out");
        let mut config = micro_config(&data_dir, &out);
        config.grid.algorithms = vec![Algorithm::FedAvg];
        config.grid.qs = vec![QSKind::NonQS];
        run_all(&config, false, false).unwrap();

        // Same store, materially different config.
        let mut other = config.clone();
        other.scenario.rounds = 5;
        let err = run_all(&other, false, false).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");

        // --force overwrites.
        let (store, summary) = run_all(&other, true, false).unwrap();
        assert_eq!(summary.executed, 1);
        let manifest = store.load_manifest().unwrap().unwrap();
        assert_eq!(manifest.config_hash, other.results_hash());
    }

    #[test]
    fn reports_cover_every_kind_with_expected_schemas() {
        let tmp = tempfile::tempdir().unwrap();
        let data_dir = tmp.path().join("data");
        write_idx_dataset(&data_dir, "toyidx", 80, 40, 8);
        let out = tmp.path().join("out");
        let mut config = micro_config(&data_dir, &out);
        config.grid.algorithms = vec![Algorithm::FedAvg, Algorithm::FlHc, Algorithm::Cornflqs];
        config.grid.k = vec![2, 4];
        config.grid.seeds = vec![0, 1];
        let (store, summary) = run_all(&config, false, false).unwrap();
        assert_eq!(summary.failed, 0);
        // 2 qs × 2 k × 3 algorithms × 2 seeds.
        assert_eq!(summary.executed, 24);

        for kind in ReportKind::ALL {
            let paths = report(&store, kind).unwrap();
            assert!(!paths.is_empty());
            for p in &paths {
                assert!(p.exists(), "{} missing", p.display());
            }
        }

        let rank = fs::read_to_string(store.reports_dir().join("rank.csv")).unwrap();
        let mut lines = rank.lines();
        assert_eq!(lines.next().unwrap(), "algorithm,rank,acc_mean,acc_std,ari");
        assert_eq!(lines.count(), 3);

        let tables = fs::read_to_string(store.reports_dir().join("tables.csv")).unwrap();
        // Header + one row per (qs, k, algorithm) group.
        assert_eq!(tables.lines().count(), 1 + 2 * 2 * 3);
        assert!(tables.lines().nth(1).unwrap().contains("±"));

        let sens = fs::read_to_string(store.reports_dir().join("sensitivity.csv")).unwrap();
        // One row per (algorithm, k).
        assert_eq!(sens.lines().count(), 1 + 3 * 2);

        let winrate = fs::read_to_string(store.reports_dir().join("winrate.csv")).unwrap();
        let header = winrate.lines().next().unwrap();
        assert_eq!(header, "algorithm,cornflqs,fedavg,flhc");

        let delta = fs::read_to_string(store.reports_dir().join("delta_heatmap.csv")).unwrap();
        // One row per (k, algorithm) with the qs1 regime present.
        assert_eq!(delta.lines().count(), 1 + 2 * 3);
        let summary_csv =
            fs::read_to_string(store.reports_dir().join("delta_summary.csv")).unwrap();
        assert_eq!(summary_csv.lines().count(), 1 + 3);
    }

    #[test]
    fn report_on_empty_store_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        let store = ResultsStore::open(tmp.path().join("empty"));
        let err = report(&store, ReportKind::Tables).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
        assert_ne!(err.exit_code(), 0);
    }

    #[test]
    fn failed_cells_are_retried_on_rerun() {
        let tmp = tempfile::tempdir().unwrap();
        let data_dir = tmp.path().join("data");
        write_idx_dataset(&data_dir, "toyidx", 80, 40, 8);
        let out = tmp.path().join("out");
        let mut config = micro_config(&data_dir, &out);
        config.grid.algorithms = vec![Algorithm::FedAvg];
        config.grid.qs = vec![QSKind::NonQS];
        config.grid.k = vec![9]; // fails: more clusters than clients
        let (store, summary) = run_all(&config, false, false).unwrap();
        assert_eq!(summary.failed, 1);
        assert_eq!(store.load_failures().unwrap().len(), 1);

        // A failed cell has no record, so an unforced rerun retries it
        // (and here fails again) rather than skipping it.
        let (_, summary) = run_all(&config, false, false).unwrap();
        assert_eq!(summary.skipped, 0);
        assert_eq!(summary.failed, 1);

        // Fixing the config means a new hash, so the store must be forced;
        // the fixed cell then succeeds and writes its record.
        config.grid.k = vec![2];
        let (store, summary) = run_all(&config, true, false).unwrap();
        assert_eq!(summary.executed, 1);
        assert_eq!(summary.failed, 0);
        assert_eq!(store.load_records().unwrap().len(), 1);
    }
}
