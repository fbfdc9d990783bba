//! Single-process simulator and benchmark harness for clustered federated
//! learning (CFL).
//!
//! The crate provides everything needed to reproduce CFL benchmark studies on
//! a single machine, without any external ML framework:
//!
//! - [`nn`] — a minimal dense MLP (forward, cross-entropy, manual
//!   backpropagation, SGD with an optional proximal term), f64 throughout.
//! - [`data`] — IDX ingestion, heterogeneity transforms (rotations, label
//!   swaps, dilation/erosion, inversion/zoom), and client partitioning under
//!   non-QS / QS1 / QS2 quantity-skew regimes.
//! - [`runtime`] — the communication-round engine: broadcast, parallel local
//!   training, and deterministic sample-weighted / uniform / trimmed-mean
//!   aggregation.
//! - [`clustering`] — k-means (k-means++ seeding), Ward-linkage agglomerative
//!   clustering, EDC features, and the Adjusted Rand Index.
//! - [`algorithms`] — eight training strategies: FedAvg, FedProx, one-shot
//!   CFL, FL+HC, FedGroup, IFCA, SRFCA, and CORNFLQS.
//! - [`evaluation`] — per-run records and cross-run aggregation (accuracy,
//!   client-accuracy dispersion, ARI deltas, average ranks, win rates).
//! - [`experiment`] — config-driven grid expansion, a results store with
//!   idempotent reruns, and CSV report emission.
//! - [`oracle`] — independent brute-force reference implementations used to
//!   cross-check the fast paths (and exposed to the CLI's `verify` command).
//!
//! Determinism is a crate-wide contract: every run is a pure function of its
//! config and seed, bit-identical across reruns and worker counts. All
//! randomness flows through [`seeds`] substreams.

pub mod algorithms;
pub mod clustering;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod nn;
pub mod oracle;
pub mod runtime;
pub mod seeds;

pub use error::{Error, Result};
pub use nn::{ModelParams, TrainConfig};
pub use runtime::ClusterAssignment;
