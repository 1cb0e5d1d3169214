//! Deterministic hierarchical federated-learning simulator.
//!
//! The crate models a three-tier topology (vehicles -> edge servers -> cloud)
//! training a shared model with synchronous rounds. Each round performs
//! `tau2` edge aggregations, each preceded by `tau1` local iterations on
//! every vehicle, followed by one cloud aggregation.
//!
//! Two ideas drive the design:
//!
//! * **Statistics-aware aggregation weights.** Every vehicle dataset is
//!   compressed into a Gaussian summary `(n, mean, var)`. Summaries merge
//!   exactly up the hierarchy, and Bhattacharyya distances between a node
//!   and its parent produce aggregation weights that favour members whose
//!   data resembles the pooled distribution.
//! * **Adaptive round scheduling.** Divergence statistics estimated during
//!   a round feed a convergence bound; the scheduler picks the `(tau1, tau2)`
//!   split of the iteration budget that minimises the bound subject to a
//!   quality-of-communication constraint.
//!
//! Everything is reproducible: all randomness flows from named ChaCha
//! substreams of a single scenario seed, and parallel reductions are
//! fixed-order so results are bit-identical across worker counts.

pub mod divergence;
pub mod engine;
pub mod error;
pub mod gaussian;
pub mod image;
pub mod metrics;
pub mod pnm;
pub mod report;
pub mod rng;
pub mod runner;
pub mod scheduler;
pub mod tasks;
pub mod topology;
pub mod weights;

pub use error::{Error, Result};
