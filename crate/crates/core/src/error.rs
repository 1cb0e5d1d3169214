//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the simulator core.
#[derive(Debug, Error)]
pub enum Error {
    /// Image statistics need at least two samples.
    #[error("degenerate input: need at least 2 intensity samples, got {samples}")]
    DegenerateInput { samples: usize },

    /// Merging an empty list of summaries is undefined.
    #[error("cannot merge an empty list of summaries")]
    EmptyMerge,

    /// PGM/PPM decoding failure, naming the offending field.
    #[error("invalid {field} in PNM stream: {reason}")]
    PnmFormat { field: &'static str, reason: String },

    /// Bhattacharyya formulas divide by the standard deviations.
    #[error("degenerate distribution: {side} summary has zero variance")]
    DegenerateDistribution { side: &'static str },

    /// Weight computation received unusable sizes or distances.
    #[error("invalid weight input: {0}")]
    InvalidWeights(String),

    /// Topology and the provided per-vehicle data disagree.
    #[error("topology mismatch: {0}")]
    TopologyMismatch(String),

    /// Model vectors of different lengths cannot be combined.
    #[error("shape mismatch: expected {expected} parameters, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    /// The convergence bound requires 0 < eta*beta < 2.
    #[error("stability error: eta*beta = {eta_beta} leaves the bound denominator non-positive")]
    Stability { eta_beta: f64 },

    /// The bound objective left the representable range.
    #[error("objective overflow at (tau1={tau1}, tau2={tau2})")]
    ObjectiveOverflow { tau1: u32, tau2: u32 },

    /// Scenario or scheduler configuration violates a constraint.
    #[error("config error: {0}")]
    Config(String),

    /// Confusion-matrix label outside [0, classes).
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    /// Metrics over an all-zero confusion matrix are undefined.
    #[error("confusion matrix holds no counts")]
    EmptyConfusion,

    /// File I/O failure, carrying the path for context.
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
