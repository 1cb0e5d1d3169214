//! Aggregation-weight policies for the hierarchy.
//!
//! Two policies are provided. *Proportional* weights each child by its
//! dataset-size share — the conventional rule that treats every image as
//! equally informative. The statistics-aware policy weights each child by
//! the normalized reciprocal of its Bhattacharyya distance to the pooled
//! parent summary, so children whose data resembles the aggregate get more
//! say. Weights are computed once at run start; datasets are static.

use serde::{Deserialize, Serialize};

use crate::divergence::bhattacharyya_distance;
use crate::error::{Error, Result};
use crate::gaussian::GaussianSummary;
use crate::topology::Topology;

/// Normalized per-child aggregation weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Wraps a weight list, enforcing entries in `[0, 1]` that sum to 1
    /// within `1e-12`.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidWeights("empty weight vector".into()));
        }
        for (i, w) in weights.iter().enumerate() {
            if !(w.is_finite() && (0.0..=1.0).contains(w)) {
                return Err(Error::InvalidWeights(format!("weight {i} is {w}, not in [0, 1]")));
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidWeights(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self(weights))
    }

    #[must_use]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Which weighting rule to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    #[default]
    Fedgau,
    Proportional,
}

/// Weight-policy configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    #[serde(default)]
    pub kind: PolicyKind,
    /// Floor applied to each distance before taking reciprocals, so a child
    /// that exactly matches its parent cannot divide by zero.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

pub const DEFAULT_EPSILON: f64 = 1e-6;

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self::new(PolicyKind::default())
    }
}

impl PolicyConfig {
    #[must_use]
    pub fn new(kind: PolicyKind) -> Self {
        Self { kind, epsilon: DEFAULT_EPSILON }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidWeights(format!(
                "policy epsilon must be a positive real, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Size-share weights: `w_i = size_i / sum(sizes)`.
pub fn proportional_weights(sizes: &[u64]) -> Result<WeightVector> {
    if sizes.is_empty() {
        return Err(Error::InvalidWeights("no sizes given".into()));
    }
    if let Some(i) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::InvalidWeights(format!("size {i} is zero")));
    }
    let total: u64 = sizes.iter().sum();
    WeightVector::new(sizes.iter().map(|&s| s as f64 / total as f64).collect())
}

/// Normalized reciprocal-distance weights:
/// `w_i = (1 / max(d_i, epsilon)) / sum_j (1 / max(d_j, epsilon))`.
///
/// Flooring at `epsilon` keeps the rule defined when a child coincides with
/// its parent (distance 0) while preserving the closer-is-heavier ordering.
pub fn reciprocal_distance_weights(distances: &[f64], epsilon: f64) -> Result<WeightVector> {
    if distances.is_empty() {
        return Err(Error::InvalidWeights("no distances given".into()));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidWeights(format!("epsilon must be positive, got {epsilon}")));
    }
    for (i, d) in distances.iter().enumerate() {
        if !(d.is_finite() && *d >= 0.0) {
            return Err(Error::InvalidWeights(format!("distance {i} is {d}")));
        }
    }
    let reciprocals: Vec<f64> = distances.iter().map(|&d| 1.0 / d.max(epsilon)).collect();
    let total: f64 = reciprocals.iter().sum();
    WeightVector::new(reciprocals.iter().map(|r| r / total).collect())
}

/// Reciprocal-distance weights of `children` against their pooled parent.
pub fn fedgau_weights(
    children: &[GaussianSummary],
    parent: &GaussianSummary,
    cfg: &PolicyConfig,
) -> Result<WeightVector> {
    cfg.validate()?;
    let distances = children
        .iter()
        .map(|c| bhattacharyya_distance(c, parent))
        .collect::<Result<Vec<f64>>>()?;
    reciprocal_distance_weights(&distances, cfg.epsilon)
}

/// Weights for every level of the tree.
///
/// Both vectors align with the topology's stored order: `edge_weights[i]`
/// belongs to `edges()[i]`, and `vehicle_weights[i][j]` to that edge's
/// `vehicles[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyWeights {
    pub edge_weights: WeightVector,
    pub vehicle_weights: Vec<WeightVector>,
}

/// Computes per-edge vehicle weights and cloud-level edge weights.
///
/// `vehicle_summaries` is indexed by vehicle id. Under the reciprocal rule,
/// parent summaries are merged over *all* children, including the child
/// being weighted; the proportional rule uses each summary's image count.
pub fn hierarchy_weights(
    topology: &Topology,
    vehicle_summaries: &[GaussianSummary],
    cfg: &PolicyConfig,
) -> Result<HierarchyWeights> {
    cfg.validate()?;
    if vehicle_summaries.len() != topology.num_vehicles() {
        return Err(Error::TopologyMismatch(format!(
            "{} vehicle summaries for {} vehicles",
            vehicle_summaries.len(),
            topology.num_vehicles()
        )));
    }
    let per_edge_children: Vec<Vec<GaussianSummary>> = topology
        .edges()
        .iter()
        .map(|e| e.vehicles.iter().map(|v| vehicle_summaries[v.0 as usize]).collect())
        .collect();
    match cfg.kind {
        PolicyKind::Proportional => {
            let vehicle_weights = per_edge_children
                .iter()
                .map(|children| {
                    let sizes: Vec<u64> = children.iter().map(|s| s.n).collect();
                    proportional_weights(&sizes)
                })
                .collect::<Result<Vec<_>>>()?;
            let edge_sizes: Vec<u64> = per_edge_children
                .iter()
                .map(|children| children.iter().map(|s| s.n).sum())
                .collect();
            Ok(HierarchyWeights {
                edge_weights: proportional_weights(&edge_sizes)?,
                vehicle_weights,
            })
        }
        PolicyKind::Fedgau => {
            let edge_summaries = per_edge_children
                .iter()
                .map(|children| GaussianSummary::merge(children))
                .collect::<Result<Vec<_>>>()?;
            let vehicle_weights = per_edge_children
                .iter()
                .zip(edge_summaries.iter())
                .map(|(children, parent)| fedgau_weights(children, parent, cfg))
                .collect::<Result<Vec<_>>>()?;
            let cloud_summary = GaussianSummary::merge(&edge_summaries)?;
            Ok(HierarchyWeights {
                edge_weights: fedgau_weights(&edge_summaries, &cloud_summary, cfg)?,
                vehicle_weights,
            })
        }
    }
}

/// Serializable view of a weight assignment: `{edges: [{id, weight,
/// vehicles: [{id, weight}]}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSnapshot {
    pub edges: Vec<EdgeWeightEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeWeightEntry {
    pub id: u32,
    pub weight: f64,
    pub vehicles: Vec<VehicleWeightEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleWeightEntry {
    pub id: u32,
    pub weight: f64,
}

impl HierarchyWeights {
    #[must_use]
    pub fn snapshot(&self, topology: &Topology) -> WeightSnapshot {
        let edges = topology
            .edges()
            .iter()
            .enumerate()
            .map(|(i, edge)| EdgeWeightEntry {
                id: edge.id.0,
                weight: self.edge_weights.as_slice()[i],
                vehicles: edge
                    .vehicles
                    .iter()
                    .zip(self.vehicle_weights[i].as_slice())
                    .map(|(v, &weight)| VehicleWeightEntry { id: v.0, weight })
                    .collect(),
            })
            .collect();
        WeightSnapshot { edges }
    }
}
