//! The vehicle / edge-server / cloud hierarchy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifies an edge server (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeId(pub u32);

/// Identifies a vehicle, unique across the whole fleet (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VehicleId(pub u32);

/// One edge server and the vehicles it aggregates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeNode {
    pub id: EdgeId,
    pub vehicles: Vec<VehicleId>,
}

/// The full two-level grouping under the cloud.
///
/// Edge and vehicle orderings are part of the topology's identity: every
/// aggregation and report iterates them in stored order, which keeps runs
/// bit-reproducible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    edges: Vec<EdgeNode>,
}

impl Topology {
    /// Builds a topology, rejecting empty levels and malformed ids. Edge ids
    /// must equal their position; vehicle ids must cover `0..fleet size`
    /// exactly — datasets, samplers, and weight tables are all slices
    /// indexed by id.
    pub fn new(edges: Vec<EdgeNode>) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::TopologyMismatch("no edge servers".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (position, edge) in edges.iter().enumerate() {
            if edge.id.0 as usize != position {
                return Err(Error::TopologyMismatch(format!(
                    "edge id {} at position {position}; ids must be 0-based and in order",
                    edge.id.0
                )));
            }
            if edge.vehicles.is_empty() {
                return Err(Error::TopologyMismatch(format!(
                    "edge {} has no vehicles",
                    edge.id.0
                )));
            }
            for v in &edge.vehicles {
                if !seen.insert(*v) {
                    return Err(Error::TopologyMismatch(format!(
                        "vehicle {} appears under more than one edge",
                        v.0
                    )));
                }
            }
        }
        if seen.last().is_some_and(|v| v.0 as usize != seen.len() - 1) {
            return Err(Error::TopologyMismatch(format!(
                "vehicle ids must cover 0..{} with no gaps",
                seen.len()
            )));
        }
        Ok(Self { edges })
    }

    /// A fleet of `num_edges` edges with `vehicles_per_edge` vehicles each,
    /// numbered consecutively edge by edge.
    pub fn uniform(num_edges: u32, vehicles_per_edge: u32) -> Result<Self> {
        if num_edges == 0 || vehicles_per_edge == 0 {
            return Err(Error::TopologyMismatch(
                "uniform topology needs at least one edge and one vehicle per edge".into(),
            ));
        }
        let edges = (0..num_edges)
            .map(|e| EdgeNode {
                id: EdgeId(e),
                vehicles: (0..vehicles_per_edge)
                    .map(|v| VehicleId(e * vehicles_per_edge + v))
                    .collect(),
            })
            .collect();
        Self::new(edges)
    }

    #[must_use]
    pub fn edges(&self) -> &[EdgeNode] {
        &self.edges
    }

    #[must_use]
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    #[must_use]
    pub fn num_vehicles(&self) -> usize {
        self.edges.iter().map(|e| e.vehicles.len()).sum()
    }

    /// All vehicle ids in aggregation order (edge by edge).
    pub fn vehicle_ids(&self) -> impl Iterator<Item = VehicleId> + '_ {
        self.edges.iter().flat_map(|e| e.vehicles.iter().copied())
    }
}
