//! Round execution: local SGD, edge aggregation, cloud aggregation.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tasks::{self, local_update, MinibatchSampler, ModelVector, TaskKind, VehicleDataset};
use crate::topology::Topology;
use crate::weights::{HierarchyWeights, WeightVector};

/// The iteration split of one round: `tau1` local iterations per edge
/// aggregation, `tau2` edge aggregations per cloud aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundPlan {
    pub tau1: u32,
    pub tau2: u32,
    /// Always `tau1 * tau2`.
    pub iteration_budget: u32,
}

impl RoundPlan {
    pub fn new(tau1: u32, tau2: u32) -> Result<Self> {
        if tau1 < 1 || tau2 < 1 {
            return Err(Error::Config(format!("round plan ({tau1}, {tau2}) needs both >= 1")));
        }
        let iteration_budget = tau1
            .checked_mul(tau2)
            .ok_or_else(|| Error::Config(format!("round plan ({tau1}, {tau2}) overflows")))?;
        Ok(Self { tau1, tau2, iteration_budget })
    }
}

/// Logical model-transfer accounting. Each edge aggregation moves one model
/// up and one down per vehicle; each cloud aggregation does the same per
/// edge — hence the factor 2 in [`count_exchanges`]. Traffic is exchanges
/// times the configured model size.
#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeLedger {
    model_size_mb: f64,
    per_round: Vec<u64>,
    cumulative: u64,
}

impl ExchangeLedger {
    pub fn new(model_size_mb: f64) -> Result<Self> {
        if !(model_size_mb.is_finite() && model_size_mb > 0.0) {
            return Err(Error::Config(format!(
                "model_size_mb must be a positive real, got {model_size_mb}"
            )));
        }
        Ok(Self { model_size_mb, per_round: Vec::new(), cumulative: 0 })
    }

    pub fn record(&mut self, n_exc: u64) {
        self.per_round.push(n_exc);
        self.cumulative += n_exc;
    }

    #[must_use]
    pub fn per_round(&self) -> &[u64] {
        &self.per_round
    }

    #[must_use]
    pub fn cumulative(&self) -> u64 {
        self.cumulative
    }

    /// Total traffic so far in MB.
    #[must_use]
    pub fn traffic_mb(&self) -> f64 {
        self.cumulative as f64 * self.model_size_mb
    }
}

/// Model exchanges of one round: `2 * (tau2 * total_vehicles + edges)`.
#[must_use]
pub fn count_exchanges(topology: &Topology, tau2: u32) -> u64 {
    let vehicles = topology.num_vehicles() as u64;
    let edges = topology.num_edges() as u64;
    2 * (u64::from(tau2) * vehicles + edges)
}

/// Weighted sum of equally-shaped models, accumulated in child order.
pub fn weighted_aggregate(models: &[ModelVector], weights: &WeightVector) -> Result<ModelVector> {
    if models.len() != weights.len() {
        return Err(Error::InvalidWeights(format!(
            "{} models but {} weights",
            models.len(),
            weights.len()
        )));
    }
    let dim = models[0].params.len();
    let mut out = vec![0.0; dim];
    for (model, &w) in models.iter().zip(weights.as_slice()) {
        if model.params.len() != dim {
            return Err(Error::ShapeMismatch { expected: dim, got: model.params.len() });
        }
        for (acc, p) in out.iter_mut().zip(&model.params) {
            *acc += w * p;
        }
    }
    Ok(ModelVector { params: out })
}

/// What one round produced, including the probe snapshot taken around the
/// final edge aggregation (used for divergence estimation).
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub cloud_model: ModelVector,
    /// Vehicle models just before the round's last edge aggregation.
    pub probe_vehicle_models: Vec<ModelVector>,
    /// Edge models produced by that last edge aggregation.
    pub probe_edge_models: Vec<ModelVector>,
    pub n_exc: u64,
}

/// Executes one round starting from `cloud_model`.
///
/// Repeats `tau2` times: every vehicle runs `tau1` local SGD iterations in
/// parallel, each edge averages its vehicles' models, and the edge model is
/// redistributed to those vehicles. One cloud aggregation over the edge
/// models closes the round. Local updates run on concurrent workers, but
/// all reductions walk children in stored order, so any worker count gives
/// bit-identical results.
pub fn run_round(
    topology: &Topology,
    datasets: &[VehicleDataset],
    samplers: &mut [MinibatchSampler],
    weights: &HierarchyWeights,
    plan: &RoundPlan,
    lr: f64,
    cloud_model: &ModelVector,
) -> Result<RoundOutcome> {
    let n = topology.num_vehicles();
    if datasets.len() != n || samplers.len() != n {
        return Err(Error::TopologyMismatch(format!(
            "{} datasets / {} samplers for {n} vehicles",
            datasets.len(),
            samplers.len()
        )));
    }
    let mut vehicle_models: Vec<ModelVector> = vec![cloud_model.clone(); n];
    let mut edge_models: Vec<ModelVector> = Vec::new();
    let mut probe_vehicle_models: Vec<ModelVector> = Vec::new();
    for k in 0..plan.tau2 {
        vehicle_models
            .par_iter_mut()
            .zip(samplers.par_iter_mut())
            .zip(datasets.par_iter())
            .for_each(|((model, sampler), data)| {
                *model = local_update(model, data, sampler, plan.tau1, lr);
            });
        if k + 1 == plan.tau2 {
            probe_vehicle_models = vehicle_models.clone();
        }
        edge_models = topology
            .edges()
            .iter()
            .enumerate()
            .map(|(i, edge)| {
                let members: Vec<ModelVector> = edge
                    .vehicles
                    .iter()
                    .map(|v| vehicle_models[v.0 as usize].clone())
                    .collect();
                weighted_aggregate(&members, &weights.vehicle_weights[i])
            })
            .collect::<Result<Vec<_>>>()?;
        for (i, edge) in topology.edges().iter().enumerate() {
            for v in &edge.vehicles {
                vehicle_models[v.0 as usize] = edge_models[i].clone();
            }
        }
    }
    let cloud = weighted_aggregate(&edge_models, &weights.edge_weights)?;
    Ok(RoundOutcome {
        cloud_model: cloud,
        probe_vehicle_models,
        probe_edge_models: edge_models,
        n_exc: count_exchanges(topology, plan.tau2),
    })
}

/// Evaluates a model on the held-out set: `(loss, performance)` where
/// performance is accuracy for classification and negated loss for
/// regression (higher is better either way).
#[must_use]
pub fn evaluate_global(model: &ModelVector, eval: &VehicleDataset) -> (f64, f64) {
    let batch = eval.all_indices();
    let loss = tasks::loss(model, eval, &batch);
    let perf = match eval.kind {
        TaskKind::LinearRegression => -loss,
        TaskKind::SoftmaxClassification => tasks::accuracy(model, eval, &batch),
    };
    (loss, perf)
}
