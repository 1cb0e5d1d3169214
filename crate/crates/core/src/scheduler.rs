//! Adaptive round scheduling from divergence estimates.
//!
//! After each round the runner probes every vehicle: comparing local and
//! edge models on a fixed probe batch yields a `(rho, beta, theta)` triple
//! describing loss gap, gradient-Lipschitz scale, and gradient divergence.
//! Triples aggregate up the tree as convex combinations under the policy
//! weights. Together with the estimated curvature constant `C`, they feed a
//! round-wise convergence bound whose minimizer over integer factor pairs
//! `(tau1, tau2)` of the iteration budget becomes the next round's plan,
//! subject to a communication-quality constraint `tau2 <= vartheta * tau1`.

use serde::Serialize;

use crate::engine::RoundPlan;
use crate::error::{Error, Result};
use crate::tasks::{self, ModelVector, VehicleDataset};
use crate::topology::Topology;
use crate::weights::{HierarchyWeights, WeightVector};

/// One node's divergence summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Triple {
    /// Loss gap per unit of model gap.
    pub rho: f64,
    /// Gradient gap per unit of model gap.
    pub beta: f64,
    /// Gradient gap.
    pub theta: f64,
}

impl Triple {
    pub const ZERO: Triple = Triple { rho: 0.0, beta: 0.0, theta: 0.0 };
}

/// Round-level estimates feeding the convergence bound.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceEstimates {
    pub rho: f64,
    pub beta: f64,
    pub theta: f64,
    /// Per-edge triples, aligned with the topology's edge order.
    pub per_edge: Vec<Triple>,
    /// Per-vehicle triples, indexed by vehicle id.
    pub per_vehicle: Vec<Triple>,
    /// Estimated curvature constant `C`.
    pub c: f64,
    /// Learning rate the bound is evaluated at.
    pub eta: f64,
}

impl DivergenceEstimates {
    pub fn validate(&self) -> Result<()> {
        let scalars = [
            ("rho", self.rho),
            ("beta", self.beta),
            ("theta", self.theta),
            ("C", self.c),
        ];
        for (name, v) in scalars {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("estimate {name} = {v} must be finite and >= 0")));
            }
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::Config(format!("eta = {} must be positive", self.eta)));
        }
        Ok(())
    }
}

/// Probes one vehicle: compares its pre-aggregation model against its edge
/// model on the vehicle's fixed probe batch.
///
/// Identical models yield `(0, 0, 0)` by convention — with no model gap
/// there is nothing to normalize by.
pub fn estimate_vehicle_divergence(
    data: &VehicleDataset,
    probe: &[usize],
    local: &ModelVector,
    edge: &ModelVector,
) -> Result<Triple> {
    let gap = local.distance_to(edge)?;
    if gap == 0.0 {
        return Ok(Triple::ZERO);
    }
    let loss_gap = (tasks::loss(local, data, probe) - tasks::loss(edge, data, probe)).abs();
    let grad_local = tasks::gradient(local, data, probe);
    let grad_edge = tasks::gradient(edge, data, probe);
    let grad_gap = grad_local.distance_to(&grad_edge)?;
    Ok(Triple { rho: loss_gap / gap, beta: grad_gap / gap, theta: grad_gap })
}

/// Rolls per-vehicle triples up the tree as convex combinations: first per
/// edge under the vehicle weights, then globally under the edge weights.
pub fn aggregate_divergence(
    per_vehicle: &[Triple],
    topology: &Topology,
    weights: &HierarchyWeights,
) -> Result<(Vec<Triple>, Triple)> {
    if per_vehicle.len() != topology.num_vehicles() {
        return Err(Error::TopologyMismatch(format!(
            "{} triples for {} vehicles",
            per_vehicle.len(),
            topology.num_vehicles()
        )));
    }
    let combine = |members: &[Triple], w: &WeightVector| -> Triple {
        let mut acc = Triple::ZERO;
        for (m, &p) in members.iter().zip(w.as_slice()) {
            acc.rho += p * m.rho;
            acc.beta += p * m.beta;
            acc.theta += p * m.theta;
        }
        acc
    };
    let per_edge: Vec<Triple> = topology
        .edges()
        .iter()
        .enumerate()
        .map(|(i, edge)| {
            let members: Vec<Triple> =
                edge.vehicles.iter().map(|v| per_vehicle[v.0 as usize]).collect();
            combine(&members, &weights.vehicle_weights[i])
        })
        .collect();
    let global = combine(&per_edge, &weights.edge_weights);
    Ok((per_edge, global))
}

/// Estimates the curvature constant from the global gradient norm:
/// `C = g^2 / (eta * beta^2 * (2 - eta*beta))`, valid for `0 < eta*beta < 2`.
pub fn estimate_c(grad_norm: f64, eta: f64, beta: f64) -> Result<f64> {
    let eta_beta = eta * beta;
    if !(eta_beta > 0.0 && eta_beta < 2.0) {
        return Err(Error::Stability { eta_beta });
    }
    Ok(grad_norm * grad_norm / (eta * beta * beta * (2.0 - eta_beta)))
}

/// The divergence accumulation term
/// `q(t) = theta * ((1/beta) * ((1 + eta*beta)^t - 1) - eta*t)`.
///
/// Evaluated as `exp_m1(t * ln_1p(eta*beta))` so large exponents stay
/// accurate until they genuinely overflow. Exactly zero at `t = 1` (the
/// parenthesis vanishes algebraically) and when `theta = 0`; both cases are
/// short-circuited so no rounding residue or 0/0 can leak through.
fn q_term(t: f64, theta: f64, beta: f64, eta: f64) -> f64 {
    if theta == 0.0 || t == 1.0 {
        return 0.0;
    }
    let grown = (t * (eta * beta).ln_1p()).exp_m1();
    (theta * (grown / beta - eta * t)).max(0.0)
}

/// The round-wise convergence bound at a candidate `(tau1, tau2)`:
///
/// ```text
/// C/t + rho*p + sqrt(C^2/t^2 + 2*C*rho*p/t),   t = tau1*tau2
/// p = q(t; theta, beta) + (tau2 + 1) * sum_e w_e * q(tau1; theta_e, beta_e)
/// ```
pub fn convergence_objective(
    tau1: u32,
    tau2: u32,
    est: &DivergenceEstimates,
    edge_weights: &WeightVector,
) -> Result<f64> {
    if tau1 < 1 || tau2 < 1 {
        return Err(Error::Config(format!("objective needs tau1, tau2 >= 1, got ({tau1}, {tau2})")));
    }
    est.validate()?;
    if est.per_edge.len() != edge_weights.len() {
        return Err(Error::InvalidWeights(format!(
            "{} edge estimates but {} edge weights",
            est.per_edge.len(),
            edge_weights.len()
        )));
    }
    let t = f64::from(tau1) * f64::from(tau2);
    let q_cloud = q_term(t, est.theta, est.beta, est.eta);
    let q_edges: f64 = est
        .per_edge
        .iter()
        .zip(edge_weights.as_slice())
        .map(|(e, &w)| w * q_term(f64::from(tau1), e.theta, e.beta, est.eta))
        .sum();
    let p = q_cloud + (f64::from(tau2) + 1.0) * q_edges;
    let value = est.c / t
        + est.rho * p
        + (est.c * est.c / (t * t) + 2.0 * est.c * est.rho * p / t).sqrt();
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::ObjectiveOverflow { tau1, tau2 })
    }
}

/// Tracks communication quality across rounds.
#[derive(Debug, Clone, Default)]
pub struct SchedulerState {
    qoc_history: Vec<f64>,
    perf_history: Vec<f64>,
}

impl SchedulerState {
    #[must_use]
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a finished round and returns `(qoc, vartheta)`.
    ///
    /// `qoc = perf_delta / n_exc` is appended first, then
    /// `vartheta = max(0, qoc / max(history))`; the running maximum includes
    /// the new value, so the first improving round scores 1. If no round has
    /// ever improved performance (`max <= 0`), vartheta is 0 — communicate
    /// as little as possible until something works.
    pub fn performance_factor(&mut self, perf_delta: f64, n_exc: u64) -> Result<(f64, f64)> {
        if n_exc < 1 {
            return Err(Error::Config("performance factor needs n_exc >= 1".into()));
        }
        let qoc = perf_delta / n_exc as f64;
        self.qoc_history.push(qoc);
        let qoc_max = self.qoc_max();
        let vartheta = if qoc_max <= 0.0 { 0.0 } else { (qoc / qoc_max).max(0.0) };
        Ok((qoc, vartheta))
    }

    /// Records an absolute performance scalar (for reporting).
    pub fn push_perf(&mut self, perf: f64) {
        self.perf_history.push(perf);
    }

    #[must_use]
    pub fn qoc_history(&self) -> &[f64] {
        &self.qoc_history
    }

    #[must_use]
    pub fn perf_history(&self) -> &[f64] {
        &self.perf_history
    }

    /// Largest QoC seen so far (`-inf` before the first round).
    #[must_use]
    pub fn qoc_max(&self) -> f64 {
        self.qoc_history.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// A chosen plan plus the diagnostics worth logging.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedRound {
    pub plan: RoundPlan,
    /// Bound value at the chosen plan; infinite if even the fallback
    /// overflows the objective.
    pub objective: f64,
    /// Number of divisor pairs satisfying the vartheta constraint.
    pub feasible_set_size: usize,
}

/// All `(tau1, tau2)` divisor pairs of `budget` satisfying
/// `tau2 <= vartheta * tau1`, in ascending `tau2` order.
pub fn feasible_pairs(budget: u32, vartheta: f64) -> Result<Vec<(u32, u32)>> {
    if budget < 1 {
        return Err(Error::Config("iteration budget must be at least 1".into()));
    }
    if !(vartheta.is_finite() && (0.0..=1.0).contains(&vartheta)) {
        return Err(Error::Config(format!("vartheta = {vartheta} must lie in [0, 1]")));
    }
    Ok((1..=budget)
        .filter(|tau2| budget.is_multiple_of(*tau2))
        .map(|tau2| (budget / tau2, tau2))
        .filter(|&(tau1, tau2)| f64::from(tau2) <= vartheta * f64::from(tau1))
        .collect())
}

/// Chooses the next round's `(tau1, tau2)` by exhaustive search over the
/// integer factor pairs of `budget`.
///
/// A pair is feasible when `tau2 <= vartheta * tau1`. The feasible pair
/// with the smallest objective wins; ties break toward smaller `tau2`
/// (cheaper communication). An empty feasible set — or one whose objectives
/// all overflow — falls back to `(budget, 1)`, the least communicative
/// split.
pub fn plan_next_round(
    budget: u32,
    vartheta: f64,
    est: &DivergenceEstimates,
    edge_weights: &WeightVector,
) -> Result<PlannedRound> {
    let feasible = feasible_pairs(budget, vartheta)?;
    let feasible_set_size = feasible.len();
    let mut best: Option<(RoundPlan, f64)> = None;
    for (tau1, tau2) in feasible {
        let objective = match convergence_objective(tau1, tau2, est, edge_weights) {
            Ok(v) => v,
            Err(Error::ObjectiveOverflow { .. }) => continue,
            Err(e) => return Err(e),
        };
        if best.as_ref().is_none_or(|(_, b)| objective < *b) {
            best = Some((RoundPlan::new(tau1, tau2)?, objective));
        }
    }
    let (plan, objective) = match best {
        Some(found) => found,
        None => {
            let plan = RoundPlan::new(budget, 1)?;
            let objective = convergence_objective(budget, 1, est, edge_weights)
                .unwrap_or(f64::INFINITY);
            (plan, objective)
        }
    };
    Ok(PlannedRound { plan, objective, feasible_set_size })
}

/// The static baseline: the configured pair every round, which must use up
/// the iteration budget exactly.
pub fn statrs_plan(tau1: u32, tau2: u32, budget: u32) -> Result<RoundPlan> {
    let plan = RoundPlan::new(tau1, tau2)?;
    if plan.iteration_budget != budget {
        return Err(Error::Config(format!(
            "scheduler.tau1 * scheduler.tau2 = {} does not equal scheduler.iteration_budget = {budget}",
            plan.iteration_budget
        )));
    }
    Ok(plan)
}
