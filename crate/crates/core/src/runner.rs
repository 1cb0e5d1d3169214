//! Scenario configuration and end-to-end experiment orchestration.
//!
//! A scenario is a TOML file; every key except the top-level `seed` has a
//! default, so the smallest valid file is one line. [`run_experiment`] takes
//! a parsed [`ScenarioConfig`] through the whole pipeline — synthetic fleet,
//! Gaussian summaries, policy weights, training rounds, scheduling — and
//! returns everything a consumer might write or assert on.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{self, ExchangeLedger, RoundOutcome, RoundPlan};
use crate::error::{Error, Result};
use crate::gaussian::GaussianSummary;
use crate::report::{self, RoundReport, SchedulerLogEntry};
use crate::rng::substream;
use crate::scheduler::{self, DivergenceEstimates, SchedulerState, Triple};
use crate::tasks::{self, MinibatchSampler, ModelVector, TaskConfig, TaskKind, VehicleDataset};
use crate::topology::Topology;
use crate::weights::{hierarchy_weights, HierarchyWeights, PolicyConfig};

/// Fleet shape: every edge serves the same number of vehicles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologySection {
    pub edges: u32,
    pub vehicles_per_edge: u32,
}

impl Default for TopologySection {
    fn default() -> Self {
        Self { edges: 2, vehicles_per_edge: 2 }
    }
}

/// Task parameters; the run seed is injected from the top level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSection {
    pub kind: TaskKind,
    pub input_dim: usize,
    pub num_classes: usize,
    pub samples_per_vehicle: usize,
    pub heterogeneity: f64,
    pub noise_std: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    pub curvature: f64,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self {
            kind: TaskKind::SoftmaxClassification,
            input_dim: 6,
            num_classes: 3,
            samples_per_vehicle: 32,
            heterogeneity: 1.0,
            noise_std: 0.5,
            batch_size: None,
            curvature: 0.0,
        }
    }
}

impl TaskSection {
    fn to_task_config(self, seed: u64) -> TaskConfig {
        TaskConfig {
            kind: self.kind,
            input_dim: self.input_dim,
            num_classes: self.num_classes,
            samples_per_vehicle: self.samples_per_vehicle,
            heterogeneity: self.heterogeneity,
            noise_std: self.noise_std,
            seed,
            batch_size: self.batch_size,
            curvature: self.curvature,
        }
    }
}

/// Which scheduler drives the round plans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerKind {
    #[default]
    Adaprs,
    Statrs,
}

/// Scheduler parameters. `(tau1, tau2)` is the fixed plan for statrs and
/// the first round's plan for adaprs; both must multiply to the budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerSection {
    pub kind: SchedulerKind,
    pub tau1: u32,
    pub tau2: u32,
    pub iteration_budget: u32,
}

impl Default for SchedulerSection {
    fn default() -> Self {
        Self { kind: SchedulerKind::Adaprs, tau1: 6, tau2: 4, iteration_budget: 24 }
    }
}

/// Run-level knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub rounds: u32,
    /// Learning rate.
    pub eta: f64,
    /// Held-out evaluation set size.
    pub eval_samples: usize,
    /// Model size in MB, for traffic accounting.
    pub model_size_mb: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { rounds: 10, eta: 0.05, eval_samples: 256, model_size_mb: 1.0 }
    }
}

/// A full experiment description, as parsed from a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Master seed; mandatory so every shipped scenario is reproducible.
    pub seed: u64,
    #[serde(default)]
    pub topology: TopologySection,
    #[serde(default)]
    pub task: TaskSection,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub scheduler: SchedulerSection,
    #[serde(default)]
    pub run: RunSection,
}

impl ScenarioConfig {
    /// Parses and validates a scenario from TOML text.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a scenario file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text)
    }

    /// Serializes the fully-resolved config back to TOML.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.topology.edges < 1 || self.topology.vehicles_per_edge < 1 {
            return Err(Error::Config(
                "topology.edges and topology.vehicles_per_edge must be at least 1".into(),
            ));
        }
        self.task
            .to_task_config(self.seed)
            .validate()
            .map_err(|e| Error::Config(format!("task: {e}")))?;
        self.policy.validate().map_err(|e| Error::Config(format!("policy: {e}")))?;
        let s = &self.scheduler;
        if s.tau1 < 1 || s.tau2 < 1 || s.iteration_budget < 1 {
            return Err(Error::Config(
                "scheduler.tau1, scheduler.tau2, scheduler.iteration_budget must be at least 1"
                    .into(),
            ));
        }
        if s.tau1.checked_mul(s.tau2) != Some(s.iteration_budget) {
            return Err(Error::Config(format!(
                "scheduler.tau1 * scheduler.tau2 = {} does not equal \
                 scheduler.iteration_budget = {}",
                u64::from(s.tau1) * u64::from(s.tau2),
                s.iteration_budget
            )));
        }
        if self.run.rounds < 1 {
            return Err(Error::Config("run.rounds must be at least 1".into()));
        }
        if !(self.run.eta.is_finite() && self.run.eta > 0.0) {
            return Err(Error::Config(format!(
                "run.eta must be a positive real, got {}",
                self.run.eta
            )));
        }
        if self.run.eval_samples < 1 {
            return Err(Error::Config("run.eval_samples must be at least 1".into()));
        }
        if !(self.run.model_size_mb.is_finite() && self.run.model_size_mb > 0.0) {
            return Err(Error::Config(format!(
                "run.model_size_mb must be a positive real, got {}",
                self.run.model_size_mb
            )));
        }
        Ok(())
    }
}

/// Everything a finished experiment produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ScenarioConfig,
    pub topology: Topology,
    pub weights: HierarchyWeights,
    pub reports: Vec<RoundReport>,
    /// Adaptive planning events; empty under statrs.
    pub scheduler_log: Vec<SchedulerLogEntry>,
    /// The estimates behind each planning event, aligned with the log.
    pub estimates: Vec<DivergenceEstimates>,
    pub final_model: ModelVector,
}

/// Merges each vehicle's per-image summaries into one summary per vehicle.
pub fn vehicle_summaries(datasets: &[VehicleDataset]) -> Result<Vec<GaussianSummary>> {
    datasets
        .iter()
        .map(|data| {
            let per_image: Vec<GaussianSummary> = data
                .pixel_proxy
                .iter()
                .map(GaussianSummary::from_image)
                .collect::<Result<_>>()?;
            GaussianSummary::merge(&per_image)
        })
        .collect()
}

/// Probes every vehicle after a round and rolls the results up into the
/// estimates the planner needs. The probe batch is the vehicle's full local
/// dataset; `C` comes from the policy-weighted mean of per-vehicle gradients
/// at the fresh cloud model, with `C = 0` when the fleet shows no gradient
/// divergence at all (`beta = 0`: the curvature formula has nothing to
/// normalize by, and the bound degenerates to pure budget decay).
fn estimate_round_divergence(
    topology: &Topology,
    datasets: &[VehicleDataset],
    weights: &HierarchyWeights,
    outcome: &RoundOutcome,
    eta: f64,
) -> Result<DivergenceEstimates> {
    let mut per_vehicle = vec![Triple::ZERO; topology.num_vehicles()];
    for (e, edge) in topology.edges().iter().enumerate() {
        for v in &edge.vehicles {
            let idx = v.0 as usize;
            let data = &datasets[idx];
            let probe = data.all_indices();
            per_vehicle[idx] = scheduler::estimate_vehicle_divergence(
                data,
                &probe,
                &outcome.probe_vehicle_models[idx],
                &outcome.probe_edge_models[e],
            )?;
        }
    }
    let (per_edge, global) = scheduler::aggregate_divergence(&per_vehicle, topology, weights)?;

    let edge_grads: Vec<ModelVector> = topology
        .edges()
        .iter()
        .enumerate()
        .map(|(e, edge)| {
            let members: Vec<ModelVector> = edge
                .vehicles
                .iter()
                .map(|v| {
                    let data = &datasets[v.0 as usize];
                    tasks::gradient(&outcome.cloud_model, data, &data.all_indices())
                })
                .collect();
            engine::weighted_aggregate(&members, &weights.vehicle_weights[e])
        })
        .collect::<Result<_>>()?;
    let grad_norm = engine::weighted_aggregate(&edge_grads, &weights.edge_weights)?.l2_norm();
    let c = if global.beta > 0.0 { scheduler::estimate_c(grad_norm, eta, global.beta)? } else { 0.0 };

    Ok(DivergenceEstimates {
        rho: global.rho,
        beta: global.beta,
        theta: global.theta,
        per_edge,
        per_vehicle,
        c,
        eta,
    })
}

/// Runs a scenario end to end: builds the fleet, computes the policy
/// weights once from the proxy-image summaries, then executes the
/// configured rounds, evaluating, accounting exchanges, and (under adaprs)
/// re-planning after every round but the last.
pub fn run_experiment(config: &ScenarioConfig) -> Result<RunOutput> {
    config.validate()?;
    let topology = Topology::uniform(config.topology.edges, config.topology.vehicles_per_edge)?;
    let task_cfg = config.task.to_task_config(config.seed);
    let datasets = tasks::generate_scenario(&topology, &task_cfg)?;
    let summaries = vehicle_summaries(&datasets)?;
    let weights = hierarchy_weights(&topology, &summaries, &config.policy)?;
    let eval = tasks::generate_eval_set(&task_cfg, config.run.eval_samples)?;

    let mut samplers: Vec<MinibatchSampler> = (0..topology.num_vehicles())
        .map(|v| {
            MinibatchSampler::new(
                datasets[v].num_samples(),
                task_cfg.batch_size,
                substream(config.seed, "train", v as u64),
            )
        })
        .collect::<Result<_>>()?;

    let budget = config.scheduler.iteration_budget;
    let mut plan = match config.scheduler.kind {
        SchedulerKind::Statrs => {
            scheduler::statrs_plan(config.scheduler.tau1, config.scheduler.tau2, budget)?
        }
        SchedulerKind::Adaprs => RoundPlan::new(config.scheduler.tau1, config.scheduler.tau2)?,
    };

    let mut ledger = ExchangeLedger::new(config.run.model_size_mb)?;
    let mut state = SchedulerState::new();
    let mut model = ModelVector::zeros(task_cfg.param_dim());
    let (_, mut prev_perf) = engine::evaluate_global(&model, &eval);
    state.push_perf(prev_perf);

    let mut reports = Vec::with_capacity(config.run.rounds as usize);
    let mut scheduler_log = Vec::new();
    let mut estimates = Vec::new();

    for round in 1..=config.run.rounds {
        let outcome =
            engine::run_round(&topology, &datasets, &mut samplers, &weights, &plan, config.run.eta, &model)?;
        let (eval_loss, perf) = engine::evaluate_global(&outcome.cloud_model, &eval);
        ledger.record(outcome.n_exc);
        let (qoc, vartheta) = state.performance_factor(perf - prev_perf, outcome.n_exc)?;
        state.push_perf(perf);
        prev_perf = perf;
        reports.push(RoundReport {
            round,
            tau1: plan.tau1,
            tau2: plan.tau2,
            eval_loss,
            perf,
            n_exc: outcome.n_exc,
            cum_exc: ledger.cumulative(),
            qoc,
            vartheta,
        });

        if config.scheduler.kind == SchedulerKind::Adaprs && round < config.run.rounds {
            let est =
                estimate_round_divergence(&topology, &datasets, &weights, &outcome, config.run.eta)?;
            let planned = scheduler::plan_next_round(budget, vartheta, &est, &weights.edge_weights)?;
            scheduler_log.push(SchedulerLogEntry {
                round: round + 1,
                vartheta,
                qoc,
                qoc_max: state.qoc_max(),
                tau1: planned.plan.tau1,
                tau2: planned.plan.tau2,
                objective: planned.objective.is_finite().then_some(planned.objective),
                feasible_set_size: planned.feasible_set_size,
            });
            estimates.push(est);
            plan = planned.plan;
        }
        model = outcome.cloud_model;
    }

    Ok(RunOutput {
        config: config.clone(),
        topology,
        weights,
        reports,
        scheduler_log,
        estimates,
        final_model: model,
    })
}

/// Writes a finished run's artifacts into `out_dir`: `rounds.csv`,
/// `rounds.jsonl` (config echo as its first line), `scheduler.jsonl`,
/// `weights.json`, and `config_echo.toml`.
pub fn write_outputs(output: &RunOutput, out_dir: &Path) -> Result<()> {
    let io_err = |source| Error::Io { path: out_dir.to_path_buf(), source };
    std::fs::create_dir_all(out_dir).map_err(io_err)?;

    report::write_csv(&output.reports, &out_dir.join("rounds.csv"))?;
    let echo = serde_json::json!({ "config": &output.config });
    report::write_jsonl(Some(&echo), &output.reports, &out_dir.join("rounds.jsonl"))?;
    report::write_jsonl(None, &output.scheduler_log, &out_dir.join("scheduler.jsonl"))?;

    let snapshot = output.weights.snapshot(&output.topology);
    let weights_path = out_dir.join("weights.json");
    let mut json = serde_json::to_string_pretty(&snapshot)
        .map_err(|e| Error::Io { path: weights_path.clone(), source: std::io::Error::other(e) })?;
    json.push('\n');
    std::fs::write(&weights_path, json)
        .map_err(|source| Error::Io { path: weights_path, source })?;

    let echo_path = out_dir.join("config_echo.toml");
    std::fs::write(&echo_path, output.config.to_toml_string()?)
        .map_err(|source| Error::Io { path: echo_path, source })?;
    Ok(())
}
