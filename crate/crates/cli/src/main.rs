//! `hflsim` — scenario runs and one-shot pipeline tools.
//!
//! Exit codes: 0 on success, 1 on any domain error (bad input file,
//! constraint violation, I/O failure), 2 on command-line usage errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use hflsim_core::divergence::bhattacharyya_distance;
use hflsim_core::error::{Error, Result};
use hflsim_core::gaussian::GaussianSummary;
use hflsim_core::metrics::{self, ConfusionMatrix};
use hflsim_core::pnm;
use hflsim_core::runner::{self, ScenarioConfig};
use hflsim_core::scheduler::{self, DivergenceEstimates, Triple};
use hflsim_core::topology::{EdgeId, EdgeNode, Topology, VehicleId};
use hflsim_core::weights::{hierarchy_weights, PolicyConfig, PolicyKind, WeightVector};

#[derive(Parser)]
#[command(name = "hflsim", version, about = "Hierarchical federated-learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file end to end and write its report files.
    Run {
        /// Scenario TOML file.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute hierarchy weights from a directory tree of PGM/PPM images
    /// (root = cloud, subdirectory = edge, sub-subdirectory = vehicle).
    Weights {
        #[arg(long)]
        root: PathBuf,
        /// Distance floor for the reciprocal weighting.
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Bhattacharyya distance between two inputs, each either a PGM/PPM
    /// image or a summary JSON file ({"n": .., "mean": .., "var": ..}).
    Distance {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Choose (tau1, tau2) for the bound parameters in a TOML file.
    Schedule {
        #[arg(long)]
        params: PathBuf,
    },
    /// Macro metrics from a plain-text confusion-matrix grid.
    Metrics {
        #[arg(long)]
        cm: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli.command) {
        eprintln!("error: {e}");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}

fn dispatch(command: Command) -> Result<()> {
    configure_workers()?;
    match command {
        Command::Run { config, out } => cmd_run(&config, &out),
        Command::Weights { root, epsilon } => cmd_weights(&root, epsilon),
        Command::Distance { a, b } => cmd_distance(&a, &b),
        Command::Schedule { params } => cmd_schedule(&params),
        Command::Metrics { cm } => cmd_metrics(&cm),
    }
}

/// Honors `HFLSIM_WORKERS` by sizing the global worker pool; results are
/// bit-identical for any count, so this is purely a resource knob.
fn configure_workers() -> Result<()> {
    let Ok(raw) = std::env::var("HFLSIM_WORKERS") else {
        return Ok(());
    };
    let workers: usize = raw
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::Config(format!("HFLSIM_WORKERS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

/// Prints a line to stdout, treating a closed pipe (e.g. `| head`) as
/// success rather than a panic or an error.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
            Err(Error::Io { path: PathBuf::from("<stdout>"), source: e })
        }
        _ => Ok(()),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serialization: {e}")))?;
    emit(&text)
}

fn cmd_run(config_path: &Path, out_dir: &Path) -> Result<()> {
    let config = ScenarioConfig::load(config_path)?;
    let output = runner::run_experiment(&config)?;
    runner::write_outputs(&output, out_dir)?;
    let last = output.reports.last().expect("rounds >= 1");
    emit(&format!(
        "completed {} rounds -> {} (cumulative exchanges {}, final eval loss {})",
        output.reports.len(),
        out_dir.display(),
        last.cum_exc,
        last.eval_loss,
    ))
}

/// Sorted subdirectories / image files of `dir` (traversal order defines
/// the numeric ids in the output).
fn sorted_entries(dir: &Path, want_dirs: bool) -> Result<Vec<PathBuf>> {
    let read = std::fs::read_dir(dir)
        .map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    let mut entries = Vec::new();
    for entry in read {
        let entry = entry.map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
        let path = entry.path();
        let keep = if want_dirs {
            path.is_dir()
        } else {
            path.is_file()
                && path.extension().is_some_and(|ext| {
                    ext.eq_ignore_ascii_case("pgm") || ext.eq_ignore_ascii_case("ppm")
                })
        };
        if keep {
            entries.push(path);
        }
    }
    entries.sort();
    Ok(entries)
}

fn vehicle_summary(dir: &Path) -> Result<GaussianSummary> {
    let images = sorted_entries(dir, false)?;
    if images.is_empty() {
        return Err(Error::Config(format!("no .pgm/.ppm images in {}", dir.display())));
    }
    let summaries: Vec<GaussianSummary> = images
        .iter()
        .map(|path| GaussianSummary::from_image(&pnm::read_file(path)?))
        .collect::<Result<_>>()?;
    GaussianSummary::merge(&summaries)
}

fn cmd_weights(root: &Path, epsilon: Option<f64>) -> Result<()> {
    let edge_dirs = sorted_entries(root, true)?;
    if edge_dirs.is_empty() {
        return Err(Error::Config(format!("no edge directories in {}", root.display())));
    }
    let mut edges = Vec::new();
    let mut summaries = Vec::new();
    let mut next_vehicle = 0u32;
    for (e, edge_dir) in edge_dirs.iter().enumerate() {
        let vehicle_dirs = sorted_entries(edge_dir, true)?;
        if vehicle_dirs.is_empty() {
            return Err(Error::Config(format!(
                "no vehicle directories in {}",
                edge_dir.display()
            )));
        }
        let mut vehicles = Vec::new();
        for vehicle_dir in &vehicle_dirs {
            summaries.push(vehicle_summary(vehicle_dir)?);
            vehicles.push(VehicleId(next_vehicle));
            next_vehicle += 1;
        }
        edges.push(EdgeNode { id: EdgeId(e as u32), vehicles });
    }
    let topology = Topology::new(edges)?;
    let mut policy = PolicyConfig::new(PolicyKind::Fedgau);
    if let Some(epsilon) = epsilon {
        policy.epsilon = epsilon;
    }
    policy.validate()?;
    let weights = hierarchy_weights(&topology, &summaries, &policy)?;
    print_json(&weights.snapshot(&topology))
}

/// Reads `--a`/`--b` inputs: P5/P6 magic means an image to summarize,
/// anything else must parse as summary JSON.
fn summary_from_file(path: &Path) -> Result<GaussianSummary> {
    let bytes =
        std::fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        return GaussianSummary::from_image(&pnm::decode(&bytes)?);
    }
    let summary: GaussianSummary = serde_json::from_slice(&bytes).map_err(|e| {
        Error::Config(format!(
            "{}: neither a P5/P6 image nor summary JSON ({e})",
            path.display()
        ))
    })?;
    summary.validate()?;
    Ok(summary)
}

fn cmd_distance(a: &Path, b: &Path) -> Result<()> {
    let sa = summary_from_file(a)?;
    let sb = summary_from_file(b)?;
    let distance = bhattacharyya_distance(&sa, &sb)?;
    print_json(&serde_json::json!({
        "a": sa,
        "b": sb,
        "distance": distance,
        "coefficient": (-distance).exp(),
    }))
}

/// Bound parameters for one-shot planning.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleParams {
    iteration_budget: u32,
    vartheta: f64,
    c: f64,
    rho: f64,
    beta: f64,
    theta: f64,
    eta: f64,
    edge_weights: Vec<f64>,
    edge_betas: Vec<f64>,
    edge_thetas: Vec<f64>,
}

fn cmd_schedule(params_path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(params_path)
        .map_err(|source| Error::Io { path: params_path.to_path_buf(), source })?;
    let params: ScheduleParams =
        toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    let eta_beta = params.eta * params.beta;
    if eta_beta >= 2.0 {
        return Err(Error::Stability { eta_beta });
    }
    if params.edge_betas.len() != params.edge_weights.len()
        || params.edge_thetas.len() != params.edge_weights.len()
    {
        return Err(Error::Config(format!(
            "edge_weights, edge_betas, edge_thetas must have equal lengths, got {}/{}/{}",
            params.edge_weights.len(),
            params.edge_betas.len(),
            params.edge_thetas.len()
        )));
    }
    let edge_weights = WeightVector::new(params.edge_weights.clone())?;
    let per_edge: Vec<Triple> = params
        .edge_betas
        .iter()
        .zip(&params.edge_thetas)
        .map(|(&beta, &theta)| Triple { rho: 0.0, beta, theta })
        .collect();
    let est = DivergenceEstimates {
        rho: params.rho,
        beta: params.beta,
        theta: params.theta,
        per_edge,
        per_vehicle: vec![],
        c: params.c,
        eta: params.eta,
    };
    let planned =
        scheduler::plan_next_round(params.iteration_budget, params.vartheta, &est, &edge_weights)?;
    let feasible: Vec<serde_json::Value> =
        scheduler::feasible_pairs(params.iteration_budget, params.vartheta)?
            .into_iter()
            .map(|(tau1, tau2)| {
                let objective = match scheduler::convergence_objective(tau1, tau2, &est, &edge_weights) {
                    Ok(v) => serde_json::json!(v),
                    Err(_) => serde_json::Value::Null,
                };
                serde_json::json!({ "tau1": tau1, "tau2": tau2, "objective": objective })
            })
            .collect();
    print_json(&serde_json::json!({
        "tau1": planned.plan.tau1,
        "tau2": planned.plan.tau2,
        "objective": planned.objective.is_finite().then_some(planned.objective),
        "feasible_set_size": planned.feasible_set_size,
        "feasible": feasible,
    }))
}

fn cmd_metrics(cm_path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(cm_path)
        .map_err(|source| Error::Io { path: cm_path.to_path_buf(), source })?;
    let cm = ConfusionMatrix::parse_grid(&text)?;
    print_json(&metrics::metrics(&cm)?)
}
