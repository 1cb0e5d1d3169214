//! Synthetic differentiable tasks with a tunable heterogeneity knob.
//!
//! Two convex model families are provided — linear regression under squared
//! error and linear softmax classification under cross-entropy — so the
//! scheduler's convergence bound operates in a regime where its convexity
//! assumptions actually hold.
//!
//! Heterogeneity `h` shifts each edge's feature distribution: edge `e`
//! draws features from `N(m_e, I)` with `m_e = h * zeta_e * u_e` for a
//! per-edge scalar `zeta_e ~ N(0, 1)` and unit direction `u_e`. Labels come
//! from one shared ground-truth model plus noise, so every vehicle learns
//! the same underlying concept through a differently shifted lens. For
//! classification the shared concept may carry a mild per-class curvature
//! (`curvature` > 0 bends each class score quadratically along a fixed
//! direction); a linear model then has no single fit that is best
//! everywhere, so training data drawn far from the evaluation region
//! genuinely drags the fit away from it — feature shift becomes costly
//! rather than cosmetic. Each sample also carries a small synthetic
//! grayscale image whose intensity encodes the edge's shift, giving the
//! statistics pipeline genuine image bytes whose divergences grow with `h`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImagePixels;
use crate::rng::substream;
use crate::topology::Topology;

/// Proxy images are `PROXY_SIDE x PROXY_SIDE` grayscale.
const PROXY_SIDE: u32 = 8;
/// Intensity offset per unit of edge shift, before clamping.
const PROXY_SHIFT_SCALE: f64 = 16.0;
/// Largest intensity offset an edge shift may produce.
const PROXY_SHIFT_CLAMP: f64 = 112.0;
/// Standard deviation of per-pixel intensity noise.
const PROXY_NOISE_STD: f64 = 12.0;

/// Model family of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    LinearRegression,
    SoftmaxClassification,
}

/// Scenario-generation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub input_dim: usize,
    /// Class count; only meaningful for softmax classification.
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
    pub samples_per_vehicle: usize,
    /// Per-edge mean-shift scale `h`; 0 makes all vehicles identically
    /// distributed.
    pub heterogeneity: f64,
    pub noise_std: f64,
    pub seed: u64,
    /// Minibatch size for local SGD; omitted means full-batch steps.
    #[serde(default)]
    pub batch_size: Option<usize>,
    /// Strength of the quadratic bend in the classification concept; 0
    /// keeps the ground truth purely linear.
    #[serde(default)]
    pub curvature: f64,
}

fn default_num_classes() -> usize {
    2
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim < 1 {
            return Err(Error::Config("task.input_dim must be at least 1".into()));
        }
        if self.samples_per_vehicle < 2 {
            return Err(Error::Config("task.samples_per_vehicle must be at least 2".into()));
        }
        if self.kind == TaskKind::SoftmaxClassification && self.num_classes < 2 {
            return Err(Error::Config("task.num_classes must be at least 2".into()));
        }
        if !(self.heterogeneity.is_finite() && self.heterogeneity >= 0.0) {
            return Err(Error::Config("task.heterogeneity must be a non-negative real".into()));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::Config("task.noise_std must be a non-negative real".into()));
        }
        if !(self.curvature.is_finite() && self.curvature >= 0.0) {
            return Err(Error::Config("task.curvature must be a non-negative real".into()));
        }
        if let Some(b) = self.batch_size {
            if b < 1 {
                return Err(Error::Config("task.batch_size must be at least 1".into()));
            }
            if b > self.samples_per_vehicle {
                return Err(Error::Config(
                    "task.batch_size cannot exceed task.samples_per_vehicle".into(),
                ));
            }
        }
        Ok(())
    }

    /// Length of the flat parameter vector for this task.
    #[must_use]
    pub fn param_dim(&self) -> usize {
        match self.kind {
            TaskKind::LinearRegression => self.input_dim,
            TaskKind::SoftmaxClassification => self.num_classes * self.input_dim,
        }
    }
}

/// A flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVector {
    pub params: Vec<f64>,
}

impl ModelVector {
    #[must_use]
    pub fn zeros(dim: usize) -> Self {
        Self { params: vec![0.0; dim] }
    }

    #[must_use]
    pub fn l2_norm(&self) -> f64 {
        self.params.iter().map(|p| p * p).sum::<f64>().sqrt()
    }

    /// Euclidean distance to `other`.
    pub fn distance_to(&self, other: &ModelVector) -> Result<f64> {
        if self.params.len() != other.params.len() {
            return Err(Error::ShapeMismatch {
                expected: self.params.len(),
                got: other.params.len(),
            });
        }
        Ok(self
            .params
            .iter()
            .zip(&other.params)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

/// Per-sample targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    Real(Vec<f64>),
    Class(Vec<usize>),
}

impl Targets {
    fn len(&self) -> usize {
        match self {
            Targets::Real(v) => v.len(),
            Targets::Class(v) => v.len(),
        }
    }
}

/// One vehicle's local data: features, targets, and per-sample proxy
/// images for the statistics pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleDataset {
    pub kind: TaskKind,
    pub input_dim: usize,
    pub num_classes: usize,
    /// Row-major `num_samples x input_dim`.
    pub features: Vec<f64>,
    pub targets: Targets,
    pub pixel_proxy: Vec<ImagePixels>,
}

impl VehicleDataset {
    #[must_use]
    pub fn num_samples(&self) -> usize {
        self.targets.len()
    }

    #[must_use]
    pub fn feature_row(&self, sample: usize) -> &[f64] {
        &self.features[sample * self.input_dim..(sample + 1) * self.input_dim]
    }

    /// Indices of every sample, for full-batch evaluation.
    #[must_use]
    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.num_samples()).collect()
    }
}

/// Draws a direction uniform on the unit sphere.
fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let mut direction: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for d in &mut direction {
            *d /= norm;
        }
    } else {
        direction[0] = 1.0;
    }
    direction
}

/// One edge's raw heterogeneity draw: a scalar `zeta ~ N(0,1)` and a
/// direction uniform on the unit sphere, both from the edge's own stream.
fn edge_draw(seed: u64, edge_index: u64, input_dim: usize) -> (f64, Vec<f64>) {
    let mut rng = substream(seed, "edge", edge_index);
    let zeta: f64 = rng.sample(StandardNormal);
    let direction = unit_vector(&mut rng, input_dim);
    (zeta, direction)
}

/// The shared ground truth behind every label in a scenario: a linear part
/// plus, for classification, one fixed bend direction per class whose
/// quadratic contribution is scaled by `curvature`.
struct Concept {
    linear: ModelVector,
    /// Row-major `num_classes x input_dim`; empty when the concept is
    /// purely linear.
    bend_dirs: Vec<f64>,
    curvature: f64,
}

impl Concept {
    fn draw(cfg: &TaskConfig) -> Self {
        let mut rng = substream(cfg.seed, "truth", 0);
        let linear = ModelVector {
            params: (0..cfg.param_dim()).map(|_| rng.sample(StandardNormal)).collect(),
        };
        let bend_dirs = match cfg.kind {
            TaskKind::LinearRegression => Vec::new(),
            TaskKind::SoftmaxClassification => (0..cfg.num_classes)
                .flat_map(|_| unit_vector(&mut rng, cfg.input_dim))
                .collect(),
        };
        Self { linear, bend_dirs, curvature: cfg.curvature }
    }

    /// Noiseless score of class `k` at `x`: the linear score plus the
    /// quadratic bend, normalized by `sqrt(input_dim)` so the bend keeps a
    /// comparable footprint across dimensions.
    fn class_score(&self, k: usize, x: &[f64]) -> f64 {
        let d = x.len();
        let linear = dot(&self.linear.params[k * d..(k + 1) * d], x);
        if self.curvature == 0.0 {
            return linear;
        }
        let along = dot(&self.bend_dirs[k * d..(k + 1) * d], x);
        linear + self.curvature * along * along / (d as f64).sqrt()
    }
}

/// Renders the proxy image for sample `sample_index` of any vehicle under
/// an edge with intensity shift `shift`. The pixel-noise stream is keyed by
/// the sample index alone, so vehicles of equally-shifted edges produce
/// bit-identical images — with `h = 0` the whole fleet becomes exactly iid.
fn render_proxy(seed: u64, sample_index: u64, shift: f64) -> ImagePixels {
    let mut rng = substream(seed, "proxy", sample_index);
    let offset = shift.clamp(-PROXY_SHIFT_CLAMP, PROXY_SHIFT_CLAMP);
    let data = (0..(PROXY_SIDE * PROXY_SIDE))
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            (128.0 + offset + PROXY_NOISE_STD * z).round().clamp(0.0, 255.0) as u8
        })
        .collect();
    ImagePixels::new(PROXY_SIDE, PROXY_SIDE, 1, data).expect("proxy raster length is fixed")
}

/// Labels one sample with the shared truth plus noise drawn from `rng`.
fn draw_target(cfg: &TaskConfig, truth: &Concept, x: &[f64], rng: &mut ChaCha8Rng) -> TargetDraw {
    match cfg.kind {
        TaskKind::LinearRegression => {
            let noise: f64 = rng.sample(StandardNormal);
            let y = dot(&truth.linear.params, x) + cfg.noise_std * noise;
            TargetDraw::Real(y)
        }
        TaskKind::SoftmaxClassification => {
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for k in 0..cfg.num_classes {
                let noise: f64 = rng.sample(StandardNormal);
                let score = truth.class_score(k, x) + cfg.noise_std * noise;
                if score > best_score {
                    best_score = score;
                    best = k;
                }
            }
            TargetDraw::Class(best)
        }
    }
}

enum TargetDraw {
    Real(f64),
    Class(usize),
}

fn generate_vehicle(
    cfg: &TaskConfig,
    truth: &Concept,
    stream_tag: &str,
    stream_id: u64,
    mean_shift: &[f64],
    proxy_shift: f64,
) -> VehicleDataset {
    let mut rng = substream(cfg.seed, stream_tag, stream_id);
    let n = cfg.samples_per_vehicle;
    let mut features = Vec::with_capacity(n * cfg.input_dim);
    let mut reals = Vec::new();
    let mut classes = Vec::new();
    let mut proxies = Vec::with_capacity(n);
    for j in 0..n {
        let x: Vec<f64> = mean_shift
            .iter()
            .map(|m| m + rng.sample::<f64, _>(StandardNormal))
            .collect();
        match draw_target(cfg, truth, &x, &mut rng) {
            TargetDraw::Real(y) => reals.push(y),
            TargetDraw::Class(y) => classes.push(y),
        }
        features.extend_from_slice(&x);
        proxies.push(render_proxy(cfg.seed, j as u64, proxy_shift));
    }
    let targets = match cfg.kind {
        TaskKind::LinearRegression => Targets::Real(reals),
        TaskKind::SoftmaxClassification => Targets::Class(classes),
    };
    VehicleDataset {
        kind: cfg.kind,
        input_dim: cfg.input_dim,
        num_classes: if cfg.kind == TaskKind::SoftmaxClassification { cfg.num_classes } else { 0 },
        features,
        targets,
        pixel_proxy: proxies,
    }
}

/// Generates every vehicle's dataset, indexed by vehicle id.
///
/// Heterogeneity models how far each edge's region strays from the global
/// distribution, so the raw per-edge draws are centered across the fleet:
/// edge `e` shifts by `h * (zeta_e - mean(zeta)) * u_e` in feature space
/// and by the matching scalar in proxy-image intensity. The fleet mixture
/// therefore stays aligned with the unshifted evaluation distribution, and
/// a single edge's shift measures exactly its statistical disparity.
pub fn generate_scenario(topology: &Topology, cfg: &TaskConfig) -> Result<Vec<VehicleDataset>> {
    cfg.validate()?;
    let truth = Concept::draw(cfg);
    let draws: Vec<(f64, Vec<f64>)> = (0..topology.num_edges())
        .map(|e| edge_draw(cfg.seed, e as u64, cfg.input_dim))
        .collect();
    let zeta_mean = draws.iter().map(|(z, _)| z).sum::<f64>() / draws.len() as f64;
    let mut datasets: Vec<Option<VehicleDataset>> = vec![None; topology.num_vehicles()];
    for (edge_index, edge) in topology.edges().iter().enumerate() {
        let (zeta, direction) = &draws[edge_index];
        let deviation = cfg.heterogeneity * (zeta - zeta_mean);
        let shift: Vec<f64> = direction.iter().map(|d| deviation * d).collect();
        let proxy_shift = PROXY_SHIFT_SCALE * deviation;
        for vehicle in &edge.vehicles {
            let data = generate_vehicle(
                cfg,
                &truth,
                "vehicle-data",
                u64::from(vehicle.0),
                &shift,
                proxy_shift,
            );
            datasets[vehicle.0 as usize] = Some(data);
        }
    }
    Ok(datasets.into_iter().map(|d| d.expect("dense vehicle ids")).collect())
}

/// Generates the global held-out evaluation set: unshifted features,
/// labels from the same ground truth and noise level.
pub fn generate_eval_set(cfg: &TaskConfig, num_samples: usize) -> Result<VehicleDataset> {
    cfg.validate()?;
    if num_samples < 1 {
        return Err(Error::Config("eval_samples must be at least 1".into()));
    }
    let mut eval_cfg = *cfg;
    eval_cfg.samples_per_vehicle = num_samples;
    let truth = Concept::draw(cfg);
    let shift = vec![0.0; cfg.input_dim];
    Ok(generate_vehicle(&eval_cfg, &truth, "eval", 0, &shift, 0.0))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean loss of `model` over the batch: squared error for regression,
/// cross-entropy for softmax classification.
pub fn loss(model: &ModelVector, data: &VehicleDataset, batch: &[usize]) -> f64 {
    let b = batch.len() as f64;
    match (&data.targets, data.kind) {
        (Targets::Real(ys), TaskKind::LinearRegression) => {
            batch
                .iter()
                .map(|&j| {
                    let r = dot(&model.params, data.feature_row(j)) - ys[j];
                    r * r
                })
                .sum::<f64>()
                / b
        }
        (Targets::Class(ys), TaskKind::SoftmaxClassification) => {
            batch
                .iter()
                .map(|&j| {
                    let logits = class_logits(model, data, j);
                    log_sum_exp(&logits) - logits[ys[j]]
                })
                .sum::<f64>()
                / b
        }
        _ => unreachable!("targets always match the task kind"),
    }
}

/// Analytic gradient of [`loss`] with respect to the parameters.
pub fn gradient(model: &ModelVector, data: &VehicleDataset, batch: &[usize]) -> ModelVector {
    let b = batch.len() as f64;
    let mut grad = vec![0.0; model.params.len()];
    match (&data.targets, data.kind) {
        (Targets::Real(ys), TaskKind::LinearRegression) => {
            for &j in batch {
                let x = data.feature_row(j);
                let r = dot(&model.params, x) - ys[j];
                for (g, xi) in grad.iter_mut().zip(x) {
                    *g += 2.0 * r * xi;
                }
            }
        }
        (Targets::Class(ys), TaskKind::SoftmaxClassification) => {
            let d = data.input_dim;
            for &j in batch {
                let x = data.feature_row(j);
                let probs = softmax(&class_logits(model, data, j));
                for (k, p) in probs.iter().enumerate() {
                    let coeff = p - if k == ys[j] { 1.0 } else { 0.0 };
                    for (g, xi) in grad[k * d..(k + 1) * d].iter_mut().zip(x) {
                        *g += coeff * xi;
                    }
                }
            }
        }
        _ => unreachable!("targets always match the task kind"),
    }
    for g in &mut grad {
        *g /= b;
    }
    ModelVector { params: grad }
}

fn class_logits(model: &ModelVector, data: &VehicleDataset, sample: usize) -> Vec<f64> {
    let d = data.input_dim;
    let x = data.feature_row(sample);
    (0..data.num_classes).map(|k| dot(&model.params[k * d..(k + 1) * d], x)).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Fraction of batch samples whose highest logit matches the label; argmax
/// ties resolve to the smallest class index.
pub fn accuracy(model: &ModelVector, data: &VehicleDataset, batch: &[usize]) -> f64 {
    let Targets::Class(ys) = &data.targets else {
        unreachable!("accuracy is only defined for classification targets")
    };
    let hits = batch
        .iter()
        .filter(|&&j| {
            let logits = class_logits(model, data, j);
            let mut arg = 0;
            for (k, l) in logits.iter().enumerate() {
                if *l > logits[arg] {
                    arg = k;
                }
            }
            arg == ys[j]
        })
        .count();
    hits as f64 / batch.len() as f64
}

/// Draws minibatches without replacement: each epoch shuffles the index
/// permutation once, then hands out consecutive chunks (the final chunk may
/// be short). Full-batch mode never touches the RNG, so full-batch runs are
/// reproducible independent of sampler state.
#[derive(Debug, Clone)]
pub struct MinibatchSampler {
    indices: Vec<usize>,
    pos: usize,
    batch: usize,
    full: bool,
    rng: ChaCha8Rng,
}

impl MinibatchSampler {
    pub fn new(num_samples: usize, batch_size: Option<usize>, rng: ChaCha8Rng) -> Result<Self> {
        if num_samples == 0 {
            return Err(Error::Config("sampler needs at least one sample".into()));
        }
        let batch = batch_size.unwrap_or(num_samples);
        if batch == 0 || batch > num_samples {
            return Err(Error::Config(format!(
                "batch size {batch} out of range for {num_samples} samples"
            )));
        }
        Ok(Self {
            indices: (0..num_samples).collect(),
            pos: 0,
            batch,
            full: batch == num_samples,
            rng,
        })
    }

    /// The next minibatch of sample indices.
    pub fn next_batch(&mut self) -> &[usize] {
        if self.full {
            return &self.indices;
        }
        if self.pos == 0 {
            use rand::seq::SliceRandom;
            self.indices.shuffle(&mut self.rng);
        }
        let end = (self.pos + self.batch).min(self.indices.len());
        let start = self.pos;
        self.pos = if end == self.indices.len() { 0 } else { end };
        &self.indices[start..end]
    }
}

/// Runs `steps` SGD iterations on the vehicle's own data:
/// `w <- w - lr * grad(w)` on successive minibatches.
pub fn local_update(
    model: &ModelVector,
    data: &VehicleDataset,
    sampler: &mut MinibatchSampler,
    steps: u32,
    lr: f64,
) -> ModelVector {
    let mut current = model.clone();
    for _ in 0..steps {
        let batch: Vec<usize> = sampler.next_batch().to_vec();
        let grad = gradient(&current, data, &batch);
        for (w, g) in current.params.iter_mut().zip(&grad.params) {
            *w -= lr * g;
        }
    }
    current
}

#[cfg(test)]
mod tests {
    use super::*;

    fn regression_cfg() -> TaskConfig {
        TaskConfig {
            kind: TaskKind::LinearRegression,
            input_dim: 3,
            num_classes: 2,
            samples_per_vehicle: 16,
            heterogeneity: 1.0,
            noise_std: 0.1,
            seed: 11,
            batch_size: None,
            curvature: 0.0,
        }
    }

    fn softmax_cfg() -> TaskConfig {
        TaskConfig {
            kind: TaskKind::SoftmaxClassification,
            input_dim: 4,
            num_classes: 3,
            samples_per_vehicle: 16,
            heterogeneity: 1.0,
            noise_std: 0.5,
            seed: 11,
            batch_size: None,
            curvature: 0.0,
        }
    }

    /// A hand-rolled single-feature regression set: inputs 1 and 2,
    /// targets 1 and 2 (truth weight 1, no noise).
    fn hand_regression() -> VehicleDataset {
        VehicleDataset {
            kind: TaskKind::LinearRegression,
            input_dim: 1,
            num_classes: 0,
            features: vec![1.0, 2.0],
            targets: Targets::Real(vec![1.0, 2.0]),
            pixel_proxy: vec![],
        }
    }

    #[test]
    fn regression_loss_hand_case() {
        let data = hand_regression();
        let zero = ModelVector::zeros(1);
        assert_eq!(loss(&zero, &data, &[0, 1]), 2.5);
        let truth = ModelVector { params: vec![1.0] };
        assert_eq!(loss(&truth, &data, &[0, 1]), 0.0);
    }

    #[test]
    fn regression_gradient_hand_case() {
        let data = hand_regression();
        let zero = ModelVector::zeros(1);
        // d/dw of ((w-1)^2 + (2w-2)^2)/2 is 5w - 5, so -5 at w = 0.
        assert_eq!(gradient(&zero, &data, &[0, 1]).params, vec![-5.0]);
        let truth = ModelVector { params: vec![1.0] };
        assert_eq!(gradient(&truth, &data, &[0, 1]).params, vec![0.0]);
    }

    #[test]
    fn softmax_loss_at_zero_params_is_ln_k() {
        let topology = Topology::uniform(1, 1).unwrap();
        let cfg = softmax_cfg();
        let data = &generate_scenario(&topology, &cfg).unwrap()[0];
        let zero = ModelVector::zeros(cfg.param_dim());
        let l = loss(&zero, data, &data.all_indices());
        assert!((l - (cfg.num_classes as f64).ln()).abs() < 1e-12, "loss {l}");
    }

    #[test]
    fn batch_gradient_is_mean_of_per_sample_gradients() {
        let topology = Topology::uniform(1, 1).unwrap();
        let cfg = softmax_cfg();
        let data = &generate_scenario(&topology, &cfg).unwrap()[0];
        let mut model = ModelVector::zeros(cfg.param_dim());
        for (i, p) in model.params.iter_mut().enumerate() {
            *p = (i as f64 * 0.37).sin();
        }
        let full = gradient(&model, data, &[2, 5]);
        let a = gradient(&model, data, &[2]);
        let b = gradient(&model, data, &[5]);
        for ((f, x), y) in full.params.iter().zip(&a.params).zip(&b.params) {
            assert!((f - (x + y) / 2.0).abs() < 1e-12);
        }
    }

    fn finite_difference(model: &ModelVector, data: &VehicleDataset, batch: &[usize]) -> Vec<f64> {
        let step = 1e-5;
        (0..model.params.len())
            .map(|i| {
                let mut plus = model.clone();
                plus.params[i] += step;
                let mut minus = model.clone();
                minus.params[i] -= step;
                (loss(&plus, data, batch) - loss(&minus, data, batch)) / (2.0 * step)
            })
            .collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let topology = Topology::uniform(1, 1).unwrap();
        for cfg in [regression_cfg(), softmax_cfg()] {
            let data = &generate_scenario(&topology, &cfg).unwrap()[0];
            let mut rng = substream(99, "test-points", 0);
            let model = ModelVector {
                params: (0..cfg.param_dim()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
            };
            let batch = [0, 3, 7];
            let analytic = gradient(&model, data, &batch);
            for (a, fd) in analytic.params.iter().zip(finite_difference(&model, data, &batch)) {
                let scale = a.abs().max(fd.abs()).max(1e-6);
                assert!((a - fd).abs() / scale < 1e-4, "analytic {a} vs fd {fd}");
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let topology = Topology::uniform(2, 2).unwrap();
        let cfg = softmax_cfg();
        assert_eq!(
            generate_scenario(&topology, &cfg).unwrap(),
            generate_scenario(&topology, &cfg).unwrap()
        );
        assert_eq!(
            generate_eval_set(&cfg, 32).unwrap(),
            generate_eval_set(&cfg, 32).unwrap()
        );
    }

    #[test]
    fn stronger_heterogeneity_widens_summary_divergence() {
        use crate::divergence::bhattacharyya_distance;
        use crate::gaussian::GaussianSummary;

        let topology = Topology::uniform(3, 2).unwrap();
        let mean_edge_cloud_distance = |h: f64| {
            let mut cfg = softmax_cfg();
            cfg.heterogeneity = h;
            let datasets = generate_scenario(&topology, &cfg).unwrap();
            let edge_summaries: Vec<GaussianSummary> = topology
                .edges()
                .iter()
                .map(|edge| {
                    let members: Vec<GaussianSummary> = edge
                        .vehicles
                        .iter()
                        .flat_map(|v| &datasets[v.0 as usize].pixel_proxy)
                        .map(|img| GaussianSummary::from_image(img).unwrap())
                        .collect();
                    GaussianSummary::merge(&members).unwrap()
                })
                .collect();
            let cloud = GaussianSummary::merge(&edge_summaries).unwrap();
            edge_summaries
                .iter()
                .map(|e| bhattacharyya_distance(e, &cloud).unwrap())
                .sum::<f64>()
                / edge_summaries.len() as f64
        };
        assert!(mean_edge_cloud_distance(2.0) > mean_edge_cloud_distance(0.5));
    }

    #[test]
    fn zero_heterogeneity_makes_proxies_identical_across_vehicles() {
        let topology = Topology::uniform(2, 2).unwrap();
        let mut cfg = regression_cfg();
        cfg.heterogeneity = 0.0;
        let datasets = generate_scenario(&topology, &cfg).unwrap();
        for other in &datasets[1..] {
            assert_eq!(datasets[0].pixel_proxy, other.pixel_proxy);
        }
    }

    #[test]
    fn proxies_are_noisy_not_constant() {
        let topology = Topology::uniform(1, 1).unwrap();
        let cfg = regression_cfg();
        let datasets = generate_scenario(&topology, &cfg).unwrap();
        let img = &datasets[0].pixel_proxy[0];
        let first = img.samples()[0];
        assert!(img.samples().iter().any(|&s| s != first));
    }

    #[test]
    fn one_full_batch_step_is_exact_gradient_descent() {
        let data = hand_regression();
        let mut sampler = MinibatchSampler::new(2, None, substream(1, "train", 0)).unwrap();
        let start = ModelVector { params: vec![0.25] };
        let updated = local_update(&start, &data, &mut sampler, 1, 0.1);
        let g = gradient(&start, &data, &[0, 1]).params[0];
        assert_eq!(updated.params[0], 0.25 - 0.1 * g);
    }

    #[test]
    fn repeated_full_batch_descent_reduces_loss() {
        let topology = Topology::uniform(1, 1).unwrap();
        let cfg = regression_cfg();
        let data = &generate_scenario(&topology, &cfg).unwrap()[0];
        let mut sampler =
            MinibatchSampler::new(data.num_samples(), None, substream(1, "train", 0)).unwrap();
        let start = ModelVector::zeros(cfg.param_dim());
        let trained = local_update(&start, data, &mut sampler, 100, 0.02);
        let batch = data.all_indices();
        assert!(loss(&trained, data, &batch) < loss(&start, data, &batch));
    }

    #[test]
    fn minibatch_epochs_cover_every_index() {
        let mut sampler = MinibatchSampler::new(10, Some(3), substream(5, "train", 2)).unwrap();
        let mut seen: Vec<usize> = Vec::new();
        // One epoch = ceil(10/3) = 4 batches (sizes 3, 3, 3, 1).
        for _ in 0..4 {
            seen.extend_from_slice(sampler.next_batch());
        }
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn identical_streams_update_identically() {
        let topology = Topology::uniform(1, 2).unwrap();
        let mut cfg = softmax_cfg();
        cfg.batch_size = Some(4);
        let datasets = generate_scenario(&topology, &cfg).unwrap();
        let start = ModelVector::zeros(cfg.param_dim());
        let mut s0 =
            MinibatchSampler::new(cfg.samples_per_vehicle, cfg.batch_size, substream(7, "train", 0))
                .unwrap();
        let mut s1 =
            MinibatchSampler::new(cfg.samples_per_vehicle, cfg.batch_size, substream(7, "train", 0))
                .unwrap();
        let a = local_update(&start, &datasets[0], &mut s0, 5, 0.05);
        let b = local_update(&start, &datasets[0], &mut s1, 5, 0.05);
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let mut cfg = regression_cfg();
        cfg.input_dim = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = regression_cfg();
        cfg.samples_per_vehicle = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = softmax_cfg();
        cfg.num_classes = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = regression_cfg();
        cfg.batch_size = Some(40);
        assert!(cfg.validate().is_err());
        let mut cfg = regression_cfg();
        cfg.noise_std = -0.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn accuracy_of_truth_model_beats_chance() {
        let topology = Topology::uniform(1, 1).unwrap();
        let mut cfg = softmax_cfg();
        cfg.noise_std = 0.0;
        cfg.samples_per_vehicle = 64;
        let data = &generate_scenario(&topology, &cfg).unwrap()[0];
        let truth = Concept::draw(&cfg).linear;
        let batch = data.all_indices();
        // Noiseless flat labels come straight from the truth model's argmax.
        assert_eq!(accuracy(&truth, data, &batch), 1.0);
        let zero = ModelVector::zeros(cfg.param_dim());
        assert!(accuracy(&zero, data, &batch) < 1.0);
    }

    #[test]
    fn curvature_bends_labels_away_from_the_linear_truth() {
        let topology = Topology::uniform(1, 1).unwrap();
        let mut cfg = softmax_cfg();
        cfg.noise_std = 0.0;
        cfg.samples_per_vehicle = 256;
        let flat = generate_scenario(&topology, &cfg).unwrap();
        cfg.curvature = 2.0;
        let bent = generate_scenario(&topology, &cfg).unwrap();
        // Same features either way; only the labelling rule changes.
        assert_eq!(flat[0].features, bent[0].features);
        assert_ne!(flat[0].targets, bent[0].targets);
        // The bend is mild: the linear part still explains most labels.
        let truth = Concept::draw(&cfg).linear;
        let batch = bent[0].all_indices();
        let acc = accuracy(&truth, &bent[0], &batch);
        assert!(acc > 0.6 && acc < 1.0, "accuracy {acc}");
    }
}
