//! Training loop: subsequence sampling, normalization, schedules and loss history.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::body::{BodyModel, Pose};
use crate::error::{Error, Result};
use crate::losses::{self, LossWeights};
use crate::model::{config_hash, BodyParams, FrameSequence, MotionPrior};
use crate::nn::{Adam, Bound};
use crate::rotation::{blend_rot6d, matrix_to_rot6d, rot6d_to_matrix};
use crate::scalar::{Scalar, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub n_frames: usize,
    /// Subsequence durations are drawn uniformly from this range, seconds.
    pub duration_range: [f64; 2],
    /// Learning rates, moved to the next after each plateau.
    pub lr_stages: Vec<f64>,
    pub plateau_patience: usize,
    /// First epoch trained with the surface term.
    pub lambda_3d_switch_epoch: usize,
    /// Surface weight from the switch epoch on.
    pub lambda_3d_value: f64,
    pub total_epochs: usize,
    /// Batches per epoch; zero means one pass worth of windows over the dataset.
    pub batches_per_epoch: usize,
    pub seed: u64,
    pub weights: LossWeights,
    /// Draw latents with noise during training; otherwise decode the means.
    pub stochastic: bool,
    pub grad_clip: Option<f64>,
    pub samples_per_bone: usize,
    /// Windows drawn once per sequence and revisited every epoch; zero draws fresh
    /// windows for every batch.
    pub window_pool: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            n_frames: 100,
            duration_range: [3.0, 5.0],
            lr_stages: vec![1e-4, 1e-5, 1e-6],
            plateau_patience: 20,
            lambda_3d_switch_epoch: 500,
            lambda_3d_value: 1.0,
            total_epochs: 1000,
            batches_per_epoch: 0,
            seed: 0,
            weights: LossWeights::default(),
            stochastic: true,
            grad_clip: None,
            samples_per_bone: 4,
            window_pool: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.n_frames < 2 || self.total_epochs == 0 || self.samples_per_bone == 0 {
            return Err(Error::InvalidConfig("batch_size, total_epochs and samples_per_bone must be positive, n_frames at least 2".into()));
        }
        let [lo, hi] = self.duration_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidConfig(format!("invalid duration range [{lo}, {hi}]")));
        }
        if self.lr_stages.is_empty() || self.lr_stages.iter().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
            return Err(Error::InvalidConfig("lr_stages must be positive".into()));
        }
        self.weights.validate()
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }

    pub fn lambda_3d_at(&self, epoch: usize) -> f64 {
        if epoch < self.lambda_3d_switch_epoch {
            0.0
        } else {
            self.lambda_3d_value
        }
    }
}

/// Affine maps between metric and normalized time and displacement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationInfo {
    pub gamma_min: [f64; 3],
    pub gamma_max: [f64; 3],
    /// Axes whose extent is too small to rescale; they normalize to 0.
    pub constant_axes: [bool; 3],
    pub tau_start: f64,
    pub tau_end: f64,
}

const CONSTANT_AXIS: f64 = 1e-9;

impl NormalizationInfo {
    pub fn from_bounds(gamma_min: [f64; 3], gamma_max: [f64; 3], tau_start: f64, tau_end: f64) -> Self {
        let constant_axes = [0, 1, 2].map(|k| gamma_max[k] - gamma_min[k] < CONSTANT_AXIS);
        Self { gamma_min, gamma_max, constant_axes, tau_start, tau_end }
    }

    pub fn of<T: Scalar>(seq: &FrameSequence<T>) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for g in &seq.displacements {
            for k in 0..3 {
                lo[k] = lo[k].min(g[k].as_f64());
                hi[k] = hi[k].max(g[k].as_f64());
            }
        }
        let t0 = seq.timestamps.first().map_or(0.0, |t| t.as_f64());
        let t1 = seq.timestamps.last().map_or(1.0, |t| t.as_f64());
        Self::from_bounds(lo, hi, t0, t1)
    }

    /// Midpoint and half extent per axis; constant axes have zero half extent.
    pub fn gamma_affine(&self) -> ([f64; 3], [f64; 3]) {
        let mid = [0, 1, 2].map(|k| {
            if self.constant_axes[k] {
                self.gamma_min[k]
            } else {
                0.5 * (self.gamma_min[k] + self.gamma_max[k])
            }
        });
        let half = [0, 1, 2].map(|k| if self.constant_axes[k] { 0.0 } else { 0.5 * (self.gamma_max[k] - self.gamma_min[k]) });
        (mid, half)
    }

    pub fn normalize_gamma<T: Scalar>(&self, g: Vec3<T>) -> Vec3<T> {
        let (mid, half) = self.gamma_affine();
        [0, 1, 2].map(|k| if half[k] == 0.0 { T::zero() } else { (g[k] - T::lit(mid[k])) / T::lit(half[k]) })
    }

    pub fn denormalize_gamma<T: Scalar>(&self, g: Vec3<T>) -> Vec3<T> {
        let (mid, half) = self.gamma_affine();
        [0, 1, 2].map(|k| T::lit(mid[k]) + g[k] * T::lit(half[k]))
    }

    pub fn normalize_time<T: Scalar>(&self, t: T) -> T {
        let span = self.tau_end - self.tau_start;
        if span <= 0.0 {
            return T::zero();
        }
        (t - T::lit(self.tau_start)) / T::lit(span)
    }

    pub fn denormalize_time<T: Scalar>(&self, tau: T) -> T {
        T::lit(self.tau_start) + tau * T::lit(self.tau_end - self.tau_start)
    }
}

/// Per-sequence normalization of time to `[0, 1]` and displacement to `[-1, 1]` per axis.
pub fn normalize<T: Scalar>(seq: &FrameSequence<T>) -> (FrameSequence<T>, NormalizationInfo) {
    let info = NormalizationInfo::of(seq);
    (apply_normalization(seq, &info), info)
}

pub fn apply_normalization<T: Scalar>(seq: &FrameSequence<T>, info: &NormalizationInfo) -> FrameSequence<T> {
    FrameSequence {
        timestamps: seq.timestamps.iter().map(|&t| info.normalize_time(t)).collect(),
        poses: seq.poses.clone(),
        displacements: seq.displacements.iter().map(|&g| info.normalize_gamma(g)).collect(),
        shape: seq.shape.clone(),
    }
}

pub fn denormalize<T: Scalar>(seq: &FrameSequence<T>, info: &NormalizationInfo) -> FrameSequence<T> {
    FrameSequence {
        timestamps: seq.timestamps.iter().map(|&t| info.denormalize_time(t)).collect(),
        poses: seq.poses.clone(),
        displacements: seq.displacements.iter().map(|&g| info.denormalize_gamma(g)).collect(),
        shape: seq.shape.clone(),
    }
}

/// Interpolates a sequence at new timestamps inside its span: linear in displacement,
/// 6D blend of the neighbouring rotations followed by orthonormalization.
pub fn resample<T: Scalar>(seq: &FrameSequence<T>, times: &[T]) -> Result<FrameSequence<T>> {
    seq.validate()?;
    let ts = &seq.timestamps;
    let (first, last) = (ts[0], ts[ts.len() - 1]);
    let tol = T::lit(1e-9) * (T::one() + last.abs());
    let mut poses = Vec::with_capacity(times.len());
    let mut displacements = Vec::with_capacity(times.len());
    for &t in times {
        if t < first - tol || t > last + tol {
            return Err(Error::SourceTooShort(format!("time {t} lies outside the source span [{first}, {last}]")));
        }
        let t = t.max(first).min(last);
        let hi = ts.partition_point(|&x| x < t).clamp(1, ts.len() - 1);
        let lo = hi - 1;
        let w = ((t - ts[lo]) / (ts[hi] - ts[lo])).max(T::zero()).min(T::one());
        let weights = [T::one() - w, w];
        let theta = seq.poses[lo]
            .theta
            .iter()
            .zip(&seq.poses[hi].theta)
            .map(|(a, b)| {
                if w == T::zero() {
                    return Ok(*a);
                }
                if w == T::one() {
                    return Ok(*b);
                }
                matrix_to_rot6d(&rot6d_to_matrix(&blend_rot6d(&weights, &[*a, *b])?)?)
            })
            .collect::<Result<Vec<_>>>()?;
        poses.push(Pose { theta });
        let (ga, gb) = (seq.displacements[lo], seq.displacements[hi]);
        displacements.push([0, 1, 2].map(|k| weights[0] * ga[k] + weights[1] * gb[k]));
    }
    Ok(FrameSequence { timestamps: times.to_vec(), poses, displacements, shape: seq.shape.clone() })
}

/// `n` evenly spaced timestamps covering `[start, start + duration]`.
pub fn uniform_times<T: Scalar>(start: T, duration: T, n: usize) -> Vec<T> {
    let step = duration / T::lit((n.max(2) - 1) as f64);
    (0..n).map(|i| start + step * T::lit(i as f64)).collect()
}

/// A random window of the source resampled to `n_frames` frames.
pub fn sample_subsequence<T: Scalar>(source: &FrameSequence<T>, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<FrameSequence<T>> {
    let [lo, hi] = cfg.duration_range;
    let duration = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let available = source.duration().as_f64();
    if available < duration {
        return Err(Error::SourceTooShort(format!("source lasts {available:.3} s, window needs {duration:.3} s")));
    }
    let start = source.timestamps[0].as_f64() + rng.random_range(0.0..=available - duration);
    resample(source, &uniform_times(T::lit(start), T::lit(duration), cfg.n_frames))
}

/// Drops the learning rate to the next stage after `patience` epochs without a new
/// minimum of the epoch loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    stages: Vec<f64>,
    stage: usize,
    patience: usize,
    best: f64,
    since_best: usize,
}

impl PlateauScheduler {
    pub fn new(stages: Vec<f64>, patience: usize) -> Self {
        Self { stages, stage: 0, patience, best: f64::INFINITY, since_best: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.stages[self.stage]
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    /// Forgets the best loss seen so far without changing the stage.
    pub fn restart(&mut self) {
        self.best = f64::INFINITY;
        self.since_best = 0;
    }

    /// Records an epoch loss; returns true when the rate for the next epoch drops.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.since_best = 0;
            return false;
        }
        self.since_best += 1;
        if self.since_best >= self.patience && self.stage + 1 < self.stages.len() {
            self.stage += 1;
            self.since_best = 0;
            return true;
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub global: f64,
    pub segment: f64,
    pub kl: f64,
    pub reg: f64,
    pub total: f64,
    pub lr: f64,
    pub lambda_3d: f64,
    /// Segment durations averaged over the epoch's windows.
    pub delta: Vec<f64>,
}

pub const HISTORY_HEADER: &str = "epoch,L_global,L_segment,L_KL,L_reg,lr,lambda_3D";

/// Loss history as CSV; `provenance` lines are written first as `#` comments.
pub fn history_csv(records: &[EpochRecord], provenance: &[String]) -> String {
    let mut out = String::new();
    for line in provenance {
        let _ = writeln!(out, "# {line}");
    }
    out.push_str(HISTORY_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{},{:e},{:e},{:e},{:e},{:e},{}", r.epoch, r.global, r.segment, r.kl, r.reg, r.lr, r.lambda_3d);
    }
    out
}

pub fn write_history_csv(path: impl AsRef<Path>, records: &[EpochRecord], provenance: &[String]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, history_csv(records, provenance)).map_err(|e| Error::io(path, e))
}

/// Normalized training window with everything the objective needs.
#[derive(Debug, Clone)]
pub struct TrainingExample<T> {
    /// `n × (6J+3)` normalized frames.
    pub frames: Tensor<T>,
    pub taus: Vec<T>,
    pub beta: Tensor<T>,
    pub info: NormalizationInfo,
    /// `n × 3P` reference surface points in metres, when the surface term is active.
    pub points: Option<Tensor<T>>,
}

impl<T: Scalar> TrainingExample<T> {
    pub fn new<B: BodyModel<T>>(window: &FrameSequence<T>, body: Option<&B>) -> Result<Self> {
        let (norm, info) = normalize(window);
        let points = match body {
            Some(b) => {
                let rows: Vec<Vec<T>> = window
                    .poses
                    .iter()
                    .zip(&window.displacements)
                    .map(|(p, &g)| b.surface(p, g, &window.shape).map(|pts| pts.into_iter().flatten().collect()))
                    .collect::<Result<_>>()?;
                let cols = rows[0].len();
                Some(Tensor::new(rows.len(), cols, rows.into_iter().flatten().collect()))
            }
            None => None,
        };
        Ok(Self {
            frames: norm.frame_matrix(),
            taus: norm.timestamps,
            beta: Tensor::row(window.shape.beta.clone()),
            info,
            points,
        })
    }
}

/// Loss nodes of one example.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveVars {
    pub total: Var,
    pub global: Var,
    pub segment: Var,
    pub kl: Var,
    pub reg: Var,
    pub delta: Var,
}

/// Builds the full training objective of one example; `noise` is `m × D` or `None` for means.
pub fn objective_graph<T: Scalar, B: BodyModel<T>>(
    g: &mut Graph<T>,
    model: &MotionPrior<T>,
    p: &Bound,
    example: &TrainingExample<T>,
    noise: Option<&Tensor<T>>,
    weights: &LossWeights,
    body: &B,
) -> ObjectiveVars {
    let frames = g.constant(example.frames.clone());
    let taus = g.constant(Tensor::column(example.taus.clone()));
    let enc = model.encode_graph(g, p, frames, taus);
    let z = match noise {
        Some(eps) => {
            let eps = g.constant(eps.clone());
            let sigma = g.exp(enc.log_sigma);
            let scaled = g.mul(eps, sigma);
            g.add(enc.mu, scaled)
        }
        None => enc.mu,
    };
    let beta = g.constant(example.beta.clone());
    let dec = model.decode_graph(g, p, z, beta, &example.taus);
    let pred = g.concat_cols(&[dec.theta, dec.gamma]);
    let points = match (&example.points, weights.lambda_3d) {
        (Some(gt), l) if l != 0.0 => {
            let (mid, half) = example.info.gamma_affine();
            let half = g.constant(Tensor::row(half.iter().map(|&x| T::lit(x)).collect()));
            let mid = g.constant(Tensor::row(mid.iter().map(|&x| T::lit(x)).collect()));
            let metric = g.mul_row(dec.gamma, half);
            let metric = g.add_row(metric, mid);
            let pred_points = body.surface_graph(g, dec.theta, metric, beta);
            let gt = g.constant(gt.clone());
            Some((pred_points, gt, T::lit(l)))
        }
        _ => None,
    };
    let global = losses::global_rec_graph(g, pred, frames, points);
    let segment = losses::segment_rec_graph(g, dec.per_segment, dec.masks, frames);
    let kl = losses::kl_graph(g, enc.mu, enc.log_sigma);
    let reg = losses::duration_reg_graph(g, dec.delta);
    let total = losses::total_graph(g, global, segment, kl, reg, weights);
    ObjectiveVars { total, global, segment, kl, reg, delta: dec.delta }
}

/// Stateful trainer; one call to [`Trainer::run_epoch`] per epoch.
pub struct Trainer<T> {
    pub config: TrainConfig,
    adam: Adam<T>,
    scheduler: PlateauScheduler,
    rng: ChaCha8Rng,
    epoch: usize,
    pool: Vec<FrameSequence<T>>,
    pool_examples: Vec<(bool, TrainingExample<T>)>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: &MotionPrior<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut adam = Adam::new(&model.params.shapes());
        if let Some(c) = config.grad_clip {
            adam = adam.with_clip(c);
        }
        Ok(Self {
            scheduler: PlateauScheduler::new(config.lr_stages.clone(), config.plateau_patience),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            adam,
            config,
            epoch: 0,
            pool: Vec::new(),
            pool_examples: Vec::new(),
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn lr(&self) -> f64 {
        self.scheduler.lr()
    }

    fn batches(&self, dataset_len: usize) -> usize {
        if !self.pool.is_empty() {
            self.pool.len().div_ceil(self.config.batch_size)
        } else if self.config.batches_per_epoch > 0 {
            self.config.batches_per_epoch
        } else {
            dataset_len.div_ceil(self.config.batch_size).max(1)
        }
    }

    pub fn run_epoch<B: BodyModel<T>>(&mut self, model: &mut MotionPrior<T>, dataset: &[FrameSequence<T>], body: &B) -> Result<EpochRecord> {
        if dataset.is_empty() {
            return Err(Error::EmptyInput("training needs at least one sequence".into()));
        }
        let cfg = self.config.clone();
        if cfg.window_pool > 0 && self.pool.is_empty() {
            for source in dataset {
                for _ in 0..cfg.window_pool {
                    self.pool.push(sample_subsequence(source, &cfg, &mut self.rng)?);
                }
            }
        }
        let lambda_3d = cfg.lambda_3d_at(self.epoch);
        let with_points = lambda_3d != 0.0;
        if !self.pool.is_empty() && self.pool_examples.first().is_none_or(|e| e.0 != with_points) {
            self.pool_examples = self
                .pool
                .iter()
                .map(|w| Ok((with_points, TrainingExample::new(w, with_points.then_some(body))?)))
                .collect::<Result<_>>()?;
        }
        if self.epoch > 0 && lambda_3d != cfg.lambda_3d_at(self.epoch - 1) {
            self.scheduler.restart();
        }
        let weights = LossWeights { lambda_3d, ..cfg.weights };
        let lr = self.scheduler.lr();
        let (m, d) = (model.config.primitives, model.config.latent_dim);
        let batches = self.batches(dataset.len());
        let mut sums = [0.0; 5];
        let mut delta_sum = vec![0.0; m];
        let mut count = 0usize;
        for batch in 0..batches {
            let mut g = Graph::new();
            let p = model.params.bind(&mut g, true);
            let mut total = None;
            let size = if self.pool.is_empty() { cfg.batch_size } else { cfg.batch_size.min(self.pool.len() - batch * cfg.batch_size) };
            for k in 0..size {
                let fresh;
                let example = if self.pool.is_empty() {
                    let source = &dataset[self.rng.random_range(0..dataset.len())];
                    let window = sample_subsequence(source, &cfg, &mut self.rng)?;
                    fresh = TrainingExample::new(&window, with_points.then_some(body))?;
                    &fresh
                } else {
                    &self.pool_examples[batch * cfg.batch_size + k].1
                };
                let noise = cfg.stochastic.then(|| {
                    Tensor::new(m, d, (0..m * d).map(|_| T::lit(self.rng.sample::<f64, _>(StandardNormal))).collect())
                });
                let vars = objective_graph(&mut g, model, &p, example, noise.as_ref(), &weights, body);
                count += 1;
                for (slot, v) in sums.iter_mut().zip([vars.global, vars.segment, vars.kl, vars.reg, vars.total]) {
                    *slot += g.value(v).item().as_f64();
                }
                for (slot, v) in delta_sum.iter_mut().zip(&g.value(vars.delta).data) {
                    *slot += v.as_f64();
                }
                total = Some(match total {
                    None => vars.total,
                    Some(acc) => g.add(acc, vars.total),
                });
            }
            let loss = g.scale(total.expect("batch is nonempty"), T::one() / T::lit(size as f64));
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: self.epoch,
                    detail: format!(
                        "batch loss {value}; running sums global {:e}, segment {:e}, kl {:e}, reg {:e} at lr {lr:e}",
                        sums[0], sums[1], sums[2], sums[3]
                    ),
                });
            }
            let grads = g.backward(loss);
            let grads = model.params.collect_grads(&p, &grads);
            self.adam.step(model.params.tensors_mut(), &grads, lr);
        }
        let count = count as f64;
        let record = EpochRecord {
            epoch: self.epoch,
            global: sums[0] / count,
            segment: sums[1] / count,
            kl: sums[2] / count,
            reg: sums[3] / count,
            total: sums[4] / count,
            lr,
            lambda_3d,
            delta: delta_sum.iter().map(|s| s / count).collect(),
        };
        self.scheduler.observe(record.total);
        self.epoch += 1;
        Ok(record)
    }
}

/// Trains for `config.total_epochs`, calling `on_epoch` after each epoch.
pub fn train<T: Scalar, B: BodyModel<T>>(
    model: &mut MotionPrior<T>,
    dataset: &[FrameSequence<T>],
    body: &B,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &MotionPrior<T>) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    let mut trainer = Trainer::new(model, config.clone())?;
    let mut history = Vec::with_capacity(config.total_epochs);
    for _ in 0..config.total_epochs {
        let record = trainer.run_epoch(model, dataset, body)?;
        on_epoch(&record, model)?;
        history.push(record);
    }
    Ok(history)
}

/// Decodes a metric sequence through the prior with mean latents and returns metric frames.
pub fn reconstruct_metric<T: Scalar>(model: &MotionPrior<T>, seq: &FrameSequence<T>) -> Result<Vec<BodyParams<T>>> {
    let (norm, info) = normalize(seq);
    let out = model.reconstruct(&norm)?;
    Ok(out
        .into_iter()
        .map(|f| BodyParams { pose: f.pose, gamma: info.denormalize_gamma(f.gamma) })
        .collect())
}
