//! Experiment harnesses: duration generalization, latent-layout ablations and the
//! completion sweep.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::body::{mpjpe, BodyModel};
use crate::completion::{chamfer, complete, downsample, surface_sequence, CompletionConfig, InitEncoder, PointCloudSequence};
use crate::error::{Error, Result};
use crate::model::{config_hash, FrameSequence, ModelConfig, MotionPrior};
use crate::scalar::Scalar;
use crate::trainer::{reconstruct_metric, resample, train, EpochRecord, TrainConfig};

/// How per-duration errors are pooled, written next to every curve.
pub const AGGREGATION: &str = "mean over frames and joints per sequence, then mean over sequences";

/// Leading window of `seq` lasting `duration` seconds at its own timestamps.
pub fn leading_window<T: Scalar>(seq: &FrameSequence<T>, duration: f64) -> Result<FrameSequence<T>> {
    if seq.is_empty() {
        return Err(Error::EmptyInput("empty sequence".into()));
    }
    let t0 = seq.timestamps[0].as_f64();
    let end = t0 + duration;
    let tol = 1e-9 * (1.0 + end.abs());
    if seq.timestamps[seq.len() - 1].as_f64() < end - tol {
        return Err(Error::SourceTooShort(format!("sequence lasts {:.3} s, window needs {duration:.3} s", seq.duration().as_f64())));
    }
    let n = seq.timestamps.partition_point(|t| t.as_f64() <= end + tol);
    if n < 2 {
        return Err(Error::SourceTooShort(format!("a {duration} s window holds fewer than two frames")));
    }
    Ok(FrameSequence {
        timestamps: seq.timestamps[..n].to_vec(),
        poses: seq.poses[..n].to_vec(),
        displacements: seq.displacements[..n].to_vec(),
        shape: seq.shape.clone(),
    })
}

/// Encodes with mean latents, decodes at the input timestamps and returns the MPJPE in mm.
pub fn sequence_mpjpe<T: Scalar, B: BodyModel<T>>(prior: &MotionPrior<T>, seq: &FrameSequence<T>, body: &B) -> Result<f64> {
    let out = reconstruct_metric(prior, seq)?;
    let pred = out.iter().map(|f| body.joints(&f.pose, f.gamma, &seq.shape)).collect::<Result<Vec<_>>>()?;
    let truth = seq
        .poses
        .iter()
        .zip(&seq.displacements)
        .map(|(p, &g)| body.joints(p, g, &seq.shape))
        .collect::<Result<Vec<_>>>()?;
    Ok(mpjpe(&pred, &truth)?.as_f64())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationPoint {
    pub duration: f64,
    pub mpjpe_mm: f64,
    pub per_sequence: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationCurve {
    pub points: Vec<DurationPoint>,
    pub aggregation: String,
}

impl GeneralizationCurve {
    /// Duration with the lowest error.
    pub fn argmin(&self) -> Option<f64> {
        self.points.iter().min_by(|a, b| a.mpjpe_mm.total_cmp(&b.mpjpe_mm)).map(|p| p.duration)
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.mpjpe_mm.is_finite())
    }

    /// Mean error over the durations inside `[lo, hi]`.
    pub fn mean_within(&self, lo: f64, hi: f64) -> Option<f64> {
        let inside: Vec<f64> = self.points.iter().filter(|p| p.duration >= lo && p.duration <= hi).map(|p| p.mpjpe_mm).collect();
        (!inside.is_empty()).then(|| inside.iter().sum::<f64>() / inside.len() as f64)
    }
}

/// Reconstruction error of the leading `d`-second window of every test sequence for
/// each requested duration. No retraining: windows are mapped to normalized time.
pub fn generalization_curve<T: Scalar, B: BodyModel<T>>(
    prior: &MotionPrior<T>,
    test_set: &[FrameSequence<T>],
    durations: &[f64],
    body: &B,
) -> Result<GeneralizationCurve> {
    if test_set.is_empty() || durations.is_empty() {
        return Err(Error::EmptyInput("generalization curve needs sequences and durations".into()));
    }
    let mut points = Vec::with_capacity(durations.len());
    for &d in durations {
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::InvalidConfig(format!("duration {d} is not positive")));
        }
        let per_sequence = test_set
            .iter()
            .map(|seq| sequence_mpjpe(prior, &leading_window(seq, d)?, body))
            .collect::<Result<Vec<_>>>()?;
        let mpjpe_mm = per_sequence.iter().sum::<f64>() / per_sequence.len() as f64;
        points.push(DurationPoint { duration: d, mpjpe_mm, per_sequence });
    }
    Ok(GeneralizationCurve { points, aggregation: AGGREGATION.into() })
}

pub fn curve_csv(curve: &GeneralizationCurve, provenance: &[String]) -> String {
    let mut out = comment_lines(provenance);
    let _ = writeln!(out, "# aggregation: {}", curve.aggregation);
    out.push_str("duration_s,mpjpe_mm,sequences\n");
    for p in &curve.points {
        let _ = writeln!(out, "{},{:e},{}", p.duration, p.mpjpe_mm, p.per_sequence.len());
    }
    out
}

fn comment_lines(provenance: &[String]) -> String {
    let mut out = String::new();
    for line in provenance {
        let _ = writeln!(out, "# {line}");
    }
    out
}

/// Durations `lo, lo+step, ...` up to and including `hi`.
pub fn duration_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|k| ((lo + k as f64 * step) * 1e6).round() / 1e6).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationArm {
    pub name: String,
    pub model: ModelConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub arms: Vec<AblationArm>,
    /// Each seed initializes the model and drives training for every arm.
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub durations: Vec<f64>,
}

impl AblationConfig {
    /// Sequential latents against a single latent of the same total size, plus the
    /// sequential model with its segmentation frozen at uniform durations.
    pub fn latent_layout(base: &ModelConfig, train: TrainConfig, seeds: Vec<u64>, durations: Vec<f64>) -> Self {
        let total = base.primitives * base.latent_dim;
        let single = ModelConfig { primitives: 1, latent_dim: total, ..base.clone() };
        let fixed = ModelConfig { fixed_segments: true, ..base.clone() };
        let arms = vec![
            AblationArm { name: format!("m{}_d{}", base.primitives, base.latent_dim), model: base.clone() },
            AblationArm { name: format!("m1_d{total}"), model: single },
            AblationArm { name: format!("m{}_d{}_fixed", base.primitives, base.latent_dim), model: fixed },
        ];
        Self { arms, seeds, train, durations }
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub arm: String,
    pub seed: u64,
    pub curve: GeneralizationCurve,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub config_hash: String,
    pub runs: Vec<AblationRun>,
}

impl AblationTable {
    pub fn run(&self, arm: &str, seed: u64) -> Option<&AblationRun> {
        self.runs.iter().find(|r| r.arm == arm && r.seed == seed)
    }
}

/// Trains every arm for every seed on `train_set` and evaluates it on `test_set`.
pub fn ablation<T: Scalar, B: BodyModel<T>>(
    train_set: &[FrameSequence<T>],
    test_set: &[FrameSequence<T>],
    body: &B,
    cfg: &AblationConfig,
    mut on_epoch: impl FnMut(&str, u64, &EpochRecord) -> Result<()>,
) -> Result<AblationTable> {
    if cfg.arms.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::InvalidConfig("ablation needs at least one arm and one seed".into()));
    }
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        for arm in &cfg.arms {
            let mut prior = MotionPrior::new(ModelConfig { seed, ..arm.model.clone() })?;
            let tc = TrainConfig { seed, ..cfg.train.clone() };
            let history = train(&mut prior, train_set, body, &tc, |r, _| on_epoch(&arm.name, seed, r))?;
            let curve = generalization_curve(&prior, test_set, &cfg.durations, body)?;
            runs.push(AblationRun { arm: arm.name.clone(), seed, curve, history });
        }
    }
    Ok(AblationTable { config_hash: cfg.hash(), runs })
}

/// One row per (arm, seed, duration).
pub fn ablation_csv(table: &AblationTable, provenance: &[String]) -> String {
    let mut out = comment_lines(provenance);
    let _ = writeln!(out, "# config_hash: {}", table.config_hash);
    let _ = writeln!(out, "# aggregation: {AGGREGATION}");
    out.push_str("arm,seed,duration_s,mpjpe_mm\n");
    for r in &table.runs {
        for p in &r.curve.points {
            let _ = writeln!(out, "{},{},{},{:e}", r.arm, r.seed, p.duration, p.mpjpe_mm);
        }
    }
    out
}

/// Points kept per observed frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointBudget {
    Count(usize),
    Dense,
}

impl std::fmt::Display for PointBudget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PointBudget::Count(n) => write!(f, "{n}"),
            PointBudget::Dense => f.write_str("dense"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub points: Vec<PointBudget>,
    pub fps: Vec<f64>,
    pub completion: CompletionConfig,
    /// Drives the random point subsets.
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            points: vec![PointBudget::Count(100), PointBudget::Count(1000), PointBudget::Dense],
            fps: vec![5.0, 10.0],
            completion: CompletionConfig::default(),
            seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceCompletion {
    /// Mean Chamfer in mm against the ground-truth surface at the output frames.
    pub initial_mm: f64,
    pub final_mm: f64,
    pub frames: usize,
    pub observed_frames: usize,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub points: PointBudget,
    pub fps: f64,
    /// Mean over all output frames of all sequences.
    pub mean_chamfer_mm: f64,
    pub mean_initial_mm: f64,
    pub sequences: Vec<SequenceCompletion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub config_hash: String,
    pub seed: u64,
    pub cells: Vec<SweepCell>,
}

impl SweepGrid {
    pub fn cell(&self, points: PointBudget, fps: f64) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.points == points && c.fps == fps)
    }
}

/// Per-frame Chamfer (mm) between the surface of `motion` and that of `truth` resampled at
/// the same times. Frames after the end of `truth` are skipped.
pub fn truth_chamfer<T: Scalar, B: BodyModel<T>>(motion: &FrameSequence<T>, truth: &FrameSequence<T>, body: &B) -> Result<Vec<f64>> {
    let end = truth.timestamps[truth.len() - 1].as_f64() + 1e-9;
    let n = motion.timestamps.partition_point(|t| t.as_f64() <= end);
    if n == 0 {
        return Err(Error::SourceTooShort("no output frame falls inside the ground truth".into()));
    }
    let kept = FrameSequence {
        timestamps: motion.timestamps[..n].to_vec(),
        poses: motion.poses[..n].to_vec(),
        displacements: motion.displacements[..n].to_vec(),
        shape: motion.shape.clone(),
    };
    let gt = surface_sequence(&resample(truth, &kept.timestamps)?, body)?;
    let fit = surface_sequence(&kept, body)?;
    fit.clouds.iter().zip(&gt.clouds).map(|(a, b)| Ok(chamfer(a, b)?.as_f64())).collect()
}

/// Completes one observation of `truth` and scores the initial and final motions
/// against its surface with [`truth_chamfer`].
pub fn score_completion<T: Scalar, B: BodyModel<T>>(
    truth: &FrameSequence<T>,
    observed: &PointCloudSequence<T>,
    prior: &MotionPrior<T>,
    init: &InitEncoder<T>,
    body: &B,
    cfg: &CompletionConfig,
) -> Result<(SequenceCompletion, Vec<f64>, Vec<f64>)> {
    let result = complete(observed, cfg, prior, Some(init), body)?;
    let initial = truth_chamfer(&result.initial_motion, truth, body)?;
    let finals = truth_chamfer(&result.motion, truth, body)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let summary = SequenceCompletion {
        initial_mm: mean(&initial),
        final_mm: mean(&finals),
        frames: finals.len(),
        observed_frames: observed.len(),
        iterations: result.iterations,
    };
    Ok((summary, initial, finals))
}

/// Completes every test sequence at every (points, fps) resolution. Observations are
/// drawn from `dense_body`; `body` is the surface fitted and scored.
pub fn completion_sweep<T: Scalar, B: BodyModel<T>, D: BodyModel<T>>(
    prior: &MotionPrior<T>,
    init: &InitEncoder<T>,
    test_set: &[FrameSequence<T>],
    body: &B,
    dense_body: &D,
    cfg: &SweepConfig,
) -> Result<SweepGrid> {
    cfg.completion.validate()?;
    if test_set.is_empty() {
        return Err(Error::EmptyInput("completion sweep needs test sequences".into()));
    }
    let sources = test_set.iter().map(|s| surface_sequence(s, dense_body)).collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::new();
    for &points in &cfg.points {
        for &fps in &cfg.fps {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut sequences = Vec::with_capacity(test_set.len());
            let (mut init_sum, mut final_sum, mut frames) = (0.0, 0.0, 0usize);
            for (truth, dense) in test_set.iter().zip(&sources) {
                let keep = match points {
                    PointBudget::Count(n) => n,
                    PointBudget::Dense => dense.min_points(),
                };
                let observed = downsample(dense, keep, fps, &mut rng)?;
                let (summary, initial, finals) = score_completion(truth, &observed, prior, init, body, &cfg.completion)?;
                init_sum += initial.iter().sum::<f64>();
                final_sum += finals.iter().sum::<f64>();
                frames += finals.len();
                sequences.push(summary);
            }
            let n = frames as f64;
            cells.push(SweepCell { points, fps, mean_chamfer_mm: final_sum / n, mean_initial_mm: init_sum / n, sequences });
        }
    }
    Ok(SweepGrid { config_hash: cfg.hash(), seed: cfg.seed, cells })
}

pub fn sweep_csv(grid: &SweepGrid, provenance: &[String]) -> String {
    let mut out = comment_lines(provenance);
    let _ = writeln!(out, "# config_hash: {}", grid.config_hash);
    let _ = writeln!(out, "# seed: {}", grid.seed);
    out.push_str("points,fps,mean_chamfer_mm,mean_initial_chamfer_mm,sequences\n");
    for c in &grid.cells {
        let _ = writeln!(out, "{},{},{:e},{:e},{}", c.points, c.fps, c.mean_chamfer_mm, c.mean_initial_mm, c.sequences.len());
    }
    out
}

/// JSON summary wrapping a result with its provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report<R> {
    pub provenance: Vec<String>,
    pub config_hash: String,
    pub seed: u64,
    pub result: R,
}

pub fn write_report<R: Serialize>(path: impl AsRef<Path>, report: &Report<R>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::json(path.display().to_string(), e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
