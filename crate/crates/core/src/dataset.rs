//! Procedural motions, the motion file format and train/validation splits.
//!
//! Bodies are y-up and face +z in the rest pose. Every kind is a smooth joint
//! program; locomotion kinds integrate the heading to produce the root path.

use std::collections::BTreeSet;
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::body::{BodyShape, Pose, Skeleton};
use crate::error::{Error, Result};
use crate::model::FrameSequence;
use crate::scalar::{add3, sub3};
use crate::rotation::{blend_rot6d, matrix_to_rot6d, rot6d_to_matrix, Rot6D, RotationMatrix};

pub const MOTION_FORMAT_VERSION: u32 = 1;
/// Width of the cross-blend between consecutive parts of a composite, seconds.
pub const TRANSITION_SECONDS: f64 = 0.3;
const PELVIS_HEIGHT: f64 = 0.92;
const WALK_STRIDE: f64 = 1.4;
const RUN_STRIDE: f64 = 2.6;
const SQUAT_RATE: f64 = 0.4;
const WAVE_RAISE: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    WalkLine,
    WalkCircle,
    RunArc,
    WaveArm,
    Squat,
    Idle,
    Composite,
}

impl MotionKind {
    pub const ALL: [MotionKind; 7] = [
        MotionKind::WalkLine,
        MotionKind::WalkCircle,
        MotionKind::RunArc,
        MotionKind::WaveArm,
        MotionKind::Squat,
        MotionKind::Idle,
        MotionKind::Composite,
    ];

    /// Kinds a composite may be assembled from.
    pub const PARTS: [MotionKind; 5] =
        [MotionKind::WalkLine, MotionKind::WalkCircle, MotionKind::RunArc, MotionKind::WaveArm, MotionKind::Squat];

    pub fn name(self) -> &'static str {
        match self {
            MotionKind::WalkLine => "walk_line",
            MotionKind::WalkCircle => "walk_circle",
            MotionKind::RunArc => "run_arc",
            MotionKind::WaveArm => "wave_arm",
            MotionKind::Squat => "squat",
            MotionKind::Idle => "idle",
            MotionKind::Composite => "composite",
        }
    }
}

impl fmt::Display for MotionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MotionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MotionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown motion kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    pub kind: MotionKind,
    /// Seconds.
    pub duration: f64,
    pub fps: f64,
    pub shape: BodyShape<f64>,
    pub seed: u64,
    /// Parts of a composite; drawn from the seed when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parts: Vec<MotionKind>,
}

impl MotionSpec {
    pub fn new(kind: MotionKind, duration: f64, fps: f64, shape: BodyShape<f64>, seed: u64) -> Self {
        Self { kind, duration, fps, shape, seed, parts: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) || !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::InvalidConfig("duration and fps must be positive".into()));
        }
        if self.num_frames() < 2 {
            return Err(Error::InvalidConfig(format!(
                "{} s at {} fps gives fewer than 2 frames",
                self.duration, self.fps
            )));
        }
        if self.parts.contains(&MotionKind::Composite) || self.parts.contains(&MotionKind::Idle) {
            return Err(Error::InvalidConfig("composite parts must be active single kinds".into()));
        }
        if self.kind == MotionKind::Composite && self.parts.len() == 1 {
            return Err(Error::InvalidConfig("a composite needs at least 2 parts".into()));
        }
        Ok(())
    }

    /// Frames at `i / fps` for `i < round(duration · fps)`.
    pub fn num_frames(&self) -> usize {
        (self.duration * self.fps).round() as usize
    }
}

/// Seeded gait and placement parameters shared by every kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gait {
    /// Metres per second along the facing direction.
    pub speed: f64,
    /// Initial yaw about +y; facing is `(sin ψ, 0, cos ψ)`.
    pub heading: f64,
    pub origin: [f64; 3],
    /// Multiplier on every joint amplitude.
    pub amplitude: f64,
    /// Turning radius for circular and arc paths, signed by direction.
    pub radius: f64,
    pub phase: f64,
}

impl Gait {
    pub fn from_seed(kind: MotionKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_9a17);
        let heading = rng.random_range(0.0..TAU);
        let origin = [rng.random_range(-1.0..1.0), PELVIS_HEIGHT, rng.random_range(-1.0..1.0)];
        let amplitude = rng.random_range(0.85..1.15);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let phase = rng.random_range(0.0..TAU);
        let (speed, radius) = match kind {
            MotionKind::WalkLine => (rng.random_range(1.0..1.4), f64::INFINITY),
            MotionKind::WalkCircle => (rng.random_range(1.0..1.4), sign * rng.random_range(2.0..4.0)),
            MotionKind::RunArc => (rng.random_range(2.6..3.4), sign * rng.random_range(8.0..12.0)),
            _ => (0.0, f64::INFINITY),
        };
        Self { speed, heading, origin, amplitude, radius, phase }
    }
}

/// Joint lookup by name so programs run on any skeleton that shares names.
struct Joints {
    index: Vec<(String, usize)>,
    count: usize,
}

impl Joints {
    fn new(skel: &Skeleton) -> Self {
        Self { index: skel.names.iter().cloned().enumerate().map(|(i, n)| (n, i)).collect(), count: skel.num_joints() }
    }

    fn get(&self, name: &str) -> Option<usize> {
        self.index.iter().find(|(n, _)| n == name).map(|&(_, i)| i)
    }
}

fn rx(a: f64) -> RotationMatrix<f64> {
    RotationMatrix::from_axis_angle([1.0, 0.0, 0.0], a)
}

fn ry(a: f64) -> RotationMatrix<f64> {
    RotationMatrix::from_axis_angle([0.0, 1.0, 0.0], a)
}

fn rz(a: f64) -> RotationMatrix<f64> {
    RotationMatrix::from_axis_angle([0.0, 0.0, 1.0], a)
}

/// Pose builder that silently skips joints the skeleton lacks.
struct PoseBuilder<'a> {
    joints: &'a Joints,
    rots: Vec<RotationMatrix<f64>>,
}

impl<'a> PoseBuilder<'a> {
    fn new(joints: &'a Joints) -> Self {
        Self { joints, rots: vec![RotationMatrix::identity(); joints.count] }
    }

    fn set(&mut self, name: &str, r: RotationMatrix<f64>) {
        if let Some(i) = self.joints.get(name) {
            self.rots[i] = r;
        }
    }

    fn finish(self) -> Pose<f64> {
        Pose { theta: self.rots.iter().map(|r| matrix_to_rot6d(r).expect("orthonormal")).collect() }
    }
}

/// Arms lowered from the rest T-pose to the sides, then swung forward by `swing`.
fn arm(side: f64, lower: f64, swing: f64) -> RotationMatrix<f64> {
    rx(-swing).mul(&rz(-side * lower))
}

/// Elbow flexion bringing the forearm forward.
fn elbow(side: f64, flex: f64) -> RotationMatrix<f64> {
    ry(-side * flex)
}

struct Program {
    kind: MotionKind,
    gait: Gait,
    /// Root state at local time zero.
    start: [f64; 3],
    heading: f64,
    /// Squat cycles per second.
    cycle_rate: f64,
    /// Length of the part, seconds.
    span: f64,
}

impl Program {
    fn heading_at(&self, t: f64) -> f64 {
        match self.kind {
            MotionKind::WalkCircle | MotionKind::RunArc => self.heading + self.gait.speed * t / self.gait.radius,
            _ => self.heading,
        }
    }

    fn root_at(&self, t: f64) -> [f64; 3] {
        let (v, psi0) = (self.gait.speed, self.heading);
        let [x0, y0, z0] = self.start;
        match self.kind {
            MotionKind::WalkLine => [x0 + v * t * psi0.sin(), y0, z0 + v * t * psi0.cos()],
            MotionKind::WalkCircle | MotionKind::RunArc => {
                let r = self.gait.radius;
                let psi = self.heading_at(t);
                [x0 + r * (psi0.cos() - psi.cos()), y0, z0 + r * (psi.sin() - psi0.sin())]
            }
            MotionKind::Squat => {
                let a = self.squat_angle(t);
                [x0, y0 - 0.79 * (1.0 - a.cos()), z0]
            }
            _ => self.start,
        }
    }

    fn squat_angle(&self, t: f64) -> f64 {
        self.gait.amplitude * 0.5 * (1.0 - (TAU * self.cycle_rate * t).cos())
    }

    fn pose_at(&self, t: f64, joints: &Joints) -> Pose<f64> {
        let amp = self.gait.amplitude;
        let mut p = PoseBuilder::new(joints);
        p.set("pelvis", ry(self.heading_at(t)));
        let rest_arms = 1.25;
        match self.kind {
            MotionKind::WalkLine | MotionKind::WalkCircle | MotionKind::RunArc => {
                let running = self.kind == MotionKind::RunArc;
                let stride = if running { RUN_STRIDE } else { WALK_STRIDE };
                let phi = TAU * self.gait.speed / stride * t + self.gait.phase;
                let (hip, knee, arm_swing, elbow_bend) =
                    if running { (0.65, 0.55, 0.5, 1.3) } else { (0.4, 0.3, 0.3, 0.25) };
                for (name, side, offset) in [("left", 1.0, 0.0), ("right", -1.0, PI)] {
                    let s = (phi + offset).sin();
                    let c = (phi + offset).cos();
                    p.set(&format!("{name}_hip"), rx(-amp * hip * s));
                    p.set(&format!("{name}_knee"), rx(amp * knee * (1.0 + c)));
                    p.set(&format!("{name}_ankle"), rx(-0.15 * amp * c));
                    p.set(&format!("{name}_shoulder"), arm(side, rest_arms, -amp * arm_swing * s));
                    p.set(&format!("{name}_elbow"), elbow(side, elbow_bend + 0.1 * amp * c));
                }
                p.set("spine1", ry(0.06 * amp * phi.sin()).mul(&rx(if running { 0.15 } else { 0.03 })));
                p.set("spine3", ry(-0.05 * amp * phi.sin()));
            }
            MotionKind::WaveArm => {
                let w = TAU * 2.0 * t + self.gait.phase;
                // The arm rises from and returns to rest at the ends of the part.
                let e = smoothstep(t / WAVE_RAISE) * smoothstep((self.span - t) / WAVE_RAISE);
                p.set("left_shoulder", arm(1.0, rest_arms, 0.0));
                p.set("left_elbow", elbow(1.0, 0.1));
                p.set("right_shoulder", rz(rest_arms + e * (0.3 - rest_arms - 0.2 * amp * w.sin())));
                p.set("right_elbow", rz(e * (-1.3 - 0.6 * amp * w.sin())).mul(&elbow(-1.0, (1.0 - e) * 0.1)));
                p.set("right_wrist", rz(-0.2 * e * amp * w.sin()));
                p.set("neck", ry(-0.2 * e * amp));
                p.set("spine3", rz(0.05 * e * amp * w.sin()));
            }
            MotionKind::Squat => {
                let a = self.squat_angle(t);
                for (name, side) in [("left", 1.0), ("right", -1.0)] {
                    p.set(&format!("{name}_hip"), rx(-a));
                    p.set(&format!("{name}_knee"), rx(2.0 * a));
                    p.set(&format!("{name}_ankle"), rx(-a));
                    p.set(&format!("{name}_shoulder"), arm(side, rest_arms - 0.2 * a, 0.9 * a));
                    p.set(&format!("{name}_elbow"), elbow(side, 0.2));
                }
                p.set("spine1", rx(0.35 * a));
                p.set("neck", rx(-0.25 * a));
            }
            MotionKind::Idle => {
                for (name, side) in [("left", 1.0), ("right", -1.0)] {
                    p.set(&format!("{name}_shoulder"), arm(side, rest_arms, 0.0));
                    p.set(&format!("{name}_elbow"), elbow(side, 0.1));
                }
            }
            MotionKind::Composite => unreachable!("composites are split into parts"),
        }
        p.finish()
    }
}

fn composite_parts(spec: &MotionSpec) -> Vec<MotionKind> {
    if !spec.parts.is_empty() {
        return spec.parts.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xc0_4705_17e);
    let count = rng.random_range(2..=3);
    let mut parts: Vec<MotionKind> = Vec::with_capacity(count);
    while parts.len() < count {
        let k = MotionKind::PARTS[rng.random_range(0..MotionKind::PARTS.len())];
        if parts.last() != Some(&k) {
            parts.push(k);
        }
    }
    parts
}

/// Deterministic synthetic motion for a spec.
pub fn generate(spec: &MotionSpec, skel: &Skeleton) -> Result<FrameSequence<f64>> {
    spec.validate()?;
    skel.validate()?;
    if spec.shape.beta.len() != skel.shape_dims() {
        return Err(Error::LengthMismatch(format!(
            "shape has {} coefficients, skeleton expects {}",
            spec.shape.beta.len(),
            skel.shape_dims()
        )));
    }
    let joints = Joints::new(skel);
    let n = spec.num_frames();
    let timestamps: Vec<f64> = (0..n).map(|i| i as f64 / spec.fps).collect();

    let gait = Gait::from_seed(spec.kind, spec.seed);
    let programs: Vec<(f64, Program)> = if spec.kind == MotionKind::Composite {
        let parts = composite_parts(spec);
        let span = spec.duration / parts.len() as f64;
        let mut out: Vec<(f64, Program)> = Vec::new();
        let (mut start, mut heading) = (gait.origin, gait.heading);
        for (k, &kind) in parts.iter().enumerate() {
            let boundary = k as f64 * span;
            if let Some((prev_at, prev)) = out.last() {
                start = prev.root_at(boundary - prev_at);
                heading = prev.heading_at(boundary - prev_at);
                if prev.kind == MotionKind::Squat {
                    start[1] = prev.start[1];
                }
            }
            let g = Gait::from_seed(kind, spec.seed.wrapping_add(k as u64 + 1));
            // Whole squat cycles so the part ends standing.
            let cycle_rate = (span * SQUAT_RATE).round().max(1.0) / span;
            out.push((boundary, Program { kind, gait: g, start, heading, cycle_rate, span }));
        }
        out
    } else {
        vec![(0.0, Program { kind: spec.kind, gait, start: gait.origin, heading: gait.heading, cycle_rate: SQUAT_RATE, span: spec.duration })]
    };

    let half = TRANSITION_SECONDS / 2.0;
    // Root path offsets that keep each part continuous with the blended path before it.
    let mut offsets = vec![[0.0; 3]; programs.len()];
    for k in 1..programs.len() {
        let b = programs[k].0;
        let (at_a, pa) = &programs[k - 1];
        let entry = add3(pa.root_at(b - half - at_a), offsets[k - 1]);
        let exit = blended_root(&programs[k - 1], &programs[k], b, entry, b + half);
        let (at_b, pb) = &programs[k];
        offsets[k] = sub3(exit, pb.root_at(b + half - at_b));
    }

    let mut poses = Vec::with_capacity(n);
    let mut displacements = Vec::with_capacity(n);
    for &t in &timestamps {
        let k = programs.iter().rposition(|(at, _)| *at <= t).unwrap_or(0);
        let (at, prog) = &programs[k];
        let mut pose = prog.pose_at(t - at, &joints);
        let mut gamma = add3(prog.root_at(t - at), offsets[k]);
        let blend = if k > 0 && t - at < half {
            Some(k - 1)
        } else if k + 1 < programs.len() && programs[k + 1].0 - t < half {
            Some(k)
        } else {
            None
        };
        if let Some(a) = blend {
            let b = programs[a + 1].0;
            let w = blend_weight(t, b);
            let (at_a, pa) = &programs[a];
            let (at_b, pb) = &programs[a + 1];
            let pose_a = pa.pose_at(t - at_a, &joints);
            let pose_b = pb.pose_at(t - at_b, &joints);
            let theta = pose_a
                .theta
                .iter()
                .zip(&pose_b.theta)
                .map(|(x, y)| {
                    let raw = blend_rot6d(&[1.0 - w, w], &[*x, *y])?;
                    matrix_to_rot6d(&rot6d_to_matrix(&raw)?)
                })
                .collect::<Result<Vec<Rot6D<f64>>>>()?;
            pose = Pose { theta };
            let entry = add3(pa.root_at(b - half - at_a), offsets[a]);
            gamma = blended_root(&programs[a], &programs[a + 1], b, entry, t);
        }
        poses.push(pose);
        displacements.push(gamma);
    }
    Ok(FrameSequence { timestamps, poses, displacements, shape: spec.shape.clone() })
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Weight of the later part inside the window centred on boundary `b`.
fn blend_weight(t: f64, b: f64) -> f64 {
    (0.5 + (t - b) / TRANSITION_SECONDS).clamp(0.0, 1.0)
}

/// Root position at `t` inside the window around boundary `b`, integrating the
/// weight-blended velocities of both parts from the window entry.
fn blended_root(a: &(f64, Program), b: &(f64, Program), boundary: f64, entry: [f64; 3], t: f64) -> [f64; 3] {
    let from = boundary - TRANSITION_SECONDS / 2.0;
    let steps = ((t - from) / 1e-3).ceil().max(1.0) as usize;
    let h = (t - from) / steps as f64;
    let mut pos = entry;
    for i in 0..steps {
        let (s0, s1) = (from + i as f64 * h, from + (i + 1) as f64 * h);
        let w = blend_weight(0.5 * (s0 + s1), boundary);
        let da = sub3(a.1.root_at(s1 - a.0), a.1.root_at(s0 - a.0));
        let db = sub3(b.1.root_at(s1 - b.0), b.1.root_at(s0 - b.0));
        for k in 0..3 {
            pos[k] += (1.0 - w) * da[k] + w * db[k];
        }
    }
    pos
}

/// A seeded body shape with coefficients in `[-1.5, 1.5]`.
pub fn random_shape(dims: usize, rng: &mut impl Rng) -> BodyShape<f64> {
    BodyShape::new((0..dims).map(|_| rng.random_range(-1.5..1.5)).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MotionFile {
    format_version: u32,
    skeleton_ref: String,
    beta: Vec<f64>,
    frames: Vec<FrameRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    provenance: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FrameRecord {
    t: f64,
    theta: Vec<[f64; 6]>,
    gamma: [f64; 3],
}

/// Name used in motion files for the built-in 20-joint body.
pub const DEFAULT_SKELETON_REF: &str = "default";

/// Resolves a `skeleton_ref`: the built-in body or a skeleton JSON path relative to `base`.
pub fn resolve_skeleton(skeleton_ref: &str, base: Option<&Path>) -> Result<Skeleton> {
    if skeleton_ref == DEFAULT_SKELETON_REF {
        return Ok(Skeleton::default_body());
    }
    let path = match base {
        Some(dir) => dir.join(skeleton_ref),
        None => skeleton_ref.into(),
    };
    Skeleton::load(path)
}

/// Writes a motion file; `provenance` lines are stored alongside the frames.
pub fn save_motion(path: impl AsRef<Path>, seq: &FrameSequence<f64>, skeleton_ref: &str, provenance: &[String]) -> Result<()> {
    let path = path.as_ref();
    let file = MotionFile {
        format_version: MOTION_FORMAT_VERSION,
        skeleton_ref: skeleton_ref.to_string(),
        beta: seq.shape.beta.clone(),
        frames: seq
            .timestamps
            .iter()
            .zip(&seq.poses)
            .zip(&seq.displacements)
            .map(|((&t, pose), &gamma)| FrameRecord { t, theta: pose.theta.iter().map(Rot6D::to_array).collect(), gamma })
            .collect(),
        provenance: provenance.to_vec(),
    };
    let text = serde_json::to_string_pretty(&file).expect("motion serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads a motion and checks it against its referenced skeleton.
pub fn load_motion(path: impl AsRef<Path>) -> Result<FrameSequence<f64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::json(&name, e))?;
    let version = raw.get("format_version").and_then(serde_json::Value::as_u64);
    if version != Some(u64::from(MOTION_FORMAT_VERSION)) {
        return Err(Error::SchemaVersionMismatch(format!(
            "motion format {}, expected {MOTION_FORMAT_VERSION}",
            version.map_or("missing".to_string(), |v| v.to_string())
        )));
    }
    // Parse the text again so diagnostics carry line and column.
    let file: MotionFile = serde_json::from_str(&text).map_err(|e| Error::json(&name, e))?;
    let skel = resolve_skeleton(&file.skeleton_ref, path.parent())?;
    let joints = skel.num_joints();
    if let Some((i, f)) = file.frames.iter().enumerate().find(|(_, f)| f.theta.len() != joints) {
        return Err(Error::SchemaVersionMismatch(format!(
            "frame {i} has {} joints but skeleton `{}` has {joints}",
            f.theta.len(),
            file.skeleton_ref
        )));
    }
    if file.beta.len() != skel.shape_dims() {
        return Err(Error::SchemaVersionMismatch(format!(
            "beta has {} coefficients but skeleton `{}` has {}",
            file.beta.len(),
            file.skeleton_ref,
            skel.shape_dims()
        )));
    }
    let seq = FrameSequence {
        timestamps: file.frames.iter().map(|f| f.t).collect(),
        poses: file.frames.iter().map(|f| Pose { theta: f.theta.iter().map(|r| Rot6D::from_slice(r)).collect() }).collect(),
        displacements: file.frames.iter().map(|f| f.gamma).collect(),
        shape: BodyShape::new(file.beta),
    };
    seq.validate()?;
    Ok(seq)
}

fn shape_key(shape: &BodyShape<f64>) -> Vec<u64> {
    shape.beta.iter().map(|b| b.to_bits()).collect()
}

/// Holds out whole motion kinds and whole body shapes: one kind per six and one
/// shape per four go to validation together with every spec that uses them.
pub fn make_splits(specs: &[MotionSpec], rng: &mut impl Rng) -> Result<(Vec<MotionSpec>, Vec<MotionSpec>)> {
    let kinds: Vec<MotionKind> = specs.iter().map(|s| s.kind).collect::<BTreeSet<_>>().into_iter().collect();
    let shapes: Vec<Vec<u64>> = specs.iter().map(|s| shape_key(&s.shape)).collect::<BTreeSet<_>>().into_iter().collect();
    if kinds.len() < 2 || shapes.len() < 2 {
        return Err(Error::InsufficientDiversity(format!(
            "need at least 2 motion kinds and 2 body shapes, got {} and {}",
            kinds.len(),
            shapes.len()
        )));
    }
    let held_kinds = kinds.len().div_ceil(6).min(kinds.len() - 1);
    let held_shapes = shapes.len().div_ceil(4).min(shapes.len() - 1);
    let mut kinds = kinds;
    let mut shapes = shapes;
    kinds.shuffle(rng);
    shapes.shuffle(rng);
    let kinds: BTreeSet<_> = kinds.into_iter().take(held_kinds).collect();
    let shapes: BTreeSet<_> = shapes.into_iter().take(held_shapes).collect();
    let (val, train): (Vec<_>, Vec<_>) =
        specs.iter().cloned().partition(|s| kinds.contains(&s.kind) || shapes.contains(&shape_key(&s.shape)));
    if train.is_empty() {
        return Err(Error::InsufficientDiversity("every spec uses a held-out kind or shape".into()));
    }
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::forward_kinematics;
    use crate::scalar::norm3;

    fn spec(kind: MotionKind, seed: u64) -> MotionSpec {
        MotionSpec::new(kind, 4.0, 30.0, BodyShape::zeros(8), seed)
    }

    #[test]
    fn idle_is_static() {
        let seq = generate(&spec(MotionKind::Idle, 3), &Skeleton::default_body()).unwrap();
        assert_eq!(seq.len(), 120);
        assert!(seq.poses.iter().all(|p| *p == seq.poses[0]));
        assert!(seq.displacements.iter().all(|g| *g == seq.displacements[0]));
    }

    #[test]
    fn walk_line_moves_at_gait_speed_along_facing() {
        for seed in 0..5 {
            let s = spec(MotionKind::WalkLine, seed);
            let seq = generate(&s, &Skeleton::default_body()).unwrap();
            let gait = Gait::from_seed(s.kind, s.seed);
            let root = rot6d_to_matrix(&seq.poses[0].theta[0]).unwrap();
            let facing = root.column(2);
            let d = sub3(*seq.displacements.last().unwrap(), seq.displacements[0]);
            let along = d[0] * facing[0] + d[1] * facing[1] + d[2] * facing[2];
            let expect = gait.speed * seq.duration();
            assert!((along - expect).abs() < 0.01 * expect, "{along} vs {expect}");
            assert!((norm3(d) - along).abs() < 1e-9);
        }
    }

    #[test]
    fn generation_is_deterministic_and_valid() {
        let skel = Skeleton::default_body();
        for kind in MotionKind::ALL {
            let a = generate(&spec(kind, 11), &skel).unwrap();
            let b = generate(&spec(kind, 11), &skel).unwrap();
            assert_eq!(a, b);
            a.validate().unwrap();
            for pose in &a.poses {
                for r in &pose.theta {
                    let m = rot6d_to_matrix(r).unwrap();
                    assert!(m.orthogonality_error() < 1e-9);
                }
            }
        }
    }

    fn joint_jumps(seq: &FrameSequence<f64>, skel: &Skeleton) -> Vec<f64> {
        let positions: Vec<_> = seq
            .poses
            .iter()
            .zip(&seq.displacements)
            .map(|(p, &g)| forward_kinematics(p, g, &seq.shape, skel).unwrap())
            .collect();
        positions
            .windows(2)
            .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| norm3(sub3(*a, *b))).fold(0.0, f64::max))
            .collect()
    }

    #[test]
    fn composite_transitions_are_smooth() {
        let skel = Skeleton::default_body();
        for seed in 0..300 {
            let s = MotionSpec::new(MotionKind::Composite, 4.0 + (seed % 5) as f64, 30.0, BodyShape::zeros(8), seed);
            let parts = composite_parts(&s);
            let seq = generate(&s, &skel).unwrap();
            let jumps = joint_jumps(&seq, &skel);
            let span = s.duration / parts.len() as f64;
            let near = |t: f64| (1..parts.len()).any(|k| (t - k as f64 * span).abs() <= TRANSITION_SECONDS / 2.0 + 1.0 / s.fps);
            let (mut inside, mut across) = (0.0f64, 0.0f64);
            for (i, &j) in jumps.iter().enumerate() {
                if near(seq.timestamps[i]) {
                    across = across.max(j);
                } else {
                    inside = inside.max(j);
                }
            }
            assert!(across < 2.0 * inside, "seed {seed} {parts:?}: {across} vs {inside}");
        }
    }

    #[test]
    fn motion_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("walk.json");
        let seq = generate(&spec(MotionKind::Composite, 2), &Skeleton::default_body()).unwrap();
        save_motion(&path, &seq, DEFAULT_SKELETON_REF, &[]).unwrap();
        let back = load_motion(&path).unwrap();
        assert_eq!(back.len(), seq.len());
        for (a, b) in back.poses.iter().zip(&seq.poses) {
            for (x, y) in a.flatten().iter().zip(b.flatten()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
        for (a, b) in back.timestamps.iter().zip(&seq.timestamps) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn motion_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(
            &path,
            r#"{"format_version": 1, "skeleton_ref": "default", "beta": [0,0,0,0,0,0,0,0],
"frames": [{"t": 0.0, "theta": [[1,0,0,0,1,0]]}]}"#,
        )
        .unwrap();
        match load_motion(&path) {
            Err(Error::Parse { message, line, .. }) => {
                assert!(message.contains("gamma"), "{message}");
                assert_eq!(line, 2);
            }
            other => panic!("expected a parse error, got {other:?}"),
        }

        let chain = Skeleton::chain(3, 8);
        chain.save(dir.path().join("chain.json")).unwrap();
        let seq = generate(&spec(MotionKind::Idle, 1), &Skeleton::default_body()).unwrap();
        save_motion(&path, &seq, "chain.json", &[]).unwrap();
        assert!(matches!(load_motion(&path), Err(Error::SchemaVersionMismatch(_))));

        save_motion(&path, &seq, DEFAULT_SKELETON_REF, &[]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap().replace("\"format_version\": 1", "\"format_version\": 2");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_motion(&path), Err(Error::SchemaVersionMismatch(_))));
    }

    #[test]
    fn splits_hold_out_kinds_and_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let shapes: Vec<_> = (0..8).map(|_| random_shape(8, &mut rng)).collect();
        let kinds = &MotionKind::ALL[..6];
        let specs: Vec<_> = kinds
            .iter()
            .flat_map(|&k| shapes.iter().enumerate().map(move |(i, s)| MotionSpec::new(k, 6.0, 30.0, s.clone(), i as u64)))
            .collect();
        let (train, val) = make_splits(&specs, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(train.len() + val.len(), specs.len());
        assert_eq!(train.len(), 5 * 6);
        let train_kinds: BTreeSet<_> = train.iter().map(|s| s.kind).collect();
        let train_shapes: BTreeSet<_> = train.iter().map(|s| shape_key(&s.shape)).collect();
        let held_kinds: BTreeSet<_> = val.iter().map(|s| s.kind).filter(|k| !train_kinds.contains(k)).collect();
        let held_shapes: BTreeSet<_> =
            val.iter().map(|s| shape_key(&s.shape)).filter(|k| !train_shapes.contains(k)).collect();
        assert_eq!((held_kinds.len(), held_shapes.len()), (1, 2));
        assert!(train.iter().all(|t| !val.contains(t)));
        let again = make_splits(&specs, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(again.1, val);

        let one_kind: Vec<_> = specs.iter().filter(|s| s.kind == MotionKind::Idle).cloned().collect();
        assert!(matches!(make_splits(&one_kind, &mut rng), Err(Error::InsufficientDiversity(_))));
    }
}
