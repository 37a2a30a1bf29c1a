//! Simplified parametric body: a 20-joint kinematic tree with linear bone-length
//! shape coefficients and a capsule-shell surface.
//!
//! [`BodyModel`] is the adapter a real parametric mesh model would implement.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::rotation::{rot6d_to_matrix, Rot6D, RotationMatrix};
use crate::scalar::{add3, cross3, norm3, scale3, Scalar, Vec3};

pub const DEFAULT_SHAPE_DIMS: usize = 8;

/// Golden angle, used to spread shell samples around each bone.
const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub names: Vec<String>,
    /// Parent index per joint, `-1` for the root. Parents precede children.
    pub parents: Vec<i64>,
    /// Bone vector from the parent in the rest pose, metres.
    pub rest_offsets: Vec<[f64; 3]>,
    /// `J × shape_dims` relative bone-length sensitivities.
    pub shape_sensitivity: Vec<Vec<f64>>,
    /// Capsule radius of the bone ending at each joint, metres.
    #[serde(default)]
    pub radii: Vec<f64>,
}

const DEFAULT_JOINTS: [(&str, i64, [f64; 3], f64); 20] = [
    ("pelvis", -1, [0.0, 0.0, 0.0], 0.0),
    ("left_hip", 0, [0.06, -0.09, 0.0], 0.08),
    ("right_hip", 0, [-0.06, -0.09, 0.0], 0.08),
    ("spine1", 0, [0.0, 0.11, 0.0], 0.10),
    ("left_knee", 1, [0.04, -0.38, 0.0], 0.07),
    ("right_knee", 2, [-0.04, -0.38, 0.0], 0.07),
    ("spine2", 3, [0.0, 0.13, 0.0], 0.11),
    ("left_ankle", 4, [0.0, -0.40, -0.04], 0.05),
    ("right_ankle", 5, [0.0, -0.40, -0.04], 0.05),
    ("spine3", 6, [0.0, 0.05, 0.02], 0.11),
    ("neck", 9, [0.0, 0.21, -0.03], 0.06),
    ("left_collar", 9, [0.07, 0.12, -0.02], 0.05),
    ("right_collar", 9, [-0.07, 0.12, -0.02], 0.05),
    ("head", 10, [0.0, 0.09, 0.05], 0.09),
    ("left_shoulder", 11, [0.11, 0.04, -0.01], 0.05),
    ("right_shoulder", 12, [-0.11, 0.04, -0.01], 0.05),
    ("left_elbow", 14, [0.26, -0.01, -0.02], 0.045),
    ("right_elbow", 15, [-0.26, -0.01, -0.02], 0.045),
    ("left_wrist", 16, [0.25, 0.01, 0.0], 0.035),
    ("right_wrist", 17, [-0.25, 0.01, 0.0], 0.035),
];

// Shape coefficient groups of the default skeleton:
// 0 overall size, 1 leg length, 2 arm length, 3 torso length,
// 4 shoulder/hip width, 5 neck and head, 6 distal limbs, 7 proximal limbs.
fn default_sensitivity(name: &str) -> [f64; DEFAULT_SHAPE_DIMS] {
    let mut s = [0.0; DEFAULT_SHAPE_DIMS];
    if name != "pelvis" {
        s[0] = 0.05;
    }
    let base = name.trim_start_matches("left_").trim_start_matches("right_");
    match base {
        "knee" => {
            s[1] = 0.08;
            s[7] = 0.04;
        }
        "ankle" => {
            s[1] = 0.08;
            s[6] = 0.06;
        }
        "elbow" => {
            s[2] = 0.08;
            s[7] = 0.04;
        }
        "wrist" => {
            s[2] = 0.08;
            s[6] = 0.06;
        }
        "spine1" | "spine2" | "spine3" => {
            s[3] = 0.08;
            s[7] = 0.02;
        }
        "neck" => {
            s[3] = 0.08;
            s[5] = 0.05;
        }
        "head" => s[5] = 0.1,
        "hip" | "collar" | "shoulder" => s[4] = 0.1,
        _ => {}
    }
    s
}

impl Default for Skeleton {
    fn default() -> Self {
        Self::default_body()
    }
}

impl Skeleton {
    /// The 20-joint body (a parametric body without its two foot joints).
    pub fn default_body() -> Self {
        Self {
            names: DEFAULT_JOINTS.iter().map(|j| j.0.to_string()).collect(),
            parents: DEFAULT_JOINTS.iter().map(|j| j.1).collect(),
            rest_offsets: DEFAULT_JOINTS.iter().map(|j| j.2).collect(),
            shape_sensitivity: DEFAULT_JOINTS.iter().map(|j| default_sensitivity(j.0).to_vec()).collect(),
            radii: DEFAULT_JOINTS.iter().map(|j| j.3).collect(),
        }
    }

    /// A straight chain of `joints` joints along +x with 0.3 m bones.
    pub fn chain(joints: usize, shape_dims: usize) -> Self {
        Self {
            names: (0..joints).map(|j| format!("joint{j}")).collect(),
            parents: (0..joints as i64).map(|j| j - 1).collect(),
            rest_offsets: (0..joints).map(|j| if j == 0 { [0.0; 3] } else { [0.3, 0.02 * j as f64, 0.0] }).collect(),
            shape_sensitivity: (0..joints)
                .map(|j| (0..shape_dims).map(|k| if j == 0 { 0.0 } else { 0.01 * ((j + k) % 5) as f64 }).collect())
                .collect(),
            radii: (0..joints).map(|j| if j == 0 { 0.0 } else { 0.04 }).collect(),
        }
    }

    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    pub fn shape_dims(&self) -> usize {
        self.shape_sensitivity.first().map_or(0, Vec::len)
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        usize::try_from(self.parents[j]).ok()
    }

    pub fn radius(&self, j: usize) -> f64 {
        self.radii.get(j).copied().unwrap_or(0.05)
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.parents.len();
        let bad = |m: String| Err(Error::SchemaVersionMismatch(m));
        if j == 0 {
            return bad("skeleton has no joints".into());
        }
        if self.names.len() != j || self.rest_offsets.len() != j || self.shape_sensitivity.len() != j {
            return bad(format!(
                "skeleton arrays disagree: {} parents, {} names, {} offsets, {} sensitivity rows",
                j,
                self.names.len(),
                self.rest_offsets.len(),
                self.shape_sensitivity.len()
            ));
        }
        if !self.radii.is_empty() && self.radii.len() != j {
            return bad(format!("{} radii for {j} joints", self.radii.len()));
        }
        if self.parents[0] != -1 {
            return bad("joint 0 must be the root".into());
        }
        if self.rest_offsets[0] != [0.0; 3] {
            return bad("root rest offset must be zero".into());
        }
        for (i, &p) in self.parents.iter().enumerate().skip(1) {
            if p < 0 || p as usize >= i {
                return bad(format!("joint {i} has parent {p}; parents must precede children"));
            }
        }
        let dims = self.shape_dims();
        if self.shape_sensitivity.iter().any(|r| r.len() != dims) {
            return bad("ragged shape sensitivity table".into());
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let skel: Self = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        skel.validate()?;
        Ok(skel)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("skeleton serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Two unit vectors orthogonal to the rest bone ending at joint `j`.
    fn radial_frame(&self, j: usize) -> ([f64; 3], [f64; 3]) {
        let d = self.rest_offsets[j];
        let n = norm3(d);
        let dir = if n > 1e-12 { scale3(d, 1.0 / n) } else { [0.0, 1.0, 0.0] };
        let helper = if dir[1].abs() < 0.9 { [0.0, 1.0, 0.0] } else { [1.0, 0.0, 0.0] };
        let u = cross3(dir, helper);
        let u = scale3(u, 1.0 / norm3(u));
        (u, cross3(dir, u))
    }

    /// Bone-local sample vectors `(fraction, radial offset)` for the bone ending at `j`.
    fn shell_samples(&self, j: usize, samples_per_bone: usize) -> Vec<(f64, [f64; 3])> {
        let (u, w) = self.radial_frame(j);
        let r = self.radius(j);
        (0..samples_per_bone)
            .map(|s| {
                let f = (s as f64 + 0.5) / samples_per_bone as f64;
                let phi = s as f64 * GOLDEN_ANGLE + j as f64;
                let radial = add3(scale3(u, r * phi.cos()), scale3(w, r * phi.sin()));
                (f, radial)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyShape<T> {
    pub beta: Vec<T>,
}

impl<T: Scalar> BodyShape<T> {
    pub fn zeros(dims: usize) -> Self {
        Self { beta: vec![T::zero(); dims] }
    }

    pub fn new(beta: Vec<T>) -> Self {
        Self { beta }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose<T> {
    pub theta: Vec<Rot6D<T>>,
}

impl<T: Scalar> Pose<T> {
    pub fn identity(joints: usize) -> Self {
        Self { theta: vec![Rot6D::identity(); joints] }
    }

    pub fn flatten(&self) -> Vec<T> {
        self.theta.iter().flat_map(|r| r.to_array()).collect()
    }

    pub fn from_flat(v: &[T]) -> Self {
        Self { theta: v.chunks_exact(6).map(Rot6D::from_slice).collect() }
    }
}

pub type RootDisplacement<T> = Vec3<T>;

pub fn shaped_offsets<T: Scalar>(skel: &Skeleton, beta: &BodyShape<T>) -> Vec<Vec3<T>> {
    skel.rest_offsets
        .iter()
        .zip(&skel.shape_sensitivity)
        .map(|(off, sens)| {
            let k = T::one() + sens.iter().zip(&beta.beta).map(|(&s, &b)| T::lit(s) * b).sum::<T>();
            [T::lit(off[0]) * k, T::lit(off[1]) * k, T::lit(off[2]) * k]
        })
        .collect()
}

/// Global joint rotations and positions.
pub fn global_transforms<T: Scalar>(
    pose: &Pose<T>,
    gamma: RootDisplacement<T>,
    beta: &BodyShape<T>,
    skel: &Skeleton,
) -> Result<(Vec<RotationMatrix<T>>, Vec<Vec3<T>>)> {
    let j = skel.num_joints();
    if pose.theta.len() != j {
        return Err(Error::LengthMismatch(format!("pose has {} joints, skeleton {j}", pose.theta.len())));
    }
    let offsets = shaped_offsets(skel, beta);
    let mut rots: Vec<RotationMatrix<T>> = Vec::with_capacity(j);
    let mut pos: Vec<Vec3<T>> = Vec::with_capacity(j);
    for i in 0..j {
        let local = rot6d_to_matrix(&pose.theta[i])?;
        match skel.parent(i) {
            None => {
                rots.push(local);
                pos.push(gamma);
            }
            Some(p) => {
                let rp = rots[p];
                pos.push(add3(pos[p], rp.apply(offsets[i])));
                rots.push(rp.mul(&local));
            }
        }
    }
    Ok((rots, pos))
}

pub fn forward_kinematics<T: Scalar>(
    pose: &Pose<T>,
    gamma: RootDisplacement<T>,
    beta: &BodyShape<T>,
    skel: &Skeleton,
) -> Result<Vec<Vec3<T>>> {
    Ok(global_transforms(pose, gamma, beta, skel)?.1)
}

/// Capsule-shell samples, `samples_per_bone` per non-root joint.
pub fn surface_points<T: Scalar>(
    pose: &Pose<T>,
    gamma: RootDisplacement<T>,
    beta: &BodyShape<T>,
    skel: &Skeleton,
    samples_per_bone: usize,
) -> Result<Vec<Vec3<T>>> {
    if samples_per_bone == 0 {
        return Err(Error::InvalidConfig("samples_per_bone must be at least 1".into()));
    }
    let (rots, pos) = global_transforms(pose, gamma, beta, skel)?;
    let offsets = shaped_offsets(skel, beta);
    let mut out = Vec::with_capacity((skel.num_joints() - 1) * samples_per_bone);
    for j in 1..skel.num_joints() {
        let p = skel.parent(j).expect("non-root joint has a parent");
        for (f, radial) in skel.shell_samples(j, samples_per_bone) {
            let local = add3(scale3(offsets[j], T::lit(f)), radial.map(T::lit));
            out.push(add3(pos[p], rots[p].apply(local)));
        }
    }
    Ok(out)
}

/// Mean per-joint position error in millimetres for positions given in metres.
pub fn mpjpe<T: Scalar>(predicted: &[Vec<Vec3<T>>], reference: &[Vec<Vec3<T>>]) -> Result<T> {
    if predicted.len() != reference.len() {
        return Err(Error::LengthMismatch(format!("{} vs {} frames", predicted.len(), reference.len())));
    }
    if predicted.is_empty() {
        return Err(Error::EmptyInput("mpjpe of zero frames".into()));
    }
    let mut total = T::zero();
    let mut count = 0usize;
    for (a, b) in predicted.iter().zip(reference) {
        if a.len() != b.len() {
            return Err(Error::LengthMismatch(format!("{} vs {} joints", a.len(), b.len())));
        }
        for (p, q) in a.iter().zip(b) {
            total += norm3([p[0] - q[0], p[1] - q[1], p[2] - q[2]]);
            count += 1;
        }
    }
    Ok(total / T::lit(count as f64) * T::lit(1000.0))
}

/// Adapter between decoded body parameters and 3D geometry.
///
/// Graph methods take `theta` as `n × 6J`, `gamma` as `n × 3` (metres) and
/// `beta` as `1 × shape_dims`, one row per frame.
pub trait BodyModel<T: Scalar> {
    fn num_joints(&self) -> usize;
    fn shape_dims(&self) -> usize;
    fn joints(&self, pose: &Pose<T>, gamma: Vec3<T>, beta: &BodyShape<T>) -> Result<Vec<Vec3<T>>>;
    fn surface(&self, pose: &Pose<T>, gamma: Vec3<T>, beta: &BodyShape<T>) -> Result<Vec<Vec3<T>>>;
    /// `n × 3J` joint positions.
    fn joints_graph(&self, g: &mut Graph<T>, theta: Var, gamma: Var, beta: Var) -> Var;
    /// `n × 3P` surface points.
    fn surface_graph(&self, g: &mut Graph<T>, theta: Var, gamma: Var, beta: Var) -> Var;
}

/// The kinematic capsule body behind [`BodyModel`].
#[derive(Debug, Clone)]
pub struct KinematicBody {
    pub skeleton: Skeleton,
    pub samples_per_bone: usize,
}

struct FkGraph {
    rots: Vec<Var>,
    pos: Vec<Var>,
    offsets: Vec<Var>,
}

impl KinematicBody {
    pub fn new(skeleton: Skeleton, samples_per_bone: usize) -> Self {
        Self { skeleton, samples_per_bone: samples_per_bone.max(1) }
    }

    pub fn num_surface_points(&self) -> usize {
        (self.skeleton.num_joints() - 1) * self.samples_per_bone
    }

    fn offsets_graph<T: Scalar>(&self, g: &mut Graph<T>, beta: Var) -> Vec<Var> {
        let skel = &self.skeleton;
        let (jn, dims) = (skel.num_joints(), skel.shape_dims());
        let sens_t = Tensor::new(
            dims,
            jn,
            (0..dims).flat_map(|k| skel.shape_sensitivity.iter().map(move |r| T::lit(r[k]))).collect(),
        );
        let sens_t = g.constant(sens_t);
        let lin = g.matmul(beta, sens_t);
        let scales = g.add_scalar(lin, T::one());
        (0..jn)
            .map(|j| {
                let rest = g.constant(Tensor::row(skel.rest_offsets[j].iter().map(|&x| T::lit(x)).collect()));
                let s = g.slice_cols(scales, j, 1);
                g.mul_col(rest, s)
            })
            .collect()
    }

    fn fk_graph<T: Scalar>(&self, g: &mut Graph<T>, theta: Var, gamma: Var, beta: Var) -> FkGraph {
        let skel = &self.skeleton;
        let offsets = self.offsets_graph(g, beta);
        let mut rots = Vec::with_capacity(skel.num_joints());
        let mut pos = Vec::with_capacity(skel.num_joints());
        for j in 0..skel.num_joints() {
            let raw = g.slice_cols(theta, 6 * j, 6);
            let local = g.rot6d_to_mat(raw);
            match skel.parent(j) {
                None => {
                    rots.push(local);
                    pos.push(gamma);
                }
                Some(p) => {
                    let bone = g.mat3_vec(rots[p], offsets[j]);
                    pos.push(g.add(pos[p], bone));
                    rots.push(g.mat3_mul(rots[p], local));
                }
            }
        }
        FkGraph { rots, pos, offsets }
    }
}

impl<T: Scalar> BodyModel<T> for KinematicBody {
    fn num_joints(&self) -> usize {
        self.skeleton.num_joints()
    }

    fn shape_dims(&self) -> usize {
        self.skeleton.shape_dims()
    }

    fn joints(&self, pose: &Pose<T>, gamma: Vec3<T>, beta: &BodyShape<T>) -> Result<Vec<Vec3<T>>> {
        forward_kinematics(pose, gamma, beta, &self.skeleton)
    }

    fn surface(&self, pose: &Pose<T>, gamma: Vec3<T>, beta: &BodyShape<T>) -> Result<Vec<Vec3<T>>> {
        surface_points(pose, gamma, beta, &self.skeleton, self.samples_per_bone)
    }

    fn joints_graph(&self, g: &mut Graph<T>, theta: Var, gamma: Var, beta: Var) -> Var {
        let fk = self.fk_graph(g, theta, gamma, beta);
        g.concat_cols(&fk.pos)
    }

    fn surface_graph(&self, g: &mut Graph<T>, theta: Var, gamma: Var, beta: Var) -> Var {
        let fk = self.fk_graph(g, theta, gamma, beta);
        let skel = &self.skeleton;
        let mut pts = Vec::with_capacity(self.num_surface_points());
        for j in 1..skel.num_joints() {
            let p = skel.parent(j).expect("non-root joint has a parent");
            for (f, radial) in skel.shell_samples(j, self.samples_per_bone) {
                let along = g.scale(fk.offsets[j], T::lit(f));
                let radial = g.constant(Tensor::row(radial.iter().map(|&x| T::lit(x)).collect()));
                let local = g.add(along, radial);
                let world = g.mat3_vec(fk.rots[p], local);
                pts.push(g.add(fk.pos[p], world));
            }
        }
        g.concat_cols(&pts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::{apply_rigid, matrix_to_rot6d, RigidTransform};
    use crate::scalar::sub3;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng, j: usize) -> Pose<f64> {
        Pose {
            theta: (0..j)
                .map(|_| {
                    let axis = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                    matrix_to_rot6d(&RotationMatrix::from_axis_angle(axis, rng.random_range(-1.5..1.5))).unwrap()
                })
                .collect(),
        }
    }

    fn random_beta(rng: &mut ChaCha8Rng, d: usize) -> BodyShape<f64> {
        BodyShape::new((0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
    }

    #[test]
    fn default_skeleton_is_valid() {
        let s = Skeleton::default_body();
        s.validate().unwrap();
        assert_eq!(s.num_joints(), 20);
        assert_eq!(s.shape_dims(), 8);
        for row in &s.shape_sensitivity {
            assert!(row.iter().all(|&x| (0.0..=0.1).contains(&x)));
        }
    }

    #[test]
    fn shape_offsets() {
        let s = Skeleton::default_body();
        let zero = shaped_offsets(&s, &BodyShape::<f64>::zeros(8));
        assert_eq!(zero, s.rest_offsets);

        let mut uniform = s.clone();
        for row in uniform.shape_sensitivity.iter_mut() {
            row.iter_mut().for_each(|x| *x = 0.0);
            row[0] = 0.05;
        }
        let mut beta = BodyShape::<f64>::zeros(8);
        beta.beta[0] = 1.0;
        for (o, r) in shaped_offsets(&uniform, &beta).iter().zip(&s.rest_offsets) {
            assert_abs_diff_eq!(norm3(*o), 1.05 * norm3(*r), epsilon = 1e-12);
        }

        let mut beta = BodyShape::<f64>::zeros(8);
        beta.beta[5] = 2.0;
        let out = shaped_offsets(&s, &beta);
        let knee = 4;
        assert_eq!(out[knee], s.rest_offsets[knee]);
    }

    #[test]
    fn fk_examples() {
        let s = Skeleton::default_body();
        let pose = Pose::identity(20);
        let beta = BodyShape::zeros(8);
        let rest = forward_kinematics(&pose, [0.0; 3], &beta, &s).unwrap();
        for j in 1..20 {
            let p = s.parent(j).unwrap();
            let expected = add3(rest[p], s.rest_offsets[j]);
            for k in 0..3 {
                assert_abs_diff_eq!(rest[j][k], expected[k], epsilon = 1e-15);
            }
        }
        let lifted = forward_kinematics(&pose, [0.0, 0.0, 1.0], &beta, &s).unwrap();
        for (a, b) in lifted.iter().zip(&rest) {
            assert_abs_diff_eq!(a[2], b[2] + 1.0, epsilon = 1e-15);
        }

        let chain = Skeleton {
            names: vec!["a".into(), "b".into()],
            parents: vec![-1, 0],
            rest_offsets: vec![[0.0; 3], [1.0, 0.0, 0.0]],
            shape_sensitivity: vec![vec![0.0], vec![0.0]],
            radii: vec![],
        };
        let turn = matrix_to_rot6d(&RotationMatrix::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2)).unwrap();
        let pose = Pose { theta: vec![turn, Rot6D::identity()] };
        let out = forward_kinematics(&pose, [0.5, 0.5, 0.5], &BodyShape::zeros(1), &chain).unwrap();
        assert_abs_diff_eq!(out[1][0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1][1], 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1][2], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn bone_lengths_ignore_pose_and_rigid_motion_is_equivariant() {
        let s = Skeleton::default_body();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let pose = random_pose(&mut rng, 20);
            let beta = random_beta(&mut rng, 8);
            let gamma = [rng.random_range(-2.0..2.0), 0.3, rng.random_range(-2.0..2.0)];
            let joints = forward_kinematics(&pose, gamma, &beta, &s).unwrap();
            let offs = shaped_offsets(&s, &beta);
            for j in 1..20 {
                let len = norm3(sub3(joints[j], joints[s.parent(j).unwrap()]));
                assert_abs_diff_eq!(len, norm3(offs[j]), epsilon = 1e-9);
            }

            let rho_rot = random_pose(&mut rng, 1).theta[0];
            let rho = RigidTransform::new(rho_rot, [0.4, -1.0, 2.0]);
            let (root, g2) = apply_rigid(&rho, &pose.theta[0], gamma).unwrap();
            let mut moved = pose.clone();
            moved.theta[0] = root;
            let after = forward_kinematics(&moved, g2, &beta, &s).unwrap();
            let r = rot6d_to_matrix(&rho.rotation).unwrap();
            for (a, b) in after.iter().zip(&joints) {
                let expected = add3(r.apply(*b), rho.translation);
                for k in 0..3 {
                    assert_abs_diff_eq!(a[k], expected[k], epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn surface_sampling() {
        let s = Skeleton::default_body();
        let pose = Pose::identity(20);
        let beta = BodyShape::zeros(8);
        assert_eq!(surface_points(&pose, [0.0; 3], &beta, &s, 1).unwrap().len(), 19);
        let a = surface_points(&pose, [0.1, 0.2, 0.3], &beta, &s, 4).unwrap();
        let b = surface_points(&pose, [0.1, 0.2, 0.3], &beta, &s, 4).unwrap();
        assert_eq!(a, b);
        let shifted = surface_points(&pose, [1.1, -0.8, 0.3], &beta, &s, 4).unwrap();
        for (p, q) in shifted.iter().zip(&a) {
            assert_abs_diff_eq!(p[0] - q[0], 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(p[1] - q[1], -1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(p[2] - q[2], 0.0, epsilon = 1e-12);
        }
        assert!(surface_points(&pose, [0.0; 3], &beta, &s, 0).is_err());
    }

    #[test]
    fn mpjpe_examples() {
        let a: Vec<Vec<[f64; 3]>> = vec![vec![[0.1, 0.2, 0.3]; 20]; 4];
        assert_eq!(mpjpe(&a, &a).unwrap(), 0.0);
        let shifted: Vec<Vec<[f64; 3]>> = a.iter().map(|f| f.iter().map(|p| [p[0] + 0.003, p[1], p[2]]).collect()).collect();
        assert_abs_diff_eq!(mpjpe(&shifted, &a).unwrap(), 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(mpjpe(&a, &shifted).unwrap(), 3.0, epsilon = 1e-9);
        let mut one = vec![vec![[0.0; 3]; 20]];
        let zero = one.clone();
        one[0][7] = [0.0, 0.003, 0.0];
        assert_abs_diff_eq!(mpjpe(&one, &zero).unwrap(), 0.15, epsilon = 1e-9);
        assert!(matches!(mpjpe(&one, &[]), Err(Error::LengthMismatch(_))));
    }

    #[test]
    fn graph_matches_plain_and_gradients_match_finite_differences() {
        let s = Skeleton::chain(4, 3);
        let body = KinematicBody::new(s.clone(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frames = 2;
        let poses: Vec<Pose<f64>> = (0..frames).map(|_| random_pose(&mut rng, 4)).collect();
        let gammas: Vec<[f64; 3]> = (0..frames).map(|_| [rng.random_range(-1.0..1.0), 0.1, 0.2]).collect();
        let beta = random_beta(&mut rng, 3);
        let theta_t = Tensor::new(frames, 24, poses.iter().flat_map(|p| p.flatten()).collect());
        let gamma_t = Tensor::new(frames, 3, gammas.iter().flatten().copied().collect());
        let beta_t = Tensor::row(beta.beta.clone());

        let weights: Vec<f64> = (0..frames * 3 * body.num_surface_points()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eval = |th: &Tensor<f64>, ga: &Tensor<f64>, be: &Tensor<f64>, grad: bool| {
            let mut g = Graph::new();
            let (t, gm, b) = (g.variable(th.clone()), g.variable(ga.clone()), g.variable(be.clone()));
            let pts = body.surface_graph(&mut g, t, gm, b);
            let w = g.constant(Tensor::new(frames, weights.len() / frames, weights.clone()));
            let prod = g.mul(pts, w);
            let loss = g.sum_all(prod);
            let value = g.value(loss).item();
            let grads = grad.then(|| {
                let gr = g.backward(loss);
                [t, gm, b].map(|v| gr.get(v).unwrap().clone())
            });
            (value, g.value(pts).clone(), grads)
        };

        let (_, pts, grads) = eval(&theta_t, &gamma_t, &beta_t, true);
        for f in 0..frames {
            let plain = surface_points(&poses[f], gammas[f], &beta, &s, 3).unwrap();
            for (i, p) in plain.iter().enumerate() {
                for k in 0..3 {
                    assert_abs_diff_eq!(pts.at(f, 3 * i + k), p[k], epsilon = 1e-12);
                }
            }
        }
        let grads = grads.unwrap();
        let h = 1e-4;
        let inputs = [theta_t, gamma_t, beta_t];
        for (which, g) in grads.iter().enumerate() {
            for i in 0..g.len() {
                let mut plus = inputs.clone();
                plus[which].data[i] += h;
                let mut minus = inputs.clone();
                minus[which].data[i] -= h;
                let fd = (eval(&plus[0], &plus[1], &plus[2], false).0 - eval(&minus[0], &minus[1], &minus[2], false).0) / (2.0 * h);
                let a = g.data[i];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
                assert!(rel < 1e-3, "input {which} entry {i}: {a} vs {fd}");
            }
        }
    }

    #[test]
    fn skeleton_json_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("skel.json");
        let s = Skeleton::default_body();
        s.save(&path).unwrap();
        assert_eq!(Skeleton::load(&path).unwrap(), s);

        let mut bad = s.clone();
        bad.parents[3] = 7;
        bad.save(&path).unwrap();
        assert!(matches!(Skeleton::load(&path), Err(Error::SchemaVersionMismatch(_))));

        std::fs::write(&path, r#"{"names": [], "parents": []}"#).unwrap();
        assert!(matches!(Skeleton::load(&path), Err(Error::Parse { .. })));
    }
}
