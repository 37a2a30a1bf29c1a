//! Continuous 6D rotations, Gram-Schmidt conversion, blending and rigid transforms.
//!
//! A [`Rot6D`] stores the first two columns of a rotation matrix. It is only
//! orthonormalized when converted with [`rot6d_to_matrix`]; blending stays linear
//! in the raw 6D space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{add3, cross3, dot3, norm3, scale3, sub3, Scalar, Vec3};

const DEGENERATE_EPS: f64 = 1e-8;
const ROTATION_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rot6D<T> {
    pub a: Vec3<T>,
    pub b: Vec3<T>,
}

impl<T: Scalar> Rot6D<T> {
    pub fn new(a: Vec3<T>, b: Vec3<T>) -> Self {
        Self { a, b }
    }

    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self::new([o, z, z], [z, o, z])
    }

    pub fn from_slice(v: &[T]) -> Self {
        Self::new([v[0], v[1], v[2]], [v[3], v[4], v[5]])
    }

    pub fn to_array(&self) -> [T; 6] {
        [self.a[0], self.a[1], self.a[2], self.b[0], self.b[1], self.b[2]]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}

impl<T: Scalar> Default for Rot6D<T> {
    fn default() -> Self {
        Self::identity()
    }
}

/// 3x3 matrix stored row-major, `m[row][col]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationMatrix<T> {
    pub m: [[T; 3]; 3],
}

impl<T: Scalar> RotationMatrix<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self { m: [[o, z, z], [z, o, z], [z, z, o]] }
    }

    pub fn from_columns(c1: Vec3<T>, c2: Vec3<T>, c3: Vec3<T>) -> Self {
        Self {
            m: [
                [c1[0], c2[0], c3[0]],
                [c1[1], c2[1], c3[1]],
                [c1[2], c2[2], c3[2]],
            ],
        }
    }

    pub fn column(&self, c: usize) -> Vec3<T> {
        [self.m[0][c], self.m[1][c], self.m[2][c]]
    }

    /// Rotation of `angle` radians about a unit `axis` (Rodrigues).
    pub fn from_axis_angle(axis: Vec3<T>, angle: T) -> Self {
        let n = norm3(axis);
        let [x, y, z] = if n > T::zero() { scale3(axis, n.recip()) } else { [T::zero(), T::zero(), T::one()] };
        let (s, c) = angle.sin_cos();
        let t = T::one() - c;
        Self {
            m: [
                [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
                [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
                [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
            ],
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = [[T::zero(); 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.m[r][0] * other.m[0][c] + self.m[r][1] * other.m[1][c] + self.m[r][2] * other.m[2][c];
            }
        }
        Self { m: out }
    }

    pub fn apply(&self, v: Vec3<T>) -> Vec3<T> {
        [
            self.m[0][0] * v[0] + self.m[0][1] * v[1] + self.m[0][2] * v[2],
            self.m[1][0] * v[0] + self.m[1][1] * v[1] + self.m[1][2] * v[2],
            self.m[2][0] * v[0] + self.m[2][1] * v[1] + self.m[2][2] * v[2],
        ]
    }

    pub fn transpose(&self) -> Self {
        let m = &self.m;
        Self {
            m: [
                [m[0][0], m[1][0], m[2][0]],
                [m[0][1], m[1][1], m[2][1]],
                [m[0][2], m[1][2], m[2][2]],
            ],
        }
    }

    pub fn determinant(&self) -> T {
        dot3(self.column(0), cross3(self.column(1), self.column(2)))
    }

    /// Largest deviation of `RᵀR` from the identity.
    pub fn orthogonality_error(&self) -> T {
        let p = self.transpose().mul(self);
        let mut worst = T::zero();
        for r in 0..3 {
            for c in 0..3 {
                let target = if r == c { T::one() } else { T::zero() };
                worst = worst.max((p.m[r][c] - target).abs());
            }
        }
        worst
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        let mut worst = T::zero();
        for r in 0..3 {
            for c in 0..3 {
                worst = worst.max((self.m[r][c] - other.m[r][c]).abs());
            }
        }
        worst
    }

    /// Row-major flattening, the layout used by the autodiff kernels.
    pub fn to_row_major(&self) -> [T; 9] {
        let m = &self.m;
        [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]]
    }
}

/// Gram-Schmidt orthonormalization of the two stored columns.
pub fn rot6d_to_matrix<T: Scalar>(r: &Rot6D<T>) -> Result<RotationMatrix<T>> {
    let eps = T::lit(DEGENERATE_EPS);
    let na = norm3(r.a);
    if !(na >= eps) {
        return Err(Error::DegenerateInput(format!("first 6D column has norm {na}")));
    }
    let c1 = scale3(r.a, na.recip());
    let ortho = sub3(r.b, scale3(c1, dot3(c1, r.b)));
    let nb = norm3(ortho);
    if !(nb >= eps) {
        return Err(Error::DegenerateInput(format!(
            "second 6D column is collinear with the first (residual {nb})"
        )));
    }
    let c2 = scale3(ortho, nb.recip());
    let c3 = cross3(c1, c2);
    Ok(RotationMatrix::from_columns(c1, c2, c3))
}

pub fn matrix_to_rot6d<T: Scalar>(rot: &RotationMatrix<T>) -> Result<Rot6D<T>> {
    let tol = T::lit(ROTATION_TOL);
    let ortho = rot.orthogonality_error();
    let det = rot.determinant();
    if !(ortho <= tol) || !((det - T::one()).abs() <= tol) {
        return Err(Error::InvalidRotation(format!(
            "orthogonality error {ortho}, determinant {det}"
        )));
    }
    Ok(Rot6D::new(rot.column(0), rot.column(1)))
}

/// Weighted mean of raw 6D vectors. Orthonormalization is left to the caller.
pub fn blend_rot6d<T: Scalar>(weights: &[T], rots: &[Rot6D<T>]) -> Result<Rot6D<T>> {
    if weights.is_empty() || rots.is_empty() {
        return Err(Error::EmptyInput("blend_rot6d needs at least one rotation".into()));
    }
    if weights.len() != rots.len() {
        return Err(Error::LengthMismatch(format!(
            "{} weights for {} rotations",
            weights.len(),
            rots.len()
        )));
    }
    let total: T = weights.iter().copied().sum();
    if !(total > T::zero()) {
        return Err(Error::ZeroWeightSum);
    }
    let mut acc = [T::zero(); 6];
    for (w, r) in weights.iter().zip(rots) {
        for (slot, v) in acc.iter_mut().zip(r.to_array()) {
            *slot += *w * v;
        }
    }
    for slot in acc.iter_mut() {
        *slot /= total;
    }
    Ok(Rot6D::from_slice(&acc))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform<T> {
    pub rotation: Rot6D<T>,
    pub translation: Vec3<T>,
}

impl<T: Scalar> RigidTransform<T> {
    pub fn identity() -> Self {
        Self { rotation: Rot6D::identity(), translation: [T::zero(); 3] }
    }

    pub fn new(rotation: Rot6D<T>, translation: Vec3<T>) -> Self {
        Self { rotation, translation }
    }

    /// `self ∘ inner`: apply `inner` first.
    pub fn compose(&self, inner: &Self) -> Result<Self> {
        let outer = rot6d_to_matrix(&self.rotation)?;
        let inner_rot = rot6d_to_matrix(&inner.rotation)?;
        let rotation = matrix_to_rot6d(&outer.mul(&inner_rot))?;
        let translation = add3(outer.apply(inner.translation), self.translation);
        Ok(Self { rotation, translation })
    }
}

/// Applies a segment transform to the root rotation and the root displacement.
/// Non-root joints are not touched by a rigid transform.
pub fn apply_rigid<T: Scalar>(
    rho: &RigidTransform<T>,
    theta_root: &Rot6D<T>,
    gamma: Vec3<T>,
) -> Result<(Rot6D<T>, Vec3<T>)> {
    let r = rot6d_to_matrix(&rho.rotation)?;
    let root = rot6d_to_matrix(theta_root)?;
    let rotated = matrix_to_rot6d(&r.mul(&root))?;
    Ok((rotated, add3(r.apply(gamma), rho.translation)))
}
