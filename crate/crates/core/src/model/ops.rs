//! Reference implementations of the decoder's combination stage on plain values.

use crate::body::Pose;
use crate::error::{Error, Result};
use crate::rotation::{apply_rigid, blend_rot6d, RigidTransform};
use crate::scalar::Scalar;

use super::types::{BodyParams, LatentDistributionSequence, LatentSequence, SegmentLayout};

/// Reparameterized draw `z = μ + ε ⊙ exp(log σ)`.
pub fn sample<T: Scalar>(dist: &LatentDistributionSequence<T>, noise: &[Vec<T>]) -> Result<LatentSequence<T>> {
    if noise.len() != dist.primitives() || noise.iter().any(|e| e.len() != dist.dim()) {
        return Err(Error::LengthMismatch(format!(
            "noise must be {}x{}",
            dist.primitives(),
            dist.dim()
        )));
    }
    let z = dist
        .mu
        .iter()
        .zip(&dist.log_sigma)
        .zip(noise)
        .map(|((mu, ls), eps)| mu.iter().zip(ls).zip(eps).map(|((&m, &s), &e)| m + e * s.exp()).collect())
        .collect();
    Ok(LatentSequence { z })
}

/// Softmax over the raw durations and cumulative starts.
pub fn layout<T: Scalar>(delta_raw: &[T], rho: Vec<RigidTransform<T>>) -> Result<SegmentLayout<T>> {
    if delta_raw.is_empty() {
        return Err(Error::EmptyInput("layout needs at least one primitive".into()));
    }
    let mx = delta_raw.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = delta_raw.iter().map(|&d| (d - mx).exp()).collect();
    let total: T = exps.iter().copied().sum();
    let delta: Vec<T> = exps.iter().map(|&e| e / total).collect();
    Ok(uniform_or_given(delta, rho))
}

/// Layout with equal durations `1/m`.
pub fn uniform_layout<T: Scalar>(rho: Vec<RigidTransform<T>>) -> SegmentLayout<T> {
    let m = rho.len();
    uniform_or_given(vec![T::one() / T::lit(m as f64); m], rho)
}

fn uniform_or_given<T: Scalar>(delta: Vec<T>, rho: Vec<RigidTransform<T>>) -> SegmentLayout<T> {
    let mut start = Vec::with_capacity(delta.len());
    let mut acc = T::zero();
    for &d in &delta {
        start.push(acc);
        acc += d;
    }
    SegmentLayout { delta, start, rho }
}

/// `exp(-((τ - c)/(δ/2))²)` centred on the segment midpoint `c = start + δ/2`.
pub fn gaussian_mask<T: Scalar>(tau: T, start: T, delta: T) -> T {
    let half = delta * T::lit(0.5);
    let x = (tau - (start + half)) / half;
    (-(x * x)).exp()
}

/// Segment-local clock `(τ - start)/δ`.
pub fn local_time<T: Scalar>(tau: T, start: T, delta: T) -> T {
    (tau - start) / delta
}

/// Mask-weighted blend of per-segment outputs after applying each segment's transform.
pub fn combine<T: Scalar>(per_segment: &[BodyParams<T>], layout: &SegmentLayout<T>, tau: T) -> Result<BodyParams<T>> {
    let m = per_segment.len();
    if m == 0 {
        return Err(Error::EmptyInput("combine needs at least one segment".into()));
    }
    if layout.delta.len() != m || layout.rho.len() != m {
        return Err(Error::LengthMismatch(format!("{m} segments, layout of {}", layout.delta.len())));
    }
    let weights: Vec<T> = (0..m).map(|i| gaussian_mask(tau, layout.start[i], layout.delta[i])).collect();
    combine_weighted(per_segment, &layout.rho, &weights)
}

pub(crate) fn combine_weighted<T: Scalar>(
    per_segment: &[BodyParams<T>],
    rho: &[RigidTransform<T>],
    weights: &[T],
) -> Result<BodyParams<T>> {
    let total: T = weights.iter().copied().sum();
    if !(total > T::zero()) {
        return Err(Error::ZeroWeightSum);
    }
    let joints = per_segment[0].pose.theta.len();
    let mut transformed = Vec::with_capacity(per_segment.len());
    for (seg, r) in per_segment.iter().zip(rho) {
        let (root, gamma) = apply_rigid(r, &seg.pose.theta[0], seg.gamma)?;
        let mut pose = seg.pose.clone();
        pose.theta[0] = root;
        transformed.push(BodyParams { pose, gamma });
    }
    let mut theta = Vec::with_capacity(joints);
    for j in 0..joints {
        let rots: Vec<_> = transformed.iter().map(|t| t.pose.theta[j]).collect();
        theta.push(blend_rot6d(weights, &rots)?);
    }
    let mut gamma = [T::zero(); 3];
    for (t, &w) in transformed.iter().zip(weights) {
        for k in 0..3 {
            gamma[k] += w * t.gamma[k];
        }
    }
    for g in gamma.iter_mut() {
        *g /= total;
    }
    Ok(BodyParams { pose: Pose { theta }, gamma })
}
