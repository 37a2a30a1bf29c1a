//! Training objective: reconstruction, KL and duration terms.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::body::{BodyModel, BodyShape};
use crate::error::{Error, Result};
use crate::model::{ops, BodyParams, LatentDistributionSequence, SegmentLayout};
use crate::rotation::apply_rigid;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_kl: f64,
    pub lambda_reg: f64,
    pub lambda_3d: f64,
    pub lambda_prior: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_kl: 1e-4, lambda_reg: 1e-2, lambda_3d: 0.0, lambda_prior: 1e-2 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_kl, self.lambda_reg, self.lambda_3d, self.lambda_prior];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidConfig("loss weights must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// Mean over primitives of `KL(N(μ, σ) ‖ N(0, I))`.
pub fn kl_loss<T: Scalar>(dist: &LatentDistributionSequence<T>) -> T {
    let m = T::lit(dist.primitives().max(1) as f64);
    let total: T = dist
        .mu
        .iter()
        .zip(&dist.log_sigma)
        .flat_map(|(mu, ls)| mu.iter().zip(ls))
        .map(|(&mu, &ls)| mu * mu + (ls + ls).exp() - T::one() - (ls + ls))
        .sum();
    total * T::lit(0.5) / m
}

/// `Σ (δ_j − 1/m)²`.
pub fn duration_reg<T: Scalar>(delta: &[T]) -> T {
    let target = T::one() / T::lit(delta.len().max(1) as f64);
    delta.iter().map(|&d| (d - target) * (d - target)).sum()
}

fn frame_sq_err<T: Scalar>(a: &BodyParams<T>, b: &BodyParams<T>) -> T {
    let rot: T = a.pose.flatten().iter().zip(b.pose.flatten()).map(|(&x, y)| (x - y) * (x - y)).sum();
    let disp: T = a.gamma.iter().zip(&b.gamma).map(|(&x, &y)| (x - y) * (x - y)).sum();
    rot + disp
}

/// Mean over frames of the squared parameter error, plus `λ_3D` times the mean
/// squared distance between corresponding surface points.
pub fn global_rec_loss<T: Scalar, B: BodyModel<T>>(
    pred: &[BodyParams<T>],
    gt: &[BodyParams<T>],
    beta: &BodyShape<T>,
    body: &B,
    lambda_3d: T,
) -> Result<T> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch(format!("{} predicted frames, {} reference frames", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("no frames to compare".into()));
    }
    let mut total = T::zero();
    for (p, q) in pred.iter().zip(gt) {
        total += frame_sq_err(p, q);
        if lambda_3d != T::zero() {
            total += lambda_3d * surface_sq_err(p, q, beta, body)?;
        }
    }
    Ok(total / T::lit(pred.len() as f64))
}

/// Mean squared distance between corresponding surface points of two frames.
pub fn surface_sq_err<T: Scalar, B: BodyModel<T>>(a: &BodyParams<T>, b: &BodyParams<T>, beta: &BodyShape<T>, body: &B) -> Result<T> {
    let pa = body.surface(&a.pose, a.gamma, beta)?;
    let pb = body.surface(&b.pose, b.gamma, beta)?;
    let sum: T = pa
        .iter()
        .zip(&pb)
        .flat_map(|(x, y)| (0..3).map(move |k| (x[k] - y[k]) * (x[k] - y[k])))
        .sum();
    Ok(sum / T::lit(pa.len() as f64))
}

/// Mask-weighted error of every transformed segment output against the reference,
/// averaged over primitives and frames. `per_segment[j][i]` is primitive `j` at `taus[i]`
/// in its local frame.
pub fn segment_rec_loss<T: Scalar>(
    per_segment: &[Vec<BodyParams<T>>],
    layout: &SegmentLayout<T>,
    taus: &[T],
    gt: &[BodyParams<T>],
) -> Result<T> {
    let (m, n) = (per_segment.len(), gt.len());
    if layout.delta.len() != m || taus.len() != n || per_segment.iter().any(|s| s.len() != n) {
        return Err(Error::LengthMismatch(format!(
            "{m} segments over {n} frames, layout of {} and {} timestamps",
            layout.delta.len(),
            taus.len()
        )));
    }
    if m == 0 || n == 0 {
        return Err(Error::EmptyInput("no segments or frames".into()));
    }
    let mut total = T::zero();
    for (j, seg) in per_segment.iter().enumerate() {
        for (i, (p, q)) in seg.iter().zip(gt).enumerate() {
            let (root, gamma) = apply_rigid(&layout.rho[j], &p.pose.theta[0], p.gamma)?;
            let mut moved = p.clone();
            moved.pose.theta[0] = root;
            moved.gamma = gamma;
            let w = ops::gaussian_mask(taus[i], layout.start[j], layout.delta[j]);
            total += w * frame_sq_err(&moved, q);
        }
    }
    Ok(total / T::lit((m * n) as f64))
}

/// `L_global + L_segment + λ_KL·L_KL + λ_reg·L_reg`.
pub fn total_loss<T: Scalar>(rec_global: T, rec_segment: T, kl: T, reg: T, w: &LossWeights) -> T {
    rec_global + rec_segment + T::lit(w.lambda_kl) * kl + T::lit(w.lambda_reg) * reg
}

/// Graph form of [`kl_loss`] on `m × D` nodes.
pub fn kl_graph<T: Scalar>(g: &mut Graph<T>, mu: Var, log_sigma: Var) -> Var {
    let m = g.shape(mu).0;
    let mu2 = g.square(mu);
    let two_ls = g.scale(log_sigma, T::lit(2.0));
    let var = g.exp(two_ls);
    let a = g.add(mu2, var);
    let b = g.sub(a, two_ls);
    let c = g.add_scalar(b, -T::one());
    let s = g.sum_all(c);
    g.scale(s, T::lit(0.5) / T::lit(m as f64))
}

/// Graph form of [`duration_reg`] on a `1 × m` node.
pub fn duration_reg_graph<T: Scalar>(g: &mut Graph<T>, delta: Var) -> Var {
    let m = g.shape(delta).1;
    let d = g.add_scalar(delta, -T::one() / T::lit(m as f64));
    let sq = g.square(d);
    g.sum_all(sq)
}

/// Mean over rows of the squared row error between `pred` and `gt` (both `n × C`).
pub fn mean_row_sq_err<T: Scalar>(g: &mut Graph<T>, pred: Var, gt: Var) -> Var {
    let n = g.shape(pred).0;
    let d = g.sub(pred, gt);
    let sq = g.square(d);
    let s = g.sum_all(sq);
    g.scale(s, T::one() / T::lit(n as f64))
}

/// Graph form of [`global_rec_loss`]. `frames` and `gt` are `n × (6J+3)`; the optional
/// point pair holds `n × 3P` predicted and reference surface points.
pub fn global_rec_graph<T: Scalar>(g: &mut Graph<T>, frames: Var, gt: Var, points: Option<(Var, Var, T)>) -> Var {
    let base = mean_row_sq_err(g, frames, gt);
    match points {
        Some((p, q, lambda)) if lambda != T::zero() => {
            let per_point = g.shape(p).1 / 3;
            let e = mean_row_sq_err(g, p, q);
            let e = g.scale(e, lambda / T::lit(per_point as f64));
            g.add(base, e)
        }
        _ => base,
    }
}

/// Graph form of [`segment_rec_loss`]: `per_segment` is `(m·n) × C` primitive-major,
/// `masks` is `n × m`, `gt` is `n × C`.
pub fn segment_rec_graph<T: Scalar>(g: &mut Graph<T>, per_segment: Var, masks: Var, gt: Var) -> Var {
    let (n, m) = g.shape(masks);
    let rows = Rc::new((0..m).flat_map(|_| 0..n).collect::<Vec<_>>());
    let gt_rep = g.gather_rows(gt, rows);
    let d = g.sub(per_segment, gt_rep);
    let sq = g.square(d);
    let sse = g.sum_cols(sq);
    let mt = g.transpose(masks);
    let w = g.reshape(mt, m * n, 1);
    let weighted = g.mul(sse, w);
    let s = g.sum_all(weighted);
    g.scale(s, T::one() / T::lit((m * n) as f64))
}

/// Weighted sum of loss nodes.
pub fn total_graph<T: Scalar>(g: &mut Graph<T>, global: Var, segment: Var, kl: Var, reg: Var, w: &LossWeights) -> Var {
    let rec = g.add(global, segment);
    let kl = g.scale(kl, T::lit(w.lambda_kl));
    let reg = g.scale(reg, T::lit(w.lambda_reg));
    let a = g.add(rec, kl);
    g.add(a, reg)
}

/// Rows `[θ | γ]` for a list of decoded frames.
pub fn frames_tensor<T: Scalar>(frames: &[BodyParams<T>]) -> Tensor<T> {
    let cols = frames.first().map_or(3, |f| 6 * f.pose.theta.len() + 3);
    let data = frames
        .iter()
        .flat_map(|f| {
            let mut row = f.pose.flatten();
            row.extend_from_slice(&f.gamma);
            row
        })
        .collect();
    Tensor::new(frames.len(), cols, data)
}
