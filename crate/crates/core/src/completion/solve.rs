//! Latent optimization of a motion against sparse point-cloud observations.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ChamferTargets, Graph, Tensor};
use crate::body::{BodyModel, BodyShape};
use crate::error::{Error, Result};
use crate::model::{FrameSequence, LatentSequence, MotionPrior};
use crate::nn::Adam;
use crate::scalar::Scalar;
use crate::trainer::NormalizationInfo;

use super::cloud::{PointCloudSequence, MM_PER_M};
use super::init::{CloudFeatures, InitEncoder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompletionConfig {
    pub lambda_prior: f64,
    pub iterations: usize,
    pub step_size: f64,
    pub output_fps: f64,
    /// Stop once an accepted step lowers the objective by less than this fraction.
    pub rel_tol: f64,
    /// Halve rejected steps so the objective never increases.
    pub monotone: bool,
    pub max_halvings: usize,
    /// Surface density of the decoded body compared against the observations.
    pub samples_per_bone: usize,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self {
            lambda_prior: 0.01,
            iterations: 300,
            step_size: 1e-2,
            output_fps: 30.0,
            rel_tol: 1e-5,
            monotone: true,
            max_halvings: 10,
            samples_per_bone: 16,
        }
    }
}

impl CompletionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_prior >= 0.0 && self.step_size > 0.0 && self.output_fps > 0.0 && self.rel_tol >= 0.0) {
            return Err(Error::InvalidConfig("completion step size and output rate must be positive".into()));
        }
        if self.samples_per_bone == 0 {
            return Err(Error::InvalidConfig("samples_per_bone must be positive".into()));
        }
        Ok(())
    }
}

/// Everything the completion objective needs besides the latents.
pub struct CompletionProblem<'a, T: Scalar, B> {
    pub prior: &'a MotionPrior<T>,
    pub body: &'a B,
    pub info: NormalizationInfo,
    pub taus: Vec<T>,
    pub targets: Rc<ChamferTargets<T>>,
    pub z_init: Tensor<T>,
    pub lambda_prior: f64,
}

/// Objective value with gradients for the latents (`m × D`) and shape (`1 × B`).
#[derive(Debug, Clone)]
pub struct ObjectiveEval<T> {
    pub value: T,
    pub chamfer: T,
    pub grad_z: Tensor<T>,
    pub grad_beta: Tensor<T>,
}

impl<'a, T: Scalar, B: BodyModel<T>> CompletionProblem<'a, T, B> {
    pub fn new(
        prior: &'a MotionPrior<T>,
        body: &'a B,
        pcs: &PointCloudSequence<T>,
        info: NormalizationInfo,
        z_init: Tensor<T>,
        lambda_prior: f64,
    ) -> Self {
        let taus = pcs.timestamps.iter().map(|&t| info.normalize_time(t)).collect();
        let targets = Rc::new(ChamferTargets { frames: pcs.clouds.clone() });
        Self { prior, body, info, taus, targets, z_init, lambda_prior }
    }

    /// Chamfer (mm, summed over observed frames) plus `λ_prior ‖z − z_init‖²`.
    pub fn evaluate(&self, z: &Tensor<T>, beta: &Tensor<T>) -> ObjectiveEval<T> {
        let mut g = Graph::new();
        let p = self.prior.params.bind(&mut g, false);
        let zv = g.variable(z.clone());
        let bv = g.variable(beta.clone());
        let dec = self.prior.decode_graph(&mut g, &p, zv, bv, &self.taus);
        let (mid, half) = self.info.gamma_affine();
        let half = g.constant(Tensor::row(half.iter().map(|&x| T::lit(x)).collect()));
        let mid = g.constant(Tensor::row(mid.iter().map(|&x| T::lit(x)).collect()));
        let metric = g.mul_row(dec.gamma, half);
        let metric = g.add_row(metric, mid);
        let pts = self.body.surface_graph(&mut g, dec.theta, metric, bv);
        let chamfer = g.chamfer_sum(pts, self.targets.clone(), T::lit(MM_PER_M));
        let anchor = g.constant(self.z_init.clone());
        let d = g.sub(zv, anchor);
        let sq = g.square(d);
        let reg = g.sum_all(sq);
        let reg = g.scale(reg, T::lit(self.lambda_prior));
        let total = g.add(chamfer, reg);
        let grads = g.backward(total);
        ObjectiveEval {
            value: g.value(total).item(),
            chamfer: g.value(chamfer).item(),
            grad_z: grads.get(zv).cloned().unwrap_or_else(|| Tensor::zeros(z.rows, z.cols)),
            grad_beta: grads.get(bv).cloned().unwrap_or_else(|| Tensor::zeros(beta.rows, beta.cols)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompletionResult<T> {
    /// Dense motion at the output rate, metres.
    pub motion: FrameSequence<T>,
    /// Dense decoding of the initialization.
    pub initial_motion: FrameSequence<T>,
    pub z: LatentSequence<T>,
    pub beta: BodyShape<T>,
    pub z_init: LatentSequence<T>,
    pub beta_init: BodyShape<T>,
    pub normalization: NormalizationInfo,
    /// Objective after every accepted step, starting at the initialization.
    pub objective: Vec<f64>,
    /// Optimizer iterations run, accepted or not.
    pub iterations: usize,
}

/// Output timestamps: `round(covered · fps)` frames from the first observation.
pub fn output_times<T: Scalar>(pcs: &PointCloudSequence<T>, fps: f64) -> Vec<T> {
    let t0 = pcs.timestamps[0].as_f64();
    let n = (pcs.covered_duration().as_f64() * fps).round().max(1.0) as usize;
    (0..n).map(|k| T::lit(t0 + k as f64 / fps)).collect()
}

/// Decodes metric frames at absolute `times`.
pub fn decode_metric<T: Scalar>(
    prior: &MotionPrior<T>,
    z: &LatentSequence<T>,
    beta: &BodyShape<T>,
    info: &NormalizationInfo,
    times: &[T],
) -> Result<FrameSequence<T>> {
    let taus: Vec<T> = times.iter().map(|&t| info.normalize_time(t)).collect();
    let frames = prior.decode(z, beta, &taus)?;
    Ok(FrameSequence {
        timestamps: times.to_vec(),
        poses: frames.iter().map(|f| f.pose.clone()).collect(),
        displacements: frames.iter().map(|f| info.denormalize_gamma(f.gamma)).collect(),
        shape: beta.clone(),
    })
}

/// Fits latents and shape to `pcs` starting from the initialization encoder and decodes a
/// dense motion at `cfg.output_fps`.
pub fn complete<T: Scalar, B: BodyModel<T>>(
    pcs: &PointCloudSequence<T>,
    cfg: &CompletionConfig,
    prior: &MotionPrior<T>,
    init: Option<&InitEncoder<T>>,
    body: &B,
) -> Result<CompletionResult<T>> {
    cfg.validate()?;
    let init = init.ok_or(Error::UntrainedInitEncoder)?;
    let (z0, beta0, features) = init.encode(pcs)?;
    complete_from(pcs, cfg, prior, body, z0, beta0, features)
}

/// As [`complete`] with an explicit initialization.
pub fn complete_from<T: Scalar, B: BodyModel<T>>(
    pcs: &PointCloudSequence<T>,
    cfg: &CompletionConfig,
    prior: &MotionPrior<T>,
    body: &B,
    z0: LatentSequence<T>,
    beta0: BodyShape<T>,
    features: CloudFeatures<T>,
) -> Result<CompletionResult<T>> {
    cfg.validate()?;
    let problem = CompletionProblem::new(prior, body, pcs, features.info.clone(), z0.to_tensor(), cfg.lambda_prior);
    let mut x = [z0.to_tensor(), Tensor::row(beta0.beta.clone())];
    let mut current = problem.evaluate(&x[0], &x[1]);
    if !current.value.is_finite() {
        return Err(Error::NonFiniteObjective { iteration: 0 });
    }
    let mut objective = vec![current.value.as_f64()];
    let mut adam = Adam::new(&[(x[0].rows, x[0].cols), (x[1].rows, x[1].cols)]);
    let mut iterations = 0;
    for it in 0..cfg.iterations {
        iterations = it + 1;
        let mut proposal = x.clone();
        adam.step(&mut proposal, &[current.grad_z.clone(), current.grad_beta.clone()], cfg.step_size);
        let step: Vec<Tensor<T>> = proposal.iter().zip(&x).map(|(a, b)| a.zip_map(b, |u, v| u - v)).collect();
        let mut accepted = None;
        let mut alpha = T::one();
        let tries = if cfg.monotone { cfg.max_halvings + 1 } else { 1 };
        for _ in 0..tries {
            let cand = [0, 1].map(|k| x[k].zip_map(&step[k], |u, d| u + alpha * d));
            let eval = problem.evaluate(&cand[0], &cand[1]);
            if !eval.value.is_finite() {
                if !cfg.monotone {
                    return Err(Error::NonFiniteObjective { iteration: iterations });
                }
            } else if !cfg.monotone || eval.value <= current.value {
                accepted = Some((cand, eval));
                break;
            }
            alpha = alpha * T::lit(0.5);
        }
        let Some((cand, eval)) = accepted else { break };
        let previous = current.value;
        x = cand;
        current = eval;
        objective.push(current.value.as_f64());
        let scale = previous.abs().max(T::lit(1e-12));
        if cfg.monotone && (previous - current.value) / scale < T::lit(cfg.rel_tol) {
            break;
        }
    }
    let times = output_times(pcs, cfg.output_fps);
    let z = LatentSequence::from_tensor(&x[0]);
    let beta = BodyShape::new(x[1].data.clone());
    let motion = decode_metric(prior, &z, &beta, &features.info, &times)?;
    let initial_motion = decode_metric(prior, &z0, &beta0, &features.info, &times)?;
    Ok(CompletionResult {
        motion,
        initial_motion,
        z,
        beta,
        z_init: z0,
        beta_init: beta0,
        normalization: features.info,
        objective,
        iterations,
    })
}
