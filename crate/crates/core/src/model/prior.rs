use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::body::{BodyShape, Pose};
use crate::error::{Error, Result};
use crate::nn::{Bound, EncoderLayer, LayerNorm, Linear, Mlp, ParamId, ParamStore, QueryLayer};
use crate::rotation::{RigidTransform, Rot6D};
use crate::scalar::Scalar;

use super::config::ModelConfig;
use super::ops;
use super::types::{BodyParams, FrameSequence, LatentDistributionSequence, LatentSequence, SegmentLayout};

const IDENTITY_6D: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
/// Row-major indices of the first two matrix columns.
const FIRST_TWO_COLUMNS: [usize; 6] = [0, 3, 6, 1, 4, 7];
const TAU_TOLERANCE: f64 = 1e-6;
/// Segment head outputs: raw duration, 6D rotation, translation.
const SEGMENT_OUTPUTS: usize = 10;

/// Graph nodes of an encoded sequence.
#[derive(Debug, Clone, Copy)]
pub struct EncodedVars {
    pub mu: Var,
    pub log_sigma: Var,
}

/// Graph nodes of a decoded sequence of `n` timestamps.
#[derive(Debug, Clone, Copy)]
pub struct DecodedVars {
    /// `n × 6J` blended rotations.
    pub theta: Var,
    /// `n × 3` blended displacements.
    pub gamma: Var,
    /// `(m·n) × (6J+3)` transformed per-segment outputs, primitive-major.
    pub per_segment: Var,
    /// `n × m` Gaussian masks.
    pub masks: Var,
    /// `1 × m` normalized durations.
    pub delta: Var,
    /// `1 × m` segment starts.
    pub start: Var,
    /// `m × 10` raw segment head outputs.
    pub segment_raw: Var,
}

/// The sequential latent-primitive motion prior: encoder and temporally implicit decoder.
#[derive(Debug, Clone)]
pub struct MotionPrior<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    embed: Linear,
    encoder: Vec<EncoderLayer>,
    encoder_norm: LayerNorm,
    queries: ParamId,
    query_layers: Vec<QueryLayer>,
    output_norm: LayerNorm,
    mu_head: Linear,
    log_sigma_head: Linear,
    segment: Mlp,
    primitive_latent: Linear,
    primitive_time: ParamId,
    primitive: Mlp,
}

impl<T: Scalar> MotionPrior<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let mut p = ParamStore::new();
        let width = c.token_dim();
        let embed = Linear::new(&mut p, "embed", c.frame_dim(), c.embed_dim, &mut rng);
        let encoder = (0..c.encoder_layers)
            .map(|i| EncoderLayer::new(&mut p, &format!("encoder.{i}"), width, c.heads, c.head_dim, c.feed_forward, &mut rng))
            .collect();
        let encoder_norm = LayerNorm::new(&mut p, "encoder_norm", width);
        let queries = p.add_uniform("queries", c.primitives, width, 1.0, &mut rng);
        let query_layers = (0..c.query_layers)
            .map(|i| QueryLayer::new(&mut p, &format!("query.{i}"), width, c.heads, c.head_dim, c.feed_forward, &mut rng))
            .collect();
        let output_norm = LayerNorm::new(&mut p, "output_norm", width);
        let mu_head = Linear::new(&mut p, "mu", width, c.latent_dim, &mut rng);
        let log_sigma_head = Linear::new(&mut p, "log_sigma", width, c.latent_dim, &mut rng);
        let init_ls = T::lit(c.init_log_sigma);
        *p.get_mut(log_sigma_head.b) = Tensor::full(1, c.latent_dim, init_ls);

        let cond = c.latent_dim + c.shape_dims;
        let mut seg_widths = vec![cond];
        seg_widths.extend(&c.segment_hidden);
        seg_widths.push(SEGMENT_OUTPUTS);
        let segment = Mlp::new(&mut p, "segment", &seg_widths, &mut rng);
        // Start from near-uniform durations and near-identity transforms.
        let last = segment.layers.last().expect("segment head has a layer").w;
        p.get_mut(last).scale_assign(T::lit(0.01));

        let h0 = c.primitive_hidden[0];
        let time_features = 1 + 2 * c.time_frequencies;
        let fan_in = cond + time_features;
        let limit = (6.0 / (fan_in + h0) as f64).sqrt();
        let primitive_latent = Linear::new(&mut p, "primitive.latent", cond, h0, &mut rng);
        let primitive_time = p.add_uniform("primitive.time", time_features, h0, limit, &mut rng);
        let mut widths = c.primitive_hidden.clone();
        widths.push(c.frame_dim());
        let primitive = Mlp::new(&mut p, "primitive", &widths, &mut rng);
        Ok(Self {
            config,
            params: p,
            embed,
            encoder,
            encoder_norm,
            queries,
            query_layers,
            output_norm,
            mu_head,
            log_sigma_head,
            segment,
            primitive_latent,
            primitive_time,
            primitive,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Per-frame embedding `[tanh(W·[θ, γ] + b), τ]` of width `E + 1`.
    pub fn embed_frame(&self, pose: &Pose<T>, gamma: [T; 3], tau: T) -> Result<Vec<T>> {
        let mut row = pose.flatten();
        row.extend_from_slice(&gamma);
        if row.len() != self.config.frame_dim() {
            return Err(Error::LengthMismatch(format!(
                "frame has {} values, model expects {}",
                row.len(),
                self.config.frame_dim()
            )));
        }
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let frames = g.constant(Tensor::new(1, row.len(), row));
        let taus = g.constant(Tensor::scalar(tau));
        let out = self.embed_graph(&mut g, &p, frames, taus);
        Ok(g.value(out).data.clone())
    }

    fn embed_graph(&self, g: &mut Graph<T>, p: &Bound, frames: Var, taus: Var) -> Var {
        let e = self.embed.forward(g, p, frames);
        let e = g.tanh(e);
        g.concat_cols(&[e, taus])
    }

    /// Encoder on graph nodes: `frames` is `n × (6J+3)`, `taus` is `n × 1`.
    pub fn encode_graph(&self, g: &mut Graph<T>, p: &Bound, frames: Var, taus: Var) -> EncodedVars {
        let mut x = self.embed_graph(g, p, frames, taus);
        for layer in &self.encoder {
            x = layer.forward(g, p, x);
        }
        let memory = self.encoder_norm.forward(g, p, x);
        let mut q = p.var(self.queries);
        for layer in &self.query_layers {
            q = layer.forward(g, p, q, memory);
        }
        let q = self.output_norm.forward(g, p, q);
        EncodedVars { mu: self.mu_head.forward(g, p, q), log_sigma: self.log_sigma_head.forward(g, p, q) }
    }

    /// Maps a normalized sequence to one Gaussian per primitive.
    pub fn encode(&self, seq: &FrameSequence<T>) -> Result<LatentDistributionSequence<T>> {
        self.check_sequence(seq)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let frames = g.constant(seq.frame_matrix());
        let taus = g.constant(Tensor::column(seq.timestamps.clone()));
        let enc = self.encode_graph(&mut g, &p, frames, taus);
        let rows = |t: &Tensor<T>| (0..t.rows).map(|i| t.row_slice(i).to_vec()).collect();
        Ok(LatentDistributionSequence { mu: rows(g.value(enc.mu)), log_sigma: rows(g.value(enc.log_sigma)) })
    }

    pub(crate) fn check_sequence(&self, seq: &FrameSequence<T>) -> Result<()> {
        seq.validate()?;
        if seq.joints() != self.config.joints {
            return Err(Error::LengthMismatch(format!(
                "sequence has {} joints, model expects {}",
                seq.joints(),
                self.config.joints
            )));
        }
        check_taus(&seq.timestamps)
    }

    /// Decoder on graph nodes: `z` is `m × D`, `beta` is `1 × B`.
    pub fn decode_graph(&self, g: &mut Graph<T>, p: &Bound, z: Var, beta: Var, taus: &[T]) -> DecodedVars {
        let c = &self.config;
        let (m, n) = (c.primitives, taus.len());
        let cond = self.condition(g, z, beta);
        let segment_raw = self.segment.forward(g, p, cond);

        let delta = if c.fixed_segments {
            g.constant(Tensor::full(1, m, T::one() / T::lit(m as f64)))
        } else {
            let raw = g.slice_cols(segment_raw, 0, 1);
            let raw = g.transpose(raw);
            g.softmax_rows(raw)
        };
        let upper = Tensor::new(m, m, (0..m * m).map(|k| if k / m < k % m { T::one() } else { T::zero() }).collect());
        let upper = g.constant(upper);
        let start = g.matmul(delta, upper);

        // Segment-local time and masks as n × m.
        let every_frame = Rc::new(vec![0; n]);
        let tau_grid = g.constant(Tensor::new(n, m, taus.iter().flat_map(|&t| std::iter::repeat_n(t, m)).collect()));
        let start_grid = g.gather_rows(start, every_frame.clone());
        let delta_grid = g.gather_rows(delta, every_frame);
        let offset = g.sub(tau_grid, start_grid);
        let inv = g.recip(delta_grid);
        let local = g.mul(offset, inv);
        let centred = g.scale(local, T::lit(2.0));
        let centred = g.add_scalar(centred, -T::one());
        let sq = g.square(centred);
        let neg = g.scale(sq, -T::one());
        let masks = g.exp(neg);

        let local_t = g.transpose(local);
        let s = g.reshape(local_t, m * n, 1);
        let primitive_rows: Rc<Vec<usize>> = Rc::new((0..m).flat_map(|i| std::iter::repeat_n(i, n)).collect());
        let raw = self.primitive_graph(g, p, cond, s, primitive_rows.clone());

        let rho_rot = g.slice_cols(segment_raw, 1, 6);
        let identity = g.constant(Tensor::row(IDENTITY_6D.iter().map(|&x| T::lit(x)).collect()));
        let rho_rot = g.add_row(rho_rot, identity);
        let rho_mat = g.rot6d_to_mat(rho_rot);
        let rho_mat = g.gather_rows(rho_mat, primitive_rows.clone());
        let rho_t = g.slice_cols(segment_raw, 7, 3);
        let rho_t = g.gather_rows(rho_t, primitive_rows);
        let per_segment = self.transform_graph(g, raw, rho_mat, rho_t);

        let total = g.sum_cols(masks);
        let norm = g.recip(total);
        let mut blended = None;
        for i in 0..m {
            let rows = g.slice_rows(per_segment, i * n, n);
            let w = g.slice_cols(masks, i, 1);
            let term = g.mul_col(rows, w);
            blended = Some(match blended {
                None => term,
                Some(acc) => g.add(acc, term),
            });
        }
        let blended = g.mul_col(blended.expect("at least one primitive"), norm);
        let theta = g.slice_cols(blended, 0, 6 * c.joints);
        let gamma = g.slice_cols(blended, 6 * c.joints, 3);
        DecodedVars { theta, gamma, per_segment, masks, delta, start, segment_raw }
    }

    fn condition(&self, g: &mut Graph<T>, z: Var, beta: Var) -> Var {
        let m = g.shape(z).0;
        let beta_rows = g.gather_rows(beta, Rc::new(vec![0; m]));
        g.concat_cols(&[z, beta_rows])
    }

    /// Primitive decoder over `s` (`N × 1`), with row `k` conditioned on `cond[rows[k]]`.
    fn primitive_graph(&self, g: &mut Graph<T>, p: &Bound, cond: Var, s: Var, rows: Rc<Vec<usize>>) -> Var {
        let mut feats = vec![s];
        for k in 1..=self.config.time_frequencies {
            let arg = g.scale(s, T::lit(k as f64) * T::PI());
            feats.push(g.sin(arg));
            feats.push(g.cos(arg));
        }
        let feats = g.concat_cols(&feats);
        let latent = self.primitive_latent.forward(g, p, cond);
        let latent = g.gather_rows(latent, rows);
        let timed = g.matmul(feats, p.var(self.primitive_time));
        let h = g.add(latent, timed);
        let h = g.silu(h);
        let out = self.primitive.forward(g, p, h);
        let joints = self.config.joints;
        let mut offset = Vec::with_capacity(self.config.frame_dim());
        for _ in 0..joints {
            offset.extend(IDENTITY_6D.iter().map(|&x| T::lit(x)));
        }
        offset.extend([T::zero(); 3]);
        let offset = g.constant(Tensor::row(offset));
        g.add_row(out, offset)
    }

    /// Applies per-row rigid transforms to the root rotation and displacement.
    fn transform_graph(&self, g: &mut Graph<T>, raw: Var, rho_mat: Var, rho_t: Var) -> Var {
        let j = self.config.joints;
        let root = g.slice_cols(raw, 0, 6);
        let root = g.rot6d_to_mat(root);
        let root = g.mat3_mul(rho_mat, root);
        let root = g.gather_cols(root, Rc::new(FIRST_TWO_COLUMNS.to_vec()));
        let gamma = g.slice_cols(raw, 6 * j, 3);
        let gamma = g.mat3_vec(rho_mat, gamma);
        let gamma = g.add(gamma, rho_t);
        if j > 1 {
            let rest = g.slice_cols(raw, 6, 6 * (j - 1));
            g.concat_cols(&[root, rest, gamma])
        } else {
            g.concat_cols(&[root, gamma])
        }
    }

    /// Decodes body parameters at arbitrary normalized timestamps.
    pub fn decode(&self, z: &LatentSequence<T>, beta: &BodyShape<T>, taus: &[T]) -> Result<Vec<BodyParams<T>>> {
        self.check_latents(z, beta)?;
        if taus.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let zv = g.constant(z.to_tensor());
        let bv = g.constant(Tensor::row(beta.beta.clone()));
        let out = self.decode_graph(&mut g, &p, zv, bv, taus);
        let (theta, gamma) = (g.value(out.theta), g.value(out.gamma));
        if !theta.is_finite() || !gamma.is_finite() {
            return Err(Error::DegenerateInput("decoder produced non-finite values".into()));
        }
        Ok((0..taus.len())
            .map(|i| BodyParams {
                pose: Pose::from_flat(theta.row_slice(i)),
                gamma: [gamma.at(i, 0), gamma.at(i, 1), gamma.at(i, 2)],
            })
            .collect())
    }

    fn check_latents(&self, z: &LatentSequence<T>, beta: &BodyShape<T>) -> Result<()> {
        let c = &self.config;
        if z.primitives() != c.primitives || z.z.iter().any(|v| v.len() != c.latent_dim) {
            return Err(Error::LengthMismatch(format!("latents must be {}x{}", c.primitives, c.latent_dim)));
        }
        if beta.beta.len() != c.shape_dims {
            return Err(Error::LengthMismatch(format!(
                "shape has {} coefficients, model expects {}",
                beta.beta.len(),
                c.shape_dims
            )));
        }
        if z.z.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateInput("latents must be finite".into()));
        }
        Ok(())
    }

    /// Time-independent segment head for one primitive: raw duration and rigid transform.
    pub fn segment_params(&self, z_i: &[T], beta: &BodyShape<T>) -> (T, RigidTransform<T>) {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let zv = g.constant(Tensor::row(z_i.to_vec()));
        let bv = g.constant(Tensor::row(beta.beta.clone()));
        let cond = self.condition(&mut g, zv, bv);
        let out = self.segment.forward(&mut g, &p, cond);
        let v = g.value(out).data.clone();
        let mut rot = [T::zero(); 6];
        for (k, r) in rot.iter_mut().enumerate() {
            *r = v[1 + k] + T::lit(IDENTITY_6D[k]);
        }
        (v[0], RigidTransform::new(Rot6D::from_slice(&rot), [v[7], v[8], v[9]]))
    }

    /// Segment layout for a latent sequence.
    pub fn layout(&self, z: &LatentSequence<T>, beta: &BodyShape<T>) -> Result<SegmentLayout<T>> {
        self.check_latents(z, beta)?;
        let (raw, rho): (Vec<T>, Vec<_>) = z.z.iter().map(|zi| self.segment_params(zi, beta)).unzip();
        if self.config.fixed_segments {
            Ok(ops::uniform_layout(rho))
        } else {
            ops::layout(&raw, rho)
        }
    }

    /// Segment-local output of one primitive at local time `s`, before its rigid transform.
    pub fn decode_primitive(&self, z_i: &[T], beta: &BodyShape<T>, s: T) -> BodyParams<T> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let zv = g.constant(Tensor::row(z_i.to_vec()));
        let bv = g.constant(Tensor::row(beta.beta.clone()));
        let cond = self.condition(&mut g, zv, bv);
        let sv = g.constant(Tensor::scalar(s));
        let out = self.primitive_graph(&mut g, &p, cond, sv, Rc::new(vec![0]));
        let row = g.value(out).data.clone();
        let j = self.config.joints;
        BodyParams { pose: Pose::from_flat(&row[..6 * j]), gamma: [row[6 * j], row[6 * j + 1], row[6 * j + 2]] }
    }

    /// Encode, take the mean latents and decode at the input timestamps.
    pub fn reconstruct(&self, seq: &FrameSequence<T>) -> Result<Vec<BodyParams<T>>> {
        let dist = self.encode(seq)?;
        self.decode(&LatentSequence { z: dist.mu }, &seq.shape, &seq.timestamps)
    }
}

pub(crate) fn check_taus<T: Scalar>(taus: &[T]) -> Result<()> {
    let tol = T::lit(TAU_TOLERANCE);
    match taus.iter().find(|&&t| !(t >= -tol && t <= T::one() + tol)) {
        Some(t) => Err(Error::UnnormalizedInput(format!("timestamp {t} lies outside [0, 1]"))),
        None => Ok(()),
    }
}
