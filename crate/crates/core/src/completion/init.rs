//! Point-set initialization encoder: maps a point-cloud sequence to latents and a shape.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::body::{BodyModel, BodyShape, Pose};
use crate::error::{Error, Result};
use crate::losses;
use crate::model::{read_meta, read_params, write_params, CheckpointMeta, FrameSequence, LatentSequence, ModelConfig, MotionPrior};
use crate::nn::{Adam, Bound, EncoderLayer, LayerNorm, Linear, Mlp, ParamId, ParamStore, QueryLayer};
use crate::scalar::{Scalar, Vec3};
use crate::trainer::{apply_normalization, resample, NormalizationInfo};

use super::cloud::PointCloudSequence;

const INIT_KIND: &str = "init_encoder";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitEncoderConfig {
    /// Transformer, latent and shape dimensions, copied from the prior.
    pub model: ModelConfig,
    /// Widths of the shared per-point map after the 3 input coordinates.
    pub point_hidden: Vec<usize>,
    pub seed: u64,
}

impl InitEncoderConfig {
    pub fn for_prior(model: &ModelConfig) -> Self {
        Self { model: model.clone(), point_hidden: vec![64, 128], seed: model.seed.wrapping_add(1) }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.point_hidden.is_empty() || self.point_hidden.contains(&0) {
            return Err(Error::InvalidConfig("point_hidden needs at least one positive width".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InitCheckpoint {
    config: InitEncoderConfig,
    trained_epochs: usize,
    centroid_offset: [f64; 3],
}

/// Per-frame set encoder (shared point map and max pooling) in front of the prior's
/// transformer topology, with an extra shape head.
#[derive(Debug, Clone)]
pub struct InitEncoder<T> {
    pub config: InitEncoderConfig,
    pub params: ParamStore<T>,
    /// Epochs of training received; zero means untrained.
    pub trained_epochs: usize,
    /// Mean surface point relative to the root in the rest pose.
    pub centroid_offset: [f64; 3],
    point_map: Mlp,
    embed: Linear,
    encoder: Vec<EncoderLayer>,
    encoder_norm: LayerNorm,
    queries: ParamId,
    query_layers: Vec<QueryLayer>,
    output_norm: LayerNorm,
    mu_head: Linear,
    beta_head: Linear,
}

/// Inputs of the encoder derived from one point-cloud sequence.
#[derive(Debug, Clone)]
pub struct CloudFeatures<T> {
    pub info: NormalizationInfo,
    /// Root displacement estimated from the cloud centroids, metres.
    pub gamma: Vec<Vec3<f64>>,
    pub taus: Vec<T>,
    /// All points relative to their frame centroid, stacked frame by frame.
    centred: Tensor<T>,
    bounds: Vec<usize>,
}

/// Mean surface point of the rest pose, relative to the root.
pub fn rest_centroid_offset<T: Scalar, B: BodyModel<T>>(body: &B) -> Result<[f64; 3]> {
    let pts = body.surface(&Pose::identity(body.num_joints()), [T::zero(); 3], &BodyShape::zeros(body.shape_dims()))?;
    let n = pts.len() as f64;
    Ok([0, 1, 2].map(|k| pts.iter().map(|p| p[k].as_f64()).sum::<f64>() / n))
}

/// Normalization from the centroid trajectory shifted by the rest offset; time spans the
/// covered duration of the frames.
pub fn estimate_normalization<T: Scalar>(pcs: &PointCloudSequence<T>, centroid_offset: [f64; 3]) -> (NormalizationInfo, Vec<Vec3<f64>>) {
    let gamma: Vec<Vec3<f64>> = pcs.centroids().iter().map(|c| [0, 1, 2].map(|k| c[k].as_f64() - centroid_offset[k])).collect();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for g in &gamma {
        for k in 0..3 {
            lo[k] = lo[k].min(g[k]);
            hi[k] = hi[k].max(g[k]);
        }
    }
    let t0 = pcs.timestamps[0].as_f64();
    (NormalizationInfo::from_bounds(lo, hi, t0, t0 + pcs.covered_duration().as_f64()), gamma)
}

impl<T: Scalar> InitEncoder<T> {
    pub fn new(config: InitEncoderConfig, centroid_offset: [f64; 3]) -> Result<Self> {
        config.validate()?;
        let c = &config.model;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = ParamStore::new();
        let width = c.token_dim();
        let mut widths = vec![3];
        widths.extend(&config.point_hidden);
        let pooled = *widths.last().expect("nonempty widths");
        let point_map = Mlp::new(&mut p, "points", &widths, &mut rng);
        let embed = Linear::new(&mut p, "embed", pooled + 3, c.embed_dim, &mut rng);
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
        let beta_head = Linear::new(&mut p, "beta", width, c.shape_dims, &mut rng);
        Ok(Self {
            config,
            params: p,
            trained_epochs: 0,
            centroid_offset,
            point_map,
            embed,
            encoder,
            encoder_norm,
            queries,
            query_layers,
            output_norm,
            mu_head,
            beta_head,
        })
    }

    /// Encoder matching `prior`, with the rest offset measured on `body`.
    pub fn for_prior<B: BodyModel<T>>(prior: &MotionPrior<T>, body: &B) -> Result<Self> {
        Self::new(InitEncoderConfig::for_prior(&prior.config), rest_centroid_offset(body)?)
    }

    pub fn features(&self, pcs: &PointCloudSequence<T>) -> Result<CloudFeatures<T>> {
        pcs.validate()?;
        if pcs.len() < 2 {
            return Err(Error::DegenerateInput("completion needs at least two frames".into()));
        }
        let (info, gamma) = estimate_normalization(pcs, self.centroid_offset);
        let mut bounds = vec![0];
        let mut data = Vec::new();
        for (cloud, c) in pcs.clouds.iter().zip(pcs.centroids()) {
            for p in cloud {
                data.extend([p[0] - c[0], p[1] - c[1], p[2] - c[2]]);
            }
            bounds.push(bounds.last().expect("starts at zero") + cloud.len());
        }
        let rows = bounds[bounds.len() - 1];
        let taus = pcs.timestamps.iter().map(|&t| info.normalize_time(t)).collect();
        Ok(CloudFeatures { info, gamma, taus, centred: Tensor::new(rows, 3, data), bounds })
    }

    /// Latent means (`m × D`) and shape (`1 × B`) on graph nodes.
    pub fn encode_graph(&self, g: &mut Graph<T>, p: &Bound, f: &CloudFeatures<T>) -> (Var, Var) {
        let pts = g.constant(f.centred.clone());
        let h = self.point_map.forward(g, p, pts);
        let pooled = g.max_pool_segments(h, &f.bounds);
        let n = f.taus.len();
        let gamma_norm: Vec<T> = f.gamma.iter().flat_map(|&gm| f.info.normalize_gamma([0, 1, 2].map(|k| T::lit(gm[k])))).collect();
        let gamma_norm = g.constant(Tensor::new(n, 3, gamma_norm));
        let frame = g.concat_cols(&[pooled, gamma_norm]);
        let e = self.embed.forward(g, p, frame);
        let e = g.tanh(e);
        let taus = g.constant(Tensor::column(f.taus.clone()));
        let mut x = g.concat_cols(&[e, taus]);
        for layer in &self.encoder {
            x = layer.forward(g, p, x);
        }
        let memory = self.encoder_norm.forward(g, p, x);
        let mut q = p.var(self.queries);
        for layer in &self.query_layers {
            q = layer.forward(g, p, q, memory);
        }
        let q = self.output_norm.forward(g, p, q);
        let mu = self.mu_head.forward(g, p, q);
        let pooled_q = g.sum_rows(q);
        let pooled_q = g.scale(pooled_q, T::one() / T::lit(self.config.model.primitives as f64));
        (mu, self.beta_head.forward(g, p, pooled_q))
    }

    /// Initial latents and shape for a point-cloud sequence.
    pub fn encode(&self, pcs: &PointCloudSequence<T>) -> Result<(LatentSequence<T>, BodyShape<T>, CloudFeatures<T>)> {
        if self.trained_epochs == 0 {
            return Err(Error::UntrainedInitEncoder);
        }
        let f = self.features(pcs)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let (mu, beta) = self.encode_graph(&mut g, &p, &f);
        let (mu, beta) = (g.value(mu).clone(), g.value(beta).clone());
        if !mu.is_finite() || !beta.is_finite() {
            return Err(Error::DegenerateInput("initialization encoder produced non-finite values".into()));
        }
        Ok((LatentSequence::from_tensor(&mu), BodyShape::new(beta.data), f))
    }

    pub fn save(&self, blob: impl AsRef<Path>, provenance: &[String]) -> Result<()> {
        let ck = InitCheckpoint { config: self.config.clone(), trained_epochs: self.trained_epochs, centroid_offset: self.centroid_offset };
        write_params(blob.as_ref(), INIT_KIND, &ck, &self.params, provenance)
    }

    pub fn load(blob: impl AsRef<Path>) -> Result<Self> {
        let blob = blob.as_ref();
        let meta: CheckpointMeta<InitCheckpoint> = read_meta(blob, INIT_KIND)?;
        let mut enc = Self::new(meta.config.config.clone(), meta.config.centroid_offset)?;
        enc.trained_epochs = meta.config.trained_epochs;
        read_params(blob, &meta, &mut enc.params)?;
        Ok(enc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub batches_per_epoch: usize,
    pub lr: f64,
    /// Window durations in seconds.
    pub duration_range: [f64; 2],
    /// Observation rates drawn per example.
    pub fps_choices: Vec<f64>,
    /// Points per frame drawn uniformly from this inclusive range.
    pub points_range: [usize; 2],
    /// Dense decoded frames compared against ground truth per example.
    pub supervision_frames: usize,
    /// Surface density of the source clouds before subsampling.
    pub source_samples_per_bone: usize,
    pub lambda_beta: f64,
    pub seed: u64,
}

impl Default for InitTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 8,
            batches_per_epoch: 4,
            lr: 1e-3,
            duration_range: [3.0, 5.0],
            fps_choices: vec![5.0, 10.0],
            points_range: [100, 1000],
            supervision_frames: 40,
            source_samples_per_bone: 53,
            lambda_beta: 1.0,
            seed: 0,
        }
    }
}

impl InitTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.duration_range;
        let [pmin, pmax] = self.points_range;
        if self.batch_size == 0 || self.batches_per_epoch == 0 || self.supervision_frames < 2 || pmin == 0 || pmax < pmin {
            return Err(Error::InvalidConfig("initialization training sizes must be positive".into()));
        }
        if !(lo > 0.0 && hi >= lo) || self.fps_choices.is_empty() || self.fps_choices.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::InvalidConfig("invalid duration range or observation rates".into()));
        }
        if !(self.lr > 0.0) || !(self.lambda_beta >= 0.0) {
            return Err(Error::InvalidConfig("lr must be positive and lambda_beta non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitEpochRecord {
    pub epoch: usize,
    pub global: f64,
    pub beta: f64,
    pub total: f64,
}

/// One synthetic observation: sparse clouds plus the dense motion they came from.
#[derive(Debug, Clone)]
pub struct ObservedWindow<T> {
    pub clouds: PointCloudSequence<T>,
    /// Ground-truth motion at `supervision` timestamps inside the covered span.
    pub truth: FrameSequence<T>,
}

/// Samples a window of `source`, observes its surface at `fps` with `points` points per
/// frame, and resamples the ground truth at `supervision` times within the covered span.
pub fn observe_window<T: Scalar, B: BodyModel<T>>(
    source: &FrameSequence<T>,
    dense_body: &B,
    duration: f64,
    fps: f64,
    points: usize,
    supervision: usize,
    rng: &mut impl Rng,
) -> Result<ObservedWindow<T>> {
    let count = ((duration * fps).floor() as usize).max(2);
    let cover = count as f64 / fps;
    let t_first = source.timestamps[0].as_f64();
    let available = source.timestamps[source.len() - 1].as_f64() - t_first;
    if available < cover {
        return Err(Error::SourceTooShort(format!("source lasts {available:.3} s, observation covers {cover:.3} s")));
    }
    let start = t_first + rng.random_range(0.0..=available - cover);
    let times: Vec<T> = (0..count).map(|i| T::lit(start + i as f64 / fps)).collect();
    let observed = resample(source, &times)?;
    let clouds = observed
        .poses
        .iter()
        .zip(&observed.displacements)
        .map(|(p, &gm)| {
            let dense = dense_body.surface(p, gm, &observed.shape)?;
            if points > dense.len() {
                return Err(Error::ResolutionTooHigh(format!("{points} points requested, surface has {}", dense.len())));
            }
            let mut keep = rand::seq::index::sample(rng, dense.len(), points).into_vec();
            keep.sort_unstable();
            Ok(keep.into_iter().map(|j| dense[j]).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let sup: Vec<T> = (0..supervision).map(|k| T::lit(start + cover * k as f64 / supervision as f64)).collect();
    Ok(ObservedWindow { clouds: PointCloudSequence::new(times, clouds)?, truth: resample(source, &sup)? })
}

/// Trains `encoder` against a frozen `prior`: its latents and shape are decoded by the prior
/// and compared with the ground-truth frames, plus a shape regression term.
pub fn train_init_encoder<T: Scalar, B: BodyModel<T>>(
    encoder: &mut InitEncoder<T>,
    prior: &MotionPrior<T>,
    dataset: &[FrameSequence<T>],
    dense_body: &B,
    cfg: &InitTrainConfig,
    mut on_epoch: impl FnMut(&InitEpochRecord) -> Result<()>,
) -> Result<Vec<InitEpochRecord>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput("initialization training needs at least one sequence".into()));
    }
    if encoder.config.model.primitives != prior.config.primitives
        || encoder.config.model.latent_dim != prior.config.latent_dim
        || encoder.config.model.shape_dims != prior.config.shape_dims
    {
        return Err(Error::InvalidConfig("initialization encoder does not match the prior's latent layout".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&encoder.params.shapes());
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut sums = [0.0; 3];
        let mut count = 0usize;
        for _ in 0..cfg.batches_per_epoch {
            let mut g = Graph::new();
            let p = encoder.params.bind(&mut g, true);
            let pp = prior.params.bind(&mut g, false);
            let mut total = None;
            for _ in 0..cfg.batch_size {
                let source = &dataset[rng.random_range(0..dataset.len())];
                let [lo, hi] = cfg.duration_range;
                let duration = if hi > lo { rng.random_range(lo..=hi) } else { lo };
                let fps = cfg.fps_choices[rng.random_range(0..cfg.fps_choices.len())];
                let points = rng.random_range(cfg.points_range[0]..=cfg.points_range[1]);
                let obs = observe_window(source, dense_body, duration, fps, points, cfg.supervision_frames, &mut rng)?;
                let f = encoder.features(&obs.clouds)?;
                let (mu, beta) = encoder.encode_graph(&mut g, &p, &f);
                let truth = apply_normalization(&obs.truth, &f.info);
                let dec = prior.decode_graph(&mut g, &pp, mu, beta, &truth.timestamps);
                let pred = g.concat_cols(&[dec.theta, dec.gamma]);
                let target = g.constant(truth.frame_matrix());
                let global = losses::mean_row_sq_err(&mut g, pred, target);
                let beta_gt = g.constant(Tensor::row(obs.truth.shape.beta.clone()));
                let diff = g.sub(beta, beta_gt);
                let sq = g.square(diff);
                let beta_err = g.mean_all(sq);
                let weighted = g.scale(beta_err, T::lit(cfg.lambda_beta));
                let loss = g.add(global, weighted);
                sums[0] += g.value(global).item().as_f64();
                sums[1] += g.value(beta_err).item().as_f64();
                sums[2] += g.value(loss).item().as_f64();
                count += 1;
                total = Some(match total {
                    None => loss,
                    Some(acc) => g.add(acc, loss),
                });
            }
            let loss = g.scale(total.expect("batch is nonempty"), T::one() / T::lit(cfg.batch_size as f64));
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch: encoder.trained_epochs, detail: format!("initialization batch loss {value}") });
            }
            let grads = g.backward(loss);
            let grads = encoder.params.collect_grads(&p, &grads);
            adam.step(encoder.params.tensors_mut(), &grads, cfg.lr);
        }
        let c = count as f64;
        let record = InitEpochRecord { epoch: encoder.trained_epochs, global: sums[0] / c, beta: sums[1] / c, total: sums[2] / c };
        encoder.trained_epochs += 1;
        on_epoch(&record)?;
        history.push(record);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{KinematicBody, Skeleton};
    use crate::dataset::{generate, MotionKind, MotionSpec};
    use rand::seq::SliceRandom;

    fn setup() -> (MotionPrior<f64>, KinematicBody, FrameSequence<f64>) {
        let cfg = ModelConfig { feed_forward: 16, primitive_hidden: vec![16], encoder_layers: 1, ..ModelConfig::tiny() };
        let body = KinematicBody::new(Skeleton::default_body(), 53);
        let seq = generate(&MotionSpec::new(MotionKind::WalkLine, 6.0, 30.0, BodyShape::zeros(8), 1), &body.skeleton).unwrap();
        (MotionPrior::new(cfg).unwrap(), body, seq)
    }

    #[test]
    fn untrained_encoder_is_rejected() {
        let (prior, body, seq) = setup();
        let enc = InitEncoder::for_prior(&prior, &body).unwrap();
        let obs = observe_window(&seq, &body, 2.0, 5.0, 50, 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(enc.encode(&obs.clouds), Err(Error::UntrainedInitEncoder)));
    }

    #[test]
    fn encoding_is_permutation_invariant_and_sized() {
        let (prior, body, seq) = setup();
        let mut enc = InitEncoder::for_prior(&prior, &body).unwrap();
        enc.trained_epochs = 1;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for points in [100, 1000] {
            let obs = observe_window(&seq, &body, 3.0, 5.0, points, 4, &mut rng).unwrap();
            let (z, beta, _) = enc.encode(&obs.clouds).unwrap();
            assert_eq!((z.primitives(), z.z[0].len(), beta.beta.len()), (2, 16, 8));
            let mut shuffled = obs.clouds.clone();
            for c in &mut shuffled.clouds {
                c.shuffle(&mut rng);
            }
            let (z2, beta2, _) = enc.encode(&shuffled).unwrap();
            assert_eq!(z, z2);
            assert_eq!(beta, beta2);
        }
    }

    #[test]
    fn observed_windows_cover_their_span() {
        let (_, body, seq) = setup();
        let obs = observe_window(&seq, &body, 4.0, 5.0, 100, 10, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(obs.clouds.len(), 20);
        assert!((obs.clouds.covered_duration() - 4.0).abs() < 1e-9);
        assert!(obs.clouds.clouds.iter().all(|c| c.len() == 100));
        let t0 = obs.clouds.timestamps[0];
        assert_eq!(obs.truth.timestamps[0], t0);
        assert!(obs.truth.timestamps.iter().all(|&t| t < t0 + 4.0));
    }

    #[test]
    fn training_reduces_the_loss_and_roundtrips() {
        let (prior, body, seq) = setup();
        let mut enc = InitEncoder::for_prior(&prior, &body).unwrap();
        let cfg = InitTrainConfig { epochs: 12, batch_size: 2, batches_per_epoch: 1, lr: 3e-3, points_range: [60, 80], supervision_frames: 8, ..InitTrainConfig::default() };
        let before = prior.params.flatten();
        let history = train_init_encoder(&mut enc, &prior, &[seq.clone()], &body, &cfg, |_| Ok(())).unwrap();
        assert_eq!(prior.params.flatten(), before);
        assert_eq!(enc.trained_epochs, 12);
        let head: f64 = history[..3].iter().map(|r| r.total).sum();
        let tail: f64 = history[9..].iter().map(|r| r.total).sum();
        assert!(tail < head, "{head} -> {tail}");

        let dir = tempfile::tempdir().unwrap();
        let blob = dir.path().join("init.bin");
        enc.save(&blob, &[]).unwrap();
        let loaded = InitEncoder::<f64>::load(&blob).unwrap();
        assert_eq!(loaded.params.flatten(), enc.params.flatten());
        assert_eq!((loaded.trained_epochs, loaded.centroid_offset), (12, enc.centroid_offset));
        assert!(matches!(MotionPrior::<f64>::load(&blob), Err(Error::InvalidConfig(_))));
    }
}
