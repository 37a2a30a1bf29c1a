use std::path::{Path, PathBuf};

use motion_prior::body::{BodyModel, KinematicBody, Skeleton};
use motion_prior::completion::{
    complete, downsample, load_point_clouds, save_point_clouds, surface_sequence, train_init_encoder, CompletionProblem,
    FrameEncoding, InitEncoder, InitTrainConfig, PointCloudSequence,
};
use motion_prior::dataset::{generate, load_motion, make_splits, random_shape, save_motion, MotionSpec, DEFAULT_SKELETON_REF};
use motion_prior::evaluation::{
    ablation, ablation_csv, completion_sweep, curve_csv, duration_grid, generalization_curve, sweep_csv, truth_chamfer,
    write_report, AblationConfig, Report, SweepConfig,
};
use motion_prior::model::{config_hash, FrameSequence, MotionPrior};
use motion_prior::trainer::{train, write_history_csv};
use motion_prior::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{parse_error, RunConfig, SpecFile};
use crate::{AblateArgs, Cli, Command, CompleteArgs, DownsampleArgs, EvalGenArgs, ExportArgs, SweepArgs, SynthArgs, TrainArgs};

pub fn run(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.reseed(seed);
    }
    match &cli.command {
        Command::Synth(a) => synth(a, cli.seed.unwrap_or(0)),
        Command::Train(a) => train_cmd(a, cfg),
        Command::EvalGen(a) => eval_gen(a, cfg),
        Command::Ablate(a) => ablate(a, cfg),
        Command::Complete(a) => complete_cmd(a, cfg),
        Command::Downsample(a) => downsample_cmd(a, cfg, cli.seed.unwrap_or(0)),
        Command::Export(a) => export(a),
        Command::Sweep(a) => sweep(a, cfg),
    }
}

/// The invocation as typed, with the program name normalized.
fn command_line() -> String {
    let mut parts = vec!["motion-prior".to_string()];
    for arg in std::env::args().skip(1) {
        if arg.is_empty() || arg.contains(char::is_whitespace) {
            parts.push(format!("'{arg}'"));
        } else {
            parts.push(arg);
        }
    }
    parts.join(" ")
}

fn provenance(hash: &str) -> Vec<String> {
    vec![format!("command: {}", command_line()), format!("config_hash: {hash}")]
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn require(value: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    value.ok_or_else(|| Error::InvalidConfig(format!("no {what} given on the command line or in the config")))
}

/// Motion files (`*.json`) of a directory in name order.
fn load_dir(dir: &Path) -> Result<Vec<FrameSequence<f64>>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyInput(format!("no motion files in {}", dir.display())));
    }
    paths.iter().map(load_motion).collect()
}

/// Companion initialization-encoder blob of a prior checkpoint.
pub fn init_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("init.bin")
}

fn body(samples_per_bone: usize) -> KinematicBody {
    KinematicBody::new(Skeleton::default_body(), samples_per_bone)
}

fn synth(a: &SynthArgs, seed: u64) -> Result<()> {
    let text = std::fs::read_to_string(&a.spec).map_err(|e| io_err(&a.spec, e))?;
    let file: SpecFile = serde_json::from_str(&text).map_err(|e| parse_error(&a.spec, &e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs = match file {
        SpecFile::List(specs) => specs,
        SpecFile::Grid(grid) => {
            let skel = Skeleton::default_body();
            let shapes: Vec<_> = (0..grid.shapes).map(|_| random_shape(skel.shape_dims(), &mut rng)).collect();
            let mut specs = Vec::new();
            for (i, &kind) in grid.kinds.iter().enumerate() {
                for (j, shape) in shapes.iter().enumerate() {
                    let id = (i * shapes.len() + j) as u64;
                    specs.push(MotionSpec::new(kind, grid.duration, grid.fps, shape.clone(), seed.wrapping_mul(1_000_003).wrapping_add(id)));
                }
            }
            specs
        }
    };
    let prov = provenance(&config_hash(&specs));
    let skel = Skeleton::default_body();
    let write = |dir: &Path, specs: &[MotionSpec]| -> Result<()> {
        create_dir(dir)?;
        for (i, spec) in specs.iter().enumerate() {
            let seq = generate(spec, &skel)?;
            save_motion(dir.join(format!("{i:03}_{}.json", spec.kind)), &seq, DEFAULT_SKELETON_REF, &prov)?;
        }
        Ok(())
    };
    if a.split {
        let (train, val) = make_splits(&specs, &mut rng)?;
        write(&a.out.join("train"), &train)?;
        write(&a.out.join("val"), &val)?;
        eprintln!("wrote {} training and {} validation motions", train.len(), val.len());
    } else {
        write(&a.out, &specs)?;
        eprintln!("wrote {} motions", specs.len());
    }
    Ok(())
}

fn train_cmd(a: &TrainArgs, mut cfg: RunConfig) -> Result<()> {
    if let Some(d) = &a.data {
        cfg.data = Some(d.clone());
    }
    if let Some(o) = &a.out {
        cfg.out = Some(o.clone());
    }
    if let Some(e) = a.epochs {
        cfg.train.total_epochs = e;
    }
    match a.init_epochs {
        Some(0) => cfg.init = None,
        Some(n) => cfg.init = Some(InitTrainConfig { epochs: n, ..cfg.init.clone().unwrap_or_default() }),
        None => {}
    }
    let data = load_dir(&require(cfg.data.clone(), "training data")?)?;
    let out = require(cfg.out.clone(), "output directory")?;
    create_dir(&out)?;
    let prov = provenance(&cfg.hash());
    let mut prior = MotionPrior::<f64>::new(cfg.model.clone())?;
    let train_body = body(cfg.train.samples_per_bone);
    let history = train(&mut prior, &data, &train_body, &cfg.train, |r, _| {
        if r.epoch % 10 == 0 || r.epoch + 1 == cfg.train.total_epochs {
            eprintln!("epoch {} total {:.5} global {:.5} lr {:e}", r.epoch, r.total, r.global, r.lr);
        }
        Ok(())
    })?;
    write_history_csv(out.join("loss.csv"), &history, &prov)?;
    let checkpoint = out.join("prior.bin");
    prior.save(&checkpoint, &prov)?;
    if let Some(ic) = &cfg.init {
        let fit = body(cfg.completion.samples_per_bone);
        let dense = body(ic.source_samples_per_bone);
        let mut enc = InitEncoder::for_prior(&prior, &fit)?;
        let records = train_init_encoder(&mut enc, &prior, &data, &dense, ic, |r| {
            if r.epoch % 10 == 0 {
                eprintln!("init epoch {} total {:.5}", r.epoch, r.total);
            }
            Ok(())
        })?;
        let mut csv = String::new();
        for line in &prov {
            csv.push_str(&format!("# {line}\n"));
        }
        csv.push_str("epoch,L_global,L_beta,total\n");
        for r in &records {
            csv.push_str(&format!("{},{:e},{:e},{:e}\n", r.epoch, r.global, r.beta, r.total));
        }
        write_text(&out.join("init_loss.csv"), &csv)?;
        enc.save(init_path(&checkpoint), &prov)?;
    }
    Ok(())
}

/// `0.5,1,2` or `start:end:step`.
pub fn parse_durations(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidConfig(format!("cannot read durations `{text}`"));
    let parts: Vec<&str> = text.split(':').collect();
    let values = if parts.len() == 3 {
        let v: Vec<f64> = parts.iter().map(|p| p.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?;
        if !(v[2] > 0.0 && v[1] >= v[0]) {
            return Err(bad());
        }
        duration_grid(v[0], v[1], v[2])
    } else {
        text.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect::<Result<Vec<f64>>>()?
    };
    if values.is_empty() || values.iter().any(|d| !(*d > 0.0)) {
        return Err(bad());
    }
    Ok(values)
}

fn json_sibling(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn eval_gen(a: &EvalGenArgs, mut cfg: RunConfig) -> Result<()> {
    if let Some(d) = &a.durations {
        cfg.durations = parse_durations(d)?;
    }
    let data = a.data.clone().or(cfg.test_data.clone()).or(cfg.data.clone());
    let test = load_dir(&require(data, "test data")?)?;
    let prior = MotionPrior::<f64>::load(&a.checkpoint)?;
    let curve = generalization_curve(&prior, &test, &cfg.durations, &body(cfg.train.samples_per_bone))?;
    let hash = cfg.hash();
    let prov = provenance(&hash);
    write_text(&a.out, &curve_csv(&curve, &prov))?;
    write_report(json_sibling(&a.out), &Report { provenance: prov, config_hash: hash, seed: cfg.train.seed, result: curve })
}

fn ablate(a: &AblateArgs, mut cfg: RunConfig) -> Result<()> {
    if let Some(e) = a.epochs {
        cfg.train.total_epochs = e;
    }
    if let Some(s) = &a.seeds {
        cfg.ablation_seeds = s.clone();
    }
    let train_set = load_dir(&require(a.data.clone().or(cfg.data.clone()), "training data")?)?;
    let test = load_dir(&require(a.test_data.clone().or(cfg.test_data.clone()), "test data")?)?;
    let out = require(a.out.clone().or(cfg.out.clone()), "output directory")?;
    let mut ac = AblationConfig::latent_layout(&cfg.model, cfg.train.clone(), cfg.ablation_seeds.clone(), cfg.durations.clone());
    if !cfg.ablation_arms.is_empty() {
        ac.arms = cfg.ablation_arms.clone();
    }
    let table = ablation(&train_set, &test, &body(cfg.train.samples_per_bone), &ac, |arm, seed, r| {
        if r.epoch % 10 == 0 {
            eprintln!("{arm} seed {seed} epoch {} total {:.5}", r.epoch, r.total);
        }
        Ok(())
    })?;
    let hash = cfg.hash();
    let prov = provenance(&hash);
    write_text(&out.join("ablation.csv"), &ablation_csv(&table, &prov))?;
    write_report(out.join("ablation.json"), &Report { provenance: prov, config_hash: hash, seed: cfg.train.seed, result: table })
}

/// Applies `--points`/`--fps`; missing values keep the source resolution.
fn subsample(pcs: &PointCloudSequence<f64>, points: Option<usize>, fps: Option<f64>, seed: u64) -> Result<PointCloudSequence<f64>> {
    if points.is_none() && fps.is_none() {
        return Ok(pcs.clone());
    }
    let points = points.unwrap_or(pcs.min_points());
    let fps = match fps {
        Some(f) => f,
        None if pcs.len() > 1 => 1.0 / pcs.frame_interval(),
        None => 1.0,
    };
    downsample(pcs, points, fps, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Debug, Serialize)]
struct CompletionReport {
    observed_frames: usize,
    points_per_frame: usize,
    output_frames: usize,
    output_fps: f64,
    iterations: usize,
    objective_initial: f64,
    objective_final: f64,
    /// Mean per observed frame of the Chamfer to the observations, mm.
    observed_chamfer_initial_mm: f64,
    observed_chamfer_final_mm: f64,
    /// Mean over output frames of the Chamfer to the ground-truth surface, mm.
    truth_chamfer_initial_mm: Option<f64>,
    truth_chamfer_final_mm: Option<f64>,
}

fn complete_cmd(a: &CompleteArgs, mut cfg: RunConfig) -> Result<()> {
    if let Some(f) = a.out_fps {
        cfg.completion.output_fps = f;
    }
    if let Some(n) = a.iterations {
        cfg.completion.iterations = n;
    }
    let prior = MotionPrior::<f64>::load(&a.checkpoint)?;
    let init = InitEncoder::<f64>::load(a.init.clone().unwrap_or_else(|| init_path(&a.checkpoint)))?;
    let source = load_point_clouds(&a.input)?;
    let observed = subsample(&source, a.points, a.fps, cfg.sweep.seed)?;
    let fit = body(cfg.completion.samples_per_bone);
    let result = complete(&observed, &cfg.completion, &prior, Some(&init), &fit)?;
    let problem = CompletionProblem::new(&prior, &fit, &observed, result.normalization, result.z_init.to_tensor(), cfg.completion.lambda_prior);
    let frames = observed.len() as f64;
    let chamfer_at = |z: &motion_prior::model::LatentSequence<f64>, beta: &motion_prior::body::BodyShape<f64>| {
        problem.evaluate(&z.to_tensor(), &motion_prior::autodiff::Tensor::row(beta.beta.clone())).chamfer / frames
    };
    let (truth_initial, truth_final) = match &a.truth {
        Some(path) => {
            let truth = load_motion(path)?;
            let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
            (
                Some(mean(truth_chamfer(&result.initial_motion, &truth, &fit)?)),
                Some(mean(truth_chamfer(&result.motion, &truth, &fit)?)),
            )
        }
        None => (None, None),
    };
    let report = CompletionReport {
        observed_frames: observed.len(),
        points_per_frame: observed.min_points(),
        output_frames: result.motion.len(),
        output_fps: cfg.completion.output_fps,
        iterations: result.iterations,
        objective_initial: result.objective[0],
        objective_final: *result.objective.last().expect("objective starts at the initialization"),
        observed_chamfer_initial_mm: chamfer_at(&result.z_init, &result.beta_init),
        observed_chamfer_final_mm: chamfer_at(&result.z, &result.beta),
        truth_chamfer_initial_mm: truth_initial,
        truth_chamfer_final_mm: truth_final,
    };
    let hash = cfg.hash();
    let prov = provenance(&hash);
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_motion(&a.out, &result.motion, DEFAULT_SKELETON_REF, &prov)?;
    let report_path = a.out.with_extension("report.json");
    write_report(&report_path, &Report { provenance: prov, config_hash: hash, seed: cfg.sweep.seed, result: report })?;
    eprintln!(
        "completed {} frames, Chamfer to observations {:.2} -> {:.2} mm",
        result.motion.len(),
        chamfer_at(&result.z_init, &result.beta_init),
        chamfer_at(&result.z, &result.beta)
    );
    Ok(())
}

fn downsample_cmd(a: &DownsampleArgs, cfg: RunConfig, seed: u64) -> Result<()> {
    let source = match (&a.input, &a.motion) {
        (Some(path), _) => load_point_clouds(path)?,
        (None, Some(path)) => surface_sequence(&load_motion(path)?, &body(cfg.dense_samples_per_bone))?,
        (None, None) => return Err(Error::InvalidConfig("give --in or --motion".into())),
    };
    let out = subsample(&source, a.points, a.fps, seed)?;
    let encoding = if a.binary { FrameEncoding::Binary } else { FrameEncoding::Text };
    #[derive(Serialize)]
    struct Params<'a> {
        points: Option<usize>,
        fps: Option<f64>,
        seed: u64,
        dense_samples_per_bone: usize,
        binary: bool,
        input: &'a Option<PathBuf>,
        motion: &'a Option<PathBuf>,
    }
    let hash = config_hash(&Params {
        points: a.points,
        fps: a.fps,
        seed,
        dense_samples_per_bone: cfg.dense_samples_per_bone,
        binary: a.binary,
        input: &a.input,
        motion: &a.motion,
    });
    save_point_clouds(&a.out, &out, encoding, &provenance(&hash))
}

fn export(a: &ExportArgs) -> Result<()> {
    let seq = load_motion(&a.input)?;
    let b = body(a.samples_per_bone);
    let hash = config_hash(&(a.surface, a.samples_per_bone));
    let prov = provenance(&hash);
    let joints = seq
        .poses
        .iter()
        .zip(&seq.displacements)
        .map(|(p, &g)| b.joints(p, g, &seq.shape))
        .collect::<Result<Vec<_>>>()?;
    create_dir(&a.out)?;
    save_point_clouds(a.out.join("joints.json"), &PointCloudSequence::new(seq.timestamps.clone(), joints)?, FrameEncoding::Text, &prov)?;
    if a.surface {
        save_point_clouds(a.out.join("surface.json"), &surface_sequence(&seq, &b)?, FrameEncoding::Text, &prov)?;
    }
    Ok(())
}

fn sweep(a: &SweepArgs, cfg: RunConfig) -> Result<()> {
    let prior = MotionPrior::<f64>::load(&a.checkpoint)?;
    let init = InitEncoder::<f64>::load(a.init.clone().unwrap_or_else(|| init_path(&a.checkpoint)))?;
    let data = a.data.clone().or(cfg.test_data.clone()).or(cfg.data.clone());
    let test = load_dir(&require(data, "test data")?)?;
    let sc = SweepConfig { completion: cfg.completion.clone(), ..cfg.sweep.clone() };
    let grid = completion_sweep(&prior, &init, &test, &body(cfg.completion.samples_per_bone), &body(cfg.dense_samples_per_bone), &sc)?;
    let hash = cfg.hash();
    let prov = provenance(&hash);
    write_text(&a.out, &sweep_csv(&grid, &prov))?;
    write_report(json_sibling(&a.out), &Report { provenance: prov, config_hash: hash, seed: sc.seed, result: grid })
}
