//! Point-cloud sequences, the Chamfer metric, downsampling and the on-disk format.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::kernels::nearest_both;
use crate::body::BodyModel;
use crate::error::{Error, Result};
use crate::model::FrameSequence;
use crate::scalar::{Scalar, Vec3};

/// Millimetres per metre.
pub const MM_PER_M: f64 = 1000.0;
pub const CLOUD_FORMAT_VERSION: u32 = 1;

/// Sparse, unordered point clouds at increasing timestamps (seconds, metres).
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudSequence<T> {
    pub timestamps: Vec<T>,
    pub clouds: Vec<Vec<Vec3<T>>>,
}

impl<T: Scalar> PointCloudSequence<T> {
    pub fn new(timestamps: Vec<T>, clouds: Vec<Vec<Vec3<T>>>) -> Result<Self> {
        let pcs = Self { timestamps, clouds };
        pcs.validate()?;
        Ok(pcs)
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.timestamps.is_empty() {
            return Err(Error::EmptyInput("point-cloud sequence has no frames".into()));
        }
        if self.timestamps.len() != self.clouds.len() {
            return Err(Error::LengthMismatch(format!(
                "{} timestamps but {} clouds",
                self.timestamps.len(),
                self.clouds.len()
            )));
        }
        if let Some(i) = self.timestamps.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::DegenerateInput(format!("timestamps not strictly increasing at frame {}", i + 1)));
        }
        if let Some(i) = self.clouds.iter().position(Vec::is_empty) {
            return Err(Error::EmptyCloud(format!("frame {i} has no points")));
        }
        if self.clouds.iter().flatten().flatten().any(|v| !v.is_finite()) || self.timestamps.iter().any(|t| !t.is_finite()) {
            return Err(Error::DegenerateInput("non-finite point or timestamp".into()));
        }
        Ok(())
    }

    /// Median spacing of consecutive timestamps; zero for a single frame.
    pub fn frame_interval(&self) -> T {
        let mut gaps: Vec<T> = self.timestamps.windows(2).map(|w| w[1] - w[0]).collect();
        if gaps.is_empty() {
            return T::zero();
        }
        gaps.sort_by(|a, b| a.partial_cmp(b).expect("finite timestamps"));
        gaps[gaps.len() / 2]
    }

    /// Seconds covered by the frames, counting one frame interval for the last frame.
    pub fn covered_duration(&self) -> T {
        self.timestamps[self.len() - 1] - self.timestamps[0] + self.frame_interval()
    }

    pub fn min_points(&self) -> usize {
        self.clouds.iter().map(Vec::len).min().unwrap_or(0)
    }

    /// Per-frame mean point; each axis is summed in sorted order, so the result does not
    /// depend on point order.
    pub fn centroids(&self) -> Vec<Vec3<T>> {
        self.clouds
            .iter()
            .map(|c| {
                let n = T::lit(c.len() as f64);
                [0, 1, 2].map(|k| {
                    let mut v: Vec<T> = c.iter().map(|p| p[k]).collect();
                    v.sort_by(|a, b| a.partial_cmp(b).expect("finite points"));
                    v.into_iter().sum::<T>() / n
                })
            })
            .collect()
    }
}

/// Symmetric mean nearest-neighbour distance in millimetres.
pub fn chamfer<T: Scalar>(a: &[Vec3<T>], b: &[Vec3<T>]) -> Result<T> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud("chamfer needs two nonempty clouds".into()));
    }
    Ok(nearest_both(a, b).chamfer * T::lit(MM_PER_M))
}

/// Surface samples of every frame of a motion.
pub fn surface_sequence<T: Scalar, B: BodyModel<T>>(seq: &FrameSequence<T>, body: &B) -> Result<PointCloudSequence<T>> {
    let clouds = seq
        .poses
        .iter()
        .zip(&seq.displacements)
        .map(|(p, &g)| body.surface(p, g, &seq.shape))
        .collect::<Result<Vec<_>>>()?;
    PointCloudSequence::new(seq.timestamps.clone(), clouds)
}

/// Mean over frames of the Chamfer distance between the surfaces of two motions
/// sampled at the same timestamps.
pub fn surface_chamfer<T: Scalar, B: BodyModel<T>>(a: &FrameSequence<T>, b: &FrameSequence<T>, body: &B) -> Result<T> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::LengthMismatch(format!("motions have {} and {} frames", a.len(), b.len())));
    }
    let sa = surface_sequence(a, body)?;
    let sb = surface_sequence(b, body)?;
    let mut total = T::zero();
    for (x, y) in sa.clouds.iter().zip(&sb.clouds) {
        total += chamfer(x, y)?;
    }
    Ok(total / T::lit(a.len() as f64))
}

/// Keeps `points_per_frame` random points of every frame and the frames nearest to
/// a uniform `fps` grid starting at the first timestamp.
pub fn downsample<T: Scalar>(
    pcs: &PointCloudSequence<T>,
    points_per_frame: usize,
    fps: f64,
    rng: &mut impl Rng,
) -> Result<PointCloudSequence<T>> {
    pcs.validate()?;
    if points_per_frame == 0 || !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::InvalidConfig("points per frame and fps must be positive".into()));
    }
    if points_per_frame > pcs.min_points() {
        return Err(Error::ResolutionTooHigh(format!(
            "{points_per_frame} points requested, smallest frame has {}",
            pcs.min_points()
        )));
    }
    let interval = pcs.frame_interval().as_f64();
    if pcs.len() > 1 && fps * interval > 1.0 + 1e-9 {
        return Err(Error::ResolutionTooHigh(format!("{fps} fps requested, source runs at {:.6} fps", 1.0 / interval)));
    }
    let t0 = pcs.timestamps[0].as_f64();
    let last = pcs.timestamps[pcs.len() - 1].as_f64();
    let tol = 1e-9 * (1.0 + last.abs());
    let mut picked: Vec<usize> = Vec::new();
    for k in 0.. {
        let t = t0 + k as f64 / fps;
        if t > last + tol {
            break;
        }
        let hi = pcs.timestamps.partition_point(|&x| x.as_f64() < t).min(pcs.len() - 1);
        let idx = if hi > 0 && t - pcs.timestamps[hi - 1].as_f64() <= pcs.timestamps[hi].as_f64() - t { hi - 1 } else { hi };
        if picked.last() != Some(&idx) {
            picked.push(idx);
        }
    }
    let timestamps = picked.iter().map(|&i| pcs.timestamps[i]).collect();
    let clouds = picked
        .iter()
        .map(|&i| {
            let src = &pcs.clouds[i];
            let mut keep = rand::seq::index::sample(rng, src.len(), points_per_frame).into_vec();
            keep.sort_unstable();
            keep.into_iter().map(|j| src[j]).collect()
        })
        .collect();
    PointCloudSequence::new(timestamps, clouds)
}

/// Per-frame storage of a point-cloud sequence on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameEncoding {
    /// Whitespace-separated `x y z` lines.
    Text,
    /// Little-endian `f64` triples.
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudManifest {
    pub format_version: u32,
    /// `m` or `mm`.
    pub units: String,
    pub timestamps: Vec<f64>,
    /// Frame files relative to the manifest.
    pub frames: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub provenance: Vec<String>,
}

/// Writes `manifest` plus one frame file per cloud next to it.
pub fn save_point_clouds(
    manifest: impl AsRef<Path>,
    pcs: &PointCloudSequence<f64>,
    encoding: FrameEncoding,
    provenance: &[String],
) -> Result<()> {
    let manifest = manifest.as_ref();
    pcs.validate()?;
    let dir = manifest.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = manifest.file_stem().map_or("cloud".into(), |s| s.to_string_lossy().into_owned());
    let ext = match encoding {
        FrameEncoding::Text => "xyz",
        FrameEncoding::Binary => "bin",
    };
    let mut frames = Vec::with_capacity(pcs.len());
    for (i, cloud) in pcs.clouds.iter().enumerate() {
        let name = format!("{stem}_{i:05}.{ext}");
        let path = dir.join(&name);
        let bytes = match encoding {
            FrameEncoding::Text => cloud.iter().map(|p| format!("{:?} {:?} {:?}\n", p[0], p[1], p[2])).collect::<String>().into_bytes(),
            FrameEncoding::Binary => cloud.iter().flatten().flat_map(|v| v.to_le_bytes()).collect(),
        };
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        frames.push(name);
    }
    let doc = CloudManifest {
        format_version: CLOUD_FORMAT_VERSION,
        units: "m".into(),
        timestamps: pcs.timestamps.clone(),
        frames,
        provenance: provenance.to_vec(),
    };
    let json = serde_json::to_string_pretty(&doc).map_err(|e| Error::json(manifest.display().to_string(), e))?;
    fs::write(manifest, json).map_err(|e| Error::io(manifest, e))
}

pub fn load_point_clouds(manifest: impl AsRef<Path>) -> Result<PointCloudSequence<f64>> {
    let manifest = manifest.as_ref();
    let name = manifest.display().to_string();
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::json(&name, e))?;
    let version = raw.get("format_version").and_then(serde_json::Value::as_u64);
    if version != Some(u64::from(CLOUD_FORMAT_VERSION)) {
        return Err(Error::SchemaVersionMismatch(format!(
            "point-cloud manifest format {}, expected {CLOUD_FORMAT_VERSION}",
            version.map_or("missing".to_string(), |v| v.to_string())
        )));
    }
    let doc: CloudManifest = serde_json::from_str(&text).map_err(|e| Error::json(&name, e))?;
    let scale = match doc.units.as_str() {
        "m" => 1.0,
        "mm" => 1.0 / MM_PER_M,
        other => return Err(Error::InvalidConfig(format!("unknown point units `{other}`"))),
    };
    if doc.frames.len() != doc.timestamps.len() {
        return Err(Error::LengthMismatch(format!(
            "manifest lists {} timestamps and {} frames",
            doc.timestamps.len(),
            doc.frames.len()
        )));
    }
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let clouds = doc
        .frames
        .iter()
        .map(|f| {
            let path = dir.join(f);
            let pts = if f.ends_with(".bin") { read_binary(&path)? } else { read_text(&path)? };
            Ok(pts.into_iter().map(|p| p.map(|v| v * scale)).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    PointCloudSequence::new(doc.timestamps, clouds)
}

fn read_binary(path: &Path) -> Result<Vec<Vec3<f64>>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 24 != 0 {
        return Err(Error::LengthMismatch(format!("{} holds {} bytes, not a multiple of 24", path.display(), bytes.len())));
    }
    Ok(bytes
        .chunks_exact(24)
        .map(|c| [0, 1, 2].map(|k| f64::from_le_bytes(c[8 * k..8 * k + 8].try_into().expect("8-byte chunk"))))
        .collect())
}

fn read_text(path: &Path) -> Result<Vec<Vec3<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<&str> = line.split_whitespace().collect();
        let parse = |s: &str| s.parse::<f64>().ok();
        match vals.as_slice() {
            [x, y, z] => match (parse(x), parse(y), parse(z)) {
                (Some(x), Some(y), Some(z)) => pts.push([x, y, z]),
                _ => return Err(parse_error(path, i, "expected three numbers")),
            },
            _ => return Err(parse_error(path, i, &format!("expected 3 values, found {}", vals.len()))),
        }
    }
    Ok(pts)
}

fn parse_error(path: &Path, line: usize, message: &str) -> Error {
    Error::Parse { source_name: path.display().to_string(), line: line + 1, column: 1, message: message.into() }
}
