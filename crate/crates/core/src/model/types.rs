use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::body::{BodyShape, Pose};
use crate::error::{Error, Result};
use crate::rotation::{RigidTransform, Rot6D};
use crate::scalar::{Scalar, Vec3};

/// A timestamped motion of one body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSequence<T> {
    pub timestamps: Vec<T>,
    pub poses: Vec<Pose<T>>,
    pub displacements: Vec<Vec3<T>>,
    pub shape: BodyShape<T>,
}

impl<T: Scalar> FrameSequence<T> {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn joints(&self) -> usize {
        self.poses.first().map_or(0, |p| p.theta.len())
    }

    pub fn duration(&self) -> T {
        match (self.timestamps.first(), self.timestamps.last()) {
            (Some(&a), Some(&b)) => b - a,
            _ => T::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.timestamps.len();
        if n < 2 {
            return Err(Error::EmptyInput(format!("a frame sequence needs at least 2 frames, got {n}")));
        }
        if self.poses.len() != n || self.displacements.len() != n {
            return Err(Error::LengthMismatch(format!(
                "{n} timestamps, {} poses, {} displacements",
                self.poses.len(),
                self.displacements.len()
            )));
        }
        if self.timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::DegenerateInput("timestamps must be strictly increasing".into()));
        }
        let j = self.joints();
        if self.poses.iter().any(|p| p.theta.len() != j) {
            return Err(Error::LengthMismatch("poses disagree on joint count".into()));
        }
        Ok(())
    }

    /// `n × (6J + 3)` rows of flattened rotations followed by the displacement.
    pub fn frame_matrix(&self) -> Tensor<T> {
        let j = self.joints();
        let cols = 6 * j + 3;
        let mut data = Vec::with_capacity(self.len() * cols);
        for (p, g) in self.poses.iter().zip(&self.displacements) {
            data.extend(p.flatten());
            data.extend_from_slice(g);
        }
        Tensor::new(self.len(), cols, data)
    }

    pub fn from_frame_matrix(timestamps: Vec<T>, frames: &Tensor<T>, shape: BodyShape<T>) -> Self {
        let j = (frames.cols - 3) / 6;
        let mut poses = Vec::with_capacity(frames.rows);
        let mut displacements = Vec::with_capacity(frames.rows);
        for i in 0..frames.rows {
            let row = frames.row_slice(i);
            poses.push(Pose::from_flat(&row[..6 * j]));
            displacements.push([row[6 * j], row[6 * j + 1], row[6 * j + 2]]);
        }
        Self { timestamps, poses, displacements, shape }
    }

    pub fn cast<U: Scalar>(&self) -> FrameSequence<U> {
        let c = |x: T| U::lit(x.as_f64());
        FrameSequence {
            timestamps: self.timestamps.iter().map(|&t| c(t)).collect(),
            poses: self
                .poses
                .iter()
                .map(|p| Pose { theta: p.theta.iter().map(|r| Rot6D::new(r.a.map(c), r.b.map(c))).collect() })
                .collect(),
            displacements: self.displacements.iter().map(|g| g.map(c)).collect(),
            shape: BodyShape::new(self.shape.beta.iter().map(|&b| c(b)).collect()),
        }
    }
}

/// One Gaussian per latent primitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentDistributionSequence<T> {
    pub mu: Vec<Vec<T>>,
    pub log_sigma: Vec<Vec<T>>,
}

impl<T: Scalar> LatentDistributionSequence<T> {
    pub fn primitives(&self) -> usize {
        self.mu.len()
    }

    pub fn dim(&self) -> usize {
        self.mu.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSequence<T> {
    pub z: Vec<Vec<T>>,
}

impl<T: Scalar> LatentSequence<T> {
    pub fn primitives(&self) -> usize {
        self.z.len()
    }

    pub fn dim(&self) -> usize {
        self.z.first().map_or(0, Vec::len)
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(self.primitives(), self.dim(), self.z.iter().flatten().copied().collect())
    }

    pub fn from_tensor(t: &Tensor<T>) -> Self {
        Self { z: (0..t.rows).map(|i| t.row_slice(i).to_vec()).collect() }
    }
}

/// Learned partition of normalized time into primitive segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentLayout<T> {
    /// Durations, summing to one.
    pub delta: Vec<T>,
    /// Segment starts, `start[i] = Σ_{j<i} delta[j]`.
    pub start: Vec<T>,
    pub rho: Vec<RigidTransform<T>>,
}

/// Decoded body parameters at one timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyParams<T> {
    pub pose: Pose<T>,
    pub gamma: Vec3<T>,
}
