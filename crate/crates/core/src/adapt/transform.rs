use serde::{Deserialize, Serialize};

use super::config::{RegKind, TransformKind};
use crate::error::{Error, Result};
use crate::geometry::{add, knn_with_dist, mat_vec, rotation_from_6d, Point, PointCloud, Rotation6D};

/// Linear part of the transformation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linear {
    Rotation(Rotation6D),
    Affine([[f64; 3]; 3]),
}

impl Linear {
    pub fn identity(kind: TransformKind) -> Self {
        match kind {
            TransformKind::Rotation => Linear::Rotation(Rotation6D::IDENTITY),
            TransformKind::Affine => Linear::Affine([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
        }
    }

    pub fn matrix(&self) -> Result<[[f64; 3]; 3]> {
        match self {
            Linear::Rotation(r) => Ok(rotation_from_6d(r)?.0),
            Linear::Affine(m) => Ok(*m),
        }
    }

    /// Number of scalar parameters (6 or 9).
    pub fn dim(&self) -> usize {
        match self {
            Linear::Rotation(_) => 6,
            Linear::Affine(_) => 9,
        }
    }

    fn write(&self, out: &mut [f64]) {
        match self {
            Linear::Rotation(r) => out.copy_from_slice(&r.to_array()),
            Linear::Affine(m) => {
                for (o, v) in out.iter_mut().zip(m.iter().flatten()) {
                    *o = *v;
                }
            }
        }
    }

    fn read(&mut self, src: &[f64]) {
        match self {
            Linear::Rotation(r) => *r = Rotation6D::from_array(src.try_into().expect("6 parameters")),
            Linear::Affine(m) => {
                for (v, s) in m.iter_mut().flatten().zip(src) {
                    *v = *s;
                }
            }
        }
    }
}

/// Transformation parameters: `y_j = M (x_j + delta_j)` for every point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub linear: Linear,
    pub delta: Vec<Point>,
}

impl TransformParams {
    /// The identity transformation: zero displacement, identity matrix.
    pub fn identity(n: usize, kind: TransformKind) -> Self {
        Self { linear: Linear::identity(kind), delta: vec![[0.0; 3]; n] }
    }

    /// Flat parameter vector `[linear..., delta_0, delta_1, ...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let d = self.linear.dim();
        let mut out = vec![0.0; d + 3 * self.delta.len()];
        self.linear.write(&mut out[..d]);
        for (o, v) in out[d..].iter_mut().zip(self.delta.iter().flatten()) {
            *o = *v;
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let d = self.linear.dim();
        self.linear.read(&flat[..d]);
        for (v, s) in self.delta.iter_mut().flatten().zip(&flat[d..]) {
            *v = *s;
        }
    }
}

pub fn apply_transform(x: &PointCloud, params: &TransformParams) -> Result<PointCloud> {
    if params.delta.len() != x.len() {
        return Err(Error::ShapeMismatch { expected: x.len(), got: params.delta.len() });
    }
    let m = params.linear.matrix()?;
    let points = x
        .points
        .iter()
        .zip(&params.delta)
        .map(|(&p, &d)| mat_vec(&m, add(p, d)))
        .collect();
    Ok(PointCloud { points, label: x.label })
}

/// Pre-normalization weight cap for points whose neighbours all coincide.
const MAX_RAW_WEIGHT: f64 = 1e12;

/// Regularization weights `w_i ∝ 1 / sum_{j in kNN(i)} |x_i - x_j|`, summing
/// to one. Using the sum instead of the mean distance only rescales every raw
/// weight by `k`, which the normalization removes.
pub fn compute_reg_weights(x: &PointCloud, k: usize) -> Result<Vec<f64>> {
    let nn = knn_with_dist(x, k)?;
    let raw: Vec<f64> = nn
        .iter()
        .map(|row| {
            let s: f64 = row.iter().map(|&(_, d)| d).sum();
            if s > 0.0 {
                (1.0 / s).min(MAX_RAW_WEIGHT)
            } else {
                MAX_RAW_WEIGHT
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

pub fn uniform_reg_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

pub fn reg_weights(x: &PointCloud, kind: RegKind, k: usize) -> Result<Vec<f64>> {
    match kind {
        RegKind::Knn => compute_reg_weights(x, k),
        RegKind::Uniform => Ok(uniform_reg_weights(x.len())),
    }
}
