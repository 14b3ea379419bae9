//! Point-cloud containers and the geometric primitives the adaptation loop is
//! built from: normalization, nearest neighbours, Chamfer distance and the 6D
//! rotation parameterization.

pub(crate) mod chamfer;
pub mod io;
mod knn;
mod rotation;

pub use chamfer::{chamfer, chamfer_grad, nearest, squared_l2, squared_l2_grad, ChamferTerms};
pub use knn::{knn, knn_with_dist};
pub use rotation::{rotation_from_6d, rotation_jacobian, Rotation6D, RotationMatrix, DEGENERACY_EPS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 3];

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Point, s: f64) -> Point {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Point, b: Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

/// Squared Euclidean distance. Every nearest-neighbour query in the crate goes
/// through this one expression so that brute-force oracles agree bit-for-bit.
#[inline]
pub fn dist2(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// An ordered set of 3D points with an optional class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

impl PointCloud {
    /// Builds a cloud, rejecting empty input and non-finite coordinates.
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { points, label: None })
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Point {
        centroid(&self.points)
    }

    /// Applies `p -> (p - center) * scale` to every point.
    pub fn affine_normalized(&self, center: Point, scale_factor: f64) -> PointCloud {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|&p| scale(sub(p, center), scale_factor))
                .collect(),
            label: self.label,
        }
    }

    /// Undoes [`PointCloud::affine_normalized`].
    pub fn denormalized(&self, center: Point, scale_factor: f64) -> PointCloud {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|&p| add(scale(p, 1.0 / scale_factor), center))
                .collect(),
            label: self.label,
        }
    }

    /// Row-vector product `points * m^T`, i.e. every point becomes `m p`.
    pub fn transformed(&self, m: &[[f64; 3]; 3]) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|&p| mat_vec(m, p)).collect(),
            label: self.label,
        }
    }
}

pub fn centroid(points: &[Point]) -> Point {
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        c = add(c, *p);
    }
    scale(c, 1.0 / n)
}

#[inline]
pub fn mat_vec(m: &[[f64; 3]; 3], p: Point) -> Point {
    [dot(m[0], p), dot(m[1], p), dot(m[2], p)]
}

#[inline]
pub fn mat_t_vec(m: &[[f64; 3]; 3], p: Point) -> Point {
    [
        m[0][0] * p[0] + m[1][0] * p[1] + m[2][0] * p[2],
        m[0][1] * p[0] + m[1][1] * p[1] + m[2][1] * p[2],
        m[0][2] * p[0] + m[1][2] * p[1] + m[2][2] * p[2],
    ]
}

pub fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn transpose(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out[j][i] = *v;
        }
    }
    out
}

pub fn det(m: &[[f64; 3]; 3]) -> f64 {
    dot(m[0], cross(m[1], m[2]))
}

/// Parameters of a normalization `p -> (p - center) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub center: Point,
    pub scale: f64,
}

impl Normalization {
    pub fn apply(&self, pc: &PointCloud) -> PointCloud {
        pc.affine_normalized(self.center, self.scale)
    }

    pub fn invert(&self, pc: &PointCloud) -> PointCloud {
        pc.denormalized(self.center, self.scale)
    }
}

fn all_coincide(points: &[Point]) -> bool {
    points.iter().all(|p| p == &points[0])
}

/// Zero-centers the cloud and scales it into the unit ball (max norm 1).
pub fn normalize_for_classifier(pc: &PointCloud) -> Result<(PointCloud, Normalization)> {
    if pc.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if all_coincide(&pc.points) {
        return Err(Error::DegenerateCloud("all points coincide"));
    }
    let center = pc.centroid();
    let max_norm = pc
        .points
        .iter()
        .map(|&p| norm(sub(p, center)))
        .fold(0.0_f64, f64::max);
    let norm = Normalization { center, scale: 1.0 / max_norm };
    Ok((norm.apply(pc), norm))
}

/// Zero-centers the cloud and scales it to unit standard deviation, measured
/// over all `3N` coordinates together.
pub fn normalize_for_diffusion(pc: &PointCloud) -> Result<(PointCloud, Normalization)> {
    if pc.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if all_coincide(&pc.points) {
        return Err(Error::DegenerateCloud("all points coincide"));
    }
    let center = pc.centroid();
    let sum_sq: f64 = pc.points.iter().map(|&p| {
        let c = sub(p, center);
        dot(c, c)
    }).sum();
    let std = (sum_sq / (3 * pc.len()) as f64).sqrt();
    let norm = Normalization { center, scale: 1.0 / std };
    Ok((norm.apply(pc), norm))
}
