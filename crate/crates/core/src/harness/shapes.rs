//! Parametric source shapes.
//!
//! Every class samples its surface at a fixed, class-specific sequence of
//! surface coordinates, so point `j` of two instances of the same class lies
//! at corresponding places. Instances differ in aspect ratios, scale and a
//! small per-point jitter.

use std::f64::consts::TAU;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_for_classifier, Point, PointCloud};
use crate::rng::stream;

/// Seed of the shared surface-coordinate sequences.
const CANONICAL_SEED: u64 = 0x7063_6164;

pub const JITTER_STD: f64 = 0.003;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Sphere,
    Cube,
    Cylinder,
    Cone,
    Torus,
    Table,
    Pyramid,
    Capsule,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 8] = [
        ShapeKind::Sphere,
        ShapeKind::Cube,
        ShapeKind::Cylinder,
        ShapeKind::Cone,
        ShapeKind::Torus,
        ShapeKind::Table,
        ShapeKind::Pyramid,
        ShapeKind::Capsule,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cube => "cube",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Cone => "cone",
            ShapeKind::Torus => "torus",
            ShapeKind::Table => "table",
            ShapeKind::Pyramid => "pyramid",
            ShapeKind::Capsule => "capsule",
        }
    }

    fn index(self) -> u64 {
        Self::ALL.iter().position(|k| *k == self).expect("listed") as u64
    }

    /// Draws per-instance aspect parameters.
    pub fn random_params<R: Rng + ?Sized>(self, rng: &mut R) -> [f64; 2] {
        let mut r = |lo: f64, hi: f64| rng.random_range(lo..hi);
        match self {
            ShapeKind::Sphere => [1.0, 1.0],
            ShapeKind::Cube => [r(0.85, 1.15), r(0.85, 1.15)],
            ShapeKind::Cylinder => [r(0.8, 1.2), 1.0],
            ShapeKind::Cone => [r(1.5, 2.0), 1.0],
            ShapeKind::Torus => [r(0.25, 0.35), 1.0],
            ShapeKind::Table => [r(0.6, 0.8), r(0.7, 1.0)],
            ShapeKind::Pyramid => [r(1.2, 1.8), 1.0],
            ShapeKind::Capsule => [r(0.8, 1.2), 1.0],
        }
    }

    /// The point at surface coordinates `(u, v)` in `[0, 1)^2`.
    pub fn surface_point(self, params: [f64; 2], u: f64, v: f64) -> Point {
        let [a, b] = params;
        match self {
            ShapeKind::Sphere => sphere_point(u, v),
            ShapeKind::Cube => {
                let half = [1.0, a, b];
                let face = ((u * 6.0) as usize).min(5);
                let s = 2.0 * (u * 6.0 - face as f64) - 1.0;
                let t = 2.0 * v - 1.0;
                let axis = face / 2;
                let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
                let (i, j) = ((axis + 1) % 3, (axis + 2) % 3);
                let mut p = [0.0; 3];
                p[axis] = sign * half[axis];
                p[i] = s * half[i];
                p[j] = t * half[j];
                p
            }
            ShapeKind::Cylinder => {
                // a is the half height
                if u < 0.6 {
                    let th = TAU * u / 0.6;
                    [th.cos(), th.sin(), a * (2.0 * v - 1.0)]
                } else {
                    let w = (u - 0.6) / 0.4;
                    let (z, w) = if w < 0.5 { (a, 2.0 * w) } else { (-a, 2.0 * w - 1.0) };
                    let r = v.sqrt();
                    [r * (TAU * w).cos(), r * (TAU * w).sin(), z]
                }
            }
            ShapeKind::Cone => {
                // a is the height, base radius 1, apex on +z
                if u < 0.7 {
                    let th = TAU * u / 0.7;
                    let r = v.sqrt();
                    let h = 1.0 - r;
                    [r * th.cos(), r * th.sin(), a * h - a / 3.0]
                } else {
                    let th = TAU * (u - 0.7) / 0.3;
                    let r = v.sqrt();
                    [r * th.cos(), r * th.sin(), -a / 3.0]
                }
            }
            ShapeKind::Torus => {
                let (th, ph) = (TAU * u, TAU * v);
                let rr = 1.0 + a * ph.cos();
                [rr * th.cos(), rr * th.sin(), a * ph.sin()]
            }
            ShapeKind::Table => {
                // horizontal top plate above a vertical middle plate
                if u < 0.6 {
                    let s = 2.0 * (u / 0.6) - 1.0;
                    [s, b * (2.0 * v - 1.0), a]
                } else {
                    let s = 2.0 * ((u - 0.6) / 0.4) - 1.0;
                    [0.8 * s, 0.0, a * (2.0 * v - 1.0)]
                }
            }
            ShapeKind::Pyramid => {
                // square base of side 2 at z = 0, apex at height a
                let face = ((u * 5.0) as usize).min(4);
                let s = u * 5.0 - face as f64;
                if face == 4 {
                    [2.0 * s - 1.0, 2.0 * v - 1.0, -a / 4.0]
                } else {
                    // triangle sampled by folding the unit square
                    let (mut p, mut q) = (s, v);
                    if p + q > 1.0 {
                        p = 1.0 - p;
                        q = 1.0 - q;
                    }
                    let corners = [[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [1.0, 1.0]];
                    let c0 = corners[face];
                    let c1 = corners[face + 1];
                    let apex = [0.0, 0.0, a];
                    let b0 = [c0[0], c0[1], 0.0];
                    let b1 = [c1[0], c1[1], 0.0];
                    let mut out = [0.0; 3];
                    for k in 0..3 {
                        out[k] = b0[k] + p * (b1[k] - b0[k]) + q * (apex[k] - b0[k]);
                    }
                    out[2] -= a / 4.0;
                    out
                }
            }
            ShapeKind::Capsule => {
                // radius 0.5, a is the half length of the straight part
                let r = 0.5;
                if u < 0.5 {
                    let th = TAU * u / 0.5;
                    [r * th.cos(), r * th.sin(), a * (2.0 * v - 1.0)]
                } else {
                    let w = (u - 0.5) / 0.5;
                    let (sign, w) = if w < 0.5 { (1.0, 2.0 * w) } else { (-1.0, 2.0 * w - 1.0) };
                    let p = sphere_point(w, 0.5 + 0.5 * v);
                    [r * p[0], r * p[1], sign * (a + r * p[2])]
                }
            }
        }
    }
}

fn sphere_point(u: f64, v: f64) -> Point {
    let th = TAU * u;
    let z = 2.0 * v - 1.0;
    let r = (1.0 - z * z).max(0.0).sqrt();
    [r * th.cos(), r * th.sin(), z]
}

impl std::fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown shape kind {s:?}")))
    }
}

/// The class-specific surface coordinates shared by every instance.
pub fn canonical_uv(kind: ShapeKind, n: usize) -> Vec<(f64, f64)> {
    let mut rng = stream(CANONICAL_SEED, &[kind.index(), n as u64]);
    (0..n).map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))).collect()
}

/// One classifier-normalized instance of `kind`.
pub fn sample_instance(kind: ShapeKind, n: usize, seed: u64, path: &[u64]) -> Result<PointCloud> {
    let mut rng = stream(seed, path);
    let params = kind.random_params(&mut rng);
    let scale: f64 = rng.random_range(0.8..1.2);
    let jitter = Normal::new(0.0, JITTER_STD).expect("positive std");
    let pts: Vec<Point> = canonical_uv(kind, n)
        .into_iter()
        .map(|(u, v)| {
            let p = kind.surface_point(params, u, v);
            [
                scale * p[0] + jitter.sample(&mut rng),
                scale * p[1] + jitter.sample(&mut rng),
                scale * p[2] + jitter.sample(&mut rng),
            ]
        })
        .collect();
    Ok(normalize_for_classifier(&PointCloud::new(pts)?)?.0)
}

/// `n_per_class` labeled instances of every kind, grouped by class in the
/// order of `kinds`. Labels are positions in `kinds`.
pub fn gen_source_dataset(kinds: &[ShapeKind], n_per_class: usize, n_points: usize, seed: u64) -> Result<Vec<PointCloud>> {
    if kinds.len() < 2 {
        return Err(Error::Config("need at least two shape kinds".into()));
    }
    if n_points < 2 {
        return Err(Error::Config("need at least two points per cloud".into()));
    }
    let mut out = Vec::with_capacity(kinds.len() * n_per_class);
    for (label, &kind) in kinds.iter().enumerate() {
        for i in 0..n_per_class {
            out.push(sample_instance(kind, n_points, seed, &[label as u64, i as u64])?.with_label(label));
        }
    }
    Ok(out)
}
