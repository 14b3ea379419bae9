//! Seeded corruption generators with severities 1 to 5.
//!
//! Every magnitude below is a calibration choice for the synthetic
//! benchmark, collected in [`CONSTANTS`].

use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{add, centroid, dist2, dot, mat_vec, norm, scale, sub, Point, PointCloud, RotationMatrix};
use crate::rng::{stream, Rng as StreamRng};

/// Corruptions never leave fewer points than this.
pub const MIN_POINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    Uniform,
    Gaussian,
    Impulse,
    Background,
    Upsampling,
    Cutout,
    DensityDec,
    DensityInc,
    OcclusionHalfspace,
    Rotation,
    Shear,
    RbfDistortion,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 12] = [
        CorruptionKind::Uniform,
        CorruptionKind::Gaussian,
        CorruptionKind::Impulse,
        CorruptionKind::Background,
        CorruptionKind::Upsampling,
        CorruptionKind::Cutout,
        CorruptionKind::DensityDec,
        CorruptionKind::DensityInc,
        CorruptionKind::OcclusionHalfspace,
        CorruptionKind::Rotation,
        CorruptionKind::Shear,
        CorruptionKind::RbfDistortion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::Uniform => "uniform",
            CorruptionKind::Gaussian => "gaussian",
            CorruptionKind::Impulse => "impulse",
            CorruptionKind::Background => "background",
            CorruptionKind::Upsampling => "upsampling",
            CorruptionKind::Cutout => "cutout",
            CorruptionKind::DensityDec => "density_dec",
            CorruptionKind::DensityInc => "density_inc",
            CorruptionKind::OcclusionHalfspace => "occlusion_halfspace",
            CorruptionKind::Rotation => "rotation",
            CorruptionKind::Shear => "shear",
            CorruptionKind::RbfDistortion => "rbf_distortion",
        }
    }

    /// Noise corruptions perturb points in place and keep the point count.
    pub fn is_noise(self) -> bool {
        matches!(self, CorruptionKind::Uniform | CorruptionKind::Gaussian | CorruptionKind::Impulse)
    }

    fn index(self) -> u64 {
        Self::ALL.iter().position(|k| *k == self).expect("listed") as u64
    }
}

impl std::fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown corruption kind {s:?}")))
    }
}

/// Magnitudes per unit of severity, plus fixed shape parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constants {
    pub uniform_half_width: f64,
    pub gaussian_std: f64,
    pub impulse_fraction: f64,
    pub impulse_half_width: f64,
    pub background_fraction: f64,
    pub upsampling_fraction: f64,
    pub upsampling_jitter: f64,
    pub cutout_fraction: f64,
    pub density_dec_fraction: f64,
    pub density_inc_fraction: f64,
    pub density_inc_neighbourhood: f64,
    pub occlusion_offset: f64,
    pub occlusion_offset_step: f64,
    pub rotation_angle: f64,
    pub shear: f64,
    pub rbf_centres: usize,
    pub rbf_width: f64,
    pub rbf_magnitude: f64,
}

pub const CONSTANTS: Constants = Constants {
    uniform_half_width: 0.16,
    gaussian_std: 0.06,
    impulse_fraction: 0.02,
    impulse_half_width: 1.0,
    background_fraction: 0.02,
    upsampling_fraction: 0.1,
    upsampling_jitter: 0.01,
    cutout_fraction: 0.05,
    density_dec_fraction: 0.15,
    density_inc_fraction: 0.1,
    density_inc_neighbourhood: 0.1,
    occlusion_offset: 0.5,
    occlusion_offset_step: 0.08,
    rotation_angle: std::f64::consts::PI / 5.0,
    shear: 0.1,
    rbf_centres: 5,
    rbf_width: 0.2,
    rbf_magnitude: 0.1,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
    #[serde(default)]
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8, seed: u64) -> Result<Self> {
        let s = Self { kind, severity, seed };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.severity) {
            return Err(Error::Config(format!("severity must be in 1..=5, got {}", self.severity)));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// A corrupted cloud. `origin[i]` is the index of the clean point that output
/// point `i` derives from, or `None` for points that were added.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corrupted {
    pub cloud: PointCloud,
    pub origin: Vec<Option<usize>>,
}

pub fn corrupt(pc: &PointCloud, spec: &CorruptionSpec) -> Result<Corrupted> {
    spec.validate()?;
    corrupt_at(pc, spec.kind, f64::from(spec.severity), spec.seed)
}

/// Like [`corrupt`] but with an unchecked, possibly fractional or zero
/// severity.
pub fn corrupt_at(pc: &PointCloud, kind: CorruptionKind, s: f64, seed: u64) -> Result<Corrupted> {
    let mut rng = stream(seed, &[0x636f_7272, kind.index()]);
    let c = &CONSTANTS;
    let n = pc.len();
    let identity: Vec<Option<usize>> = (0..n).map(Some).collect();
    let count = |frac: f64| (frac * s * n as f64).ceil() as usize;
    let out = match kind {
        CorruptionKind::Uniform => {
            let h = c.uniform_half_width * s;
            let pts = pc.points.iter().map(|&p| add(p, uniform_cube(&mut rng, h))).collect();
            (pts, identity)
        }
        CorruptionKind::Gaussian => {
            let std = c.gaussian_std * s;
            let pts = pc.points.iter().map(|&p| add(p, scale(normal3(&mut rng), std))).collect();
            (pts, identity)
        }
        CorruptionKind::Impulse => {
            let m = count(c.impulse_fraction).min(n);
            let mut pts = pc.points.clone();
            let mut idx = sample(&mut rng, n, m).into_vec();
            idx.sort_unstable();
            for i in idx {
                pts[i] = add(pts[i], uniform_cube(&mut rng, c.impulse_half_width));
            }
            (pts, identity)
        }
        CorruptionKind::Background => {
            let m = count(c.background_fraction);
            let (lo, hi) = bounding_box(&pc.points);
            let mut pts = pc.points.clone();
            let mut origin = identity;
            for _ in 0..m {
                pts.push([
                    rng.random_range(lo[0]..=hi[0]),
                    rng.random_range(lo[1]..=hi[1]),
                    rng.random_range(lo[2]..=hi[2]),
                ]);
                origin.push(None);
            }
            (pts, origin)
        }
        CorruptionKind::Upsampling => {
            let m = count(c.upsampling_fraction);
            let mut pts = pc.points.clone();
            let mut origin = identity;
            for _ in 0..m {
                let i = rng.random_range(0..n);
                pts.push(add(pc.points[i], scale(normal3(&mut rng), c.upsampling_jitter)));
                origin.push(None);
            }
            (pts, origin)
        }
        CorruptionKind::Cutout => {
            let m = count(c.cutout_fraction).min(n);
            let anchor = pc.points[rng.random_range(0..n)];
            let removed = nearest_to(&pc.points, anchor, m);
            keep_except(pc, &removed)
        }
        CorruptionKind::DensityDec => {
            let keep = ((1.0 - c.density_dec_fraction * s) * n as f64).ceil().max(0.0) as usize;
            let mut idx = sample(&mut rng, n, keep.min(n)).into_vec();
            idx.sort_unstable();
            let pts = idx.iter().map(|&i| pc.points[i]).collect();
            (pts, idx.into_iter().map(Some).collect())
        }
        CorruptionKind::DensityInc => {
            let m = count(c.density_inc_fraction).min(n);
            let hood = ((c.density_inc_neighbourhood * n as f64).ceil() as usize).clamp(1, n);
            let anchor = pc.points[rng.random_range(0..n)];
            let local = nearest_to(&pc.points, anchor, hood);
            let mut kept = sample(&mut rng, n, n - m).into_vec();
            kept.sort_unstable();
            let mut pts: Vec<Point> = kept.iter().map(|&i| pc.points[i]).collect();
            let mut origin: Vec<Option<usize>> = kept.into_iter().map(Some).collect();
            for _ in 0..m {
                let i = local[rng.random_range(0..local.len())];
                pts.push(pc.points[i]);
                origin.push(Some(i));
            }
            (pts, origin)
        }
        CorruptionKind::OcclusionHalfspace => {
            let normal = unit_vector(&mut rng);
            let offset = c.occlusion_offset - c.occlusion_offset_step * s;
            let center = centroid(&pc.points);
            let kept: Vec<usize> = (0..n).filter(|&i| dot(sub(pc.points[i], center), normal) <= offset).collect();
            let pts = kept.iter().map(|&i| pc.points[i]).collect();
            (pts, kept.into_iter().map(Some).collect())
        }
        CorruptionKind::Rotation => {
            let axis = unit_vector(&mut rng);
            let max = c.rotation_angle * s;
            let angle = if max > 0.0 { rng.random_range(-max..=max) } else { 0.0 };
            let r = RotationMatrix::from_axis_angle(axis, angle);
            (pc.points.iter().map(|&p| mat_vec(&r.0, p)).collect(), identity)
        }
        CorruptionKind::Shear => {
            let h = c.shear * s;
            let mut m = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
            for (i, row) in m.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    if i != j && h > 0.0 {
                        *v = rng.random_range(-h..=h);
                    }
                }
            }
            (pc.points.iter().map(|&p| mat_vec(&m, p)).collect(), identity)
        }
        CorruptionKind::RbfDistortion => {
            let beta2 = 2.0 * c.rbf_width * c.rbf_width;
            let radius = c.rbf_magnitude * s;
            let centres: Vec<(Point, Point)> = (0..c.rbf_centres)
                .map(|_| (scale(unit_ball(&mut rng), 1.0), scale(unit_ball(&mut rng), radius)))
                .collect();
            let pts = pc
                .points
                .iter()
                .map(|&p| {
                    centres
                        .iter()
                        .fold(p, |acc, (mu, coef)| add(acc, scale(*coef, (-dist2(p, *mu) / beta2).exp())))
                })
                .collect();
            (pts, identity)
        }
    };
    let (points, origin) = out;
    if points.len() < MIN_POINTS {
        return Err(Error::EmptyResult(points.len()));
    }
    Ok(Corrupted { cloud: PointCloud { points, label: pc.label }, origin })
}

fn uniform_cube(rng: &mut StreamRng, h: f64) -> Point {
    if h == 0.0 {
        return [0.0; 3];
    }
    [rng.random_range(-h..=h), rng.random_range(-h..=h), rng.random_range(-h..=h)]
}

fn normal3(rng: &mut StreamRng) -> Point {
    [StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng)]
}

fn unit_vector(rng: &mut StreamRng) -> Point {
    loop {
        let v = normal3(rng);
        let l = norm(v);
        if l > 1e-12 {
            return scale(v, 1.0 / l);
        }
    }
}

fn unit_ball(rng: &mut StreamRng) -> Point {
    let r: f64 = rng.random_range(0.0f64..1.0).cbrt();
    scale(unit_vector(rng), r)
}

fn bounding_box(points: &[Point]) -> (Point, Point) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

/// Indices of the `m` points nearest to `anchor`, lowest index on ties.
fn nearest_to(points: &[Point], anchor: Point, m: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| dist2(points[a], anchor).total_cmp(&dist2(points[b], anchor)).then(a.cmp(&b)));
    idx.truncate(m);
    idx
}

fn keep_except(pc: &PointCloud, removed: &[usize]) -> (Vec<Point>, Vec<Option<usize>>) {
    let mut drop = vec![false; pc.len()];
    removed.iter().for_each(|&i| drop[i] = true);
    let kept: Vec<usize> = (0..pc.len()).filter(|&i| !drop[i]).collect();
    (kept.iter().map(|&i| pc.points[i]).collect(), kept.into_iter().map(Some).collect())
}
