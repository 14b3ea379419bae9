use std::sync::Arc;

use super::{check_denoisable, eps_from_x0, Denoiser};
use crate::error::{Error, Result};
use crate::geometry::{normalize_for_diffusion, Point, PointCloud};
use crate::schedule::NoiseSchedule;

/// Log-weights further than this below the maximum contribute less than
/// `exp(-50)` relative weight and are skipped.
const LOG_WEIGHT_CUTOFF: f64 = 50.0;

/// A finite source distribution: `M` shapes sharing the same point count.
#[derive(Debug, Clone)]
pub struct EmpiricalSource {
    shapes: Vec<Vec<Point>>,
    n_points: usize,
}

impl EmpiricalSource {
    /// Shapes are used as given; callers are expected to pass
    /// diffusion-normalized clouds (see [`EmpiricalSource::normalized`]).
    pub fn new(shapes: Vec<Vec<Point>>) -> Result<Self> {
        let n_points = shapes.first().ok_or(Error::EmptyDataset)?.len();
        if n_points == 0 {
            return Err(Error::EmptyCloud);
        }
        if let Some(bad) = shapes.iter().find(|s| s.len() != n_points) {
            return Err(Error::ShapeMismatch { expected: n_points, got: bad.len() });
        }
        Ok(Self { shapes, n_points })
    }

    /// Diffusion-normalizes every cloud before storing it.
    pub fn normalized<'a, I: IntoIterator<Item = &'a PointCloud>>(clouds: I) -> Result<Self> {
        let shapes = clouds
            .into_iter()
            .map(|pc| normalize_for_diffusion(pc).map(|(n, _)| n.points))
            .collect::<Result<Vec<_>>>()?;
        Self::new(shapes)
    }

    pub fn shapes(&self) -> &[Vec<Point>] {
        &self.shapes
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }
}

/// Posterior mean `E[x0 | x_t]` when `x0` is uniform over the source shapes,
/// each flattened to a `3N` vector.
pub fn posterior_mean(src: &EmpiricalSource, sched: &NoiseSchedule, x_t: &PointCloud, t: usize) -> Result<Vec<Point>> {
    let (a, s) = check_denoisable(sched, t)?;
    if x_t.len() != src.n_points {
        return Err(Error::ShapeMismatch { expected: src.n_points, got: x_t.len() });
    }
    if s == 0.0 {
        // x_t is x0 itself.
        return Ok(x_t.points.clone());
    }
    let inv_2var = 1.0 / (2.0 * s * s);
    let log_w: Vec<f64> = src
        .shapes
        .iter()
        .map(|shape| {
            let d2: f64 = x_t
                .points
                .iter()
                .zip(shape)
                .map(|(p, q)| {
                    let dx = p[0] - a * q[0];
                    let dy = p[1] - a * q[1];
                    let dz = p[2] - a * q[2];
                    dx * dx + dy * dy + dz * dz
                })
                .sum();
            -d2 * inv_2var
        })
        .collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut mean = vec![[0.0; 3]; src.n_points];
    let mut total = 0.0;
    for (lw, shape) in log_w.iter().zip(&src.shapes) {
        if lw - max < -LOG_WEIGHT_CUTOFF {
            continue;
        }
        let w = (lw - max).exp();
        total += w;
        for (m, q) in mean.iter_mut().zip(shape) {
            m[0] += w * q[0];
            m[1] += w * q[1];
            m[2] += w * q[2];
        }
    }
    let inv = 1.0 / total;
    for m in &mut mean {
        m[0] *= inv;
        m[1] *= inv;
        m[2] *= inv;
    }
    Ok(mean)
}

pub fn empirical_posterior_denoise(
    src: &EmpiricalSource,
    sched: &NoiseSchedule,
    x_t: &PointCloud,
    t: usize,
) -> Result<Vec<Point>> {
    let x0 = posterior_mean(src, sched, x_t, t)?;
    eps_from_x0(sched, &x_t.points, &x0, t)
}

/// [`empirical_posterior_denoise`] packaged as a [`Denoiser`].
#[derive(Debug, Clone)]
pub struct EmpiricalPosteriorDenoiser {
    source: Arc<EmpiricalSource>,
    schedule: NoiseSchedule,
}

impl EmpiricalPosteriorDenoiser {
    pub fn new(source: impl Into<Arc<EmpiricalSource>>, schedule: NoiseSchedule) -> Self {
        Self { source: source.into(), schedule }
    }

    pub fn source(&self) -> &EmpiricalSource {
        &self.source
    }
}

impl Denoiser for EmpiricalPosteriorDenoiser {
    fn denoise(&self, x_t: &PointCloud, t: usize) -> Result<Vec<Point>> {
        empirical_posterior_denoise(&self.source, &self.schedule, x_t, t)
    }

    fn denoise_x0(&self, _sched: &NoiseSchedule, x_t: &PointCloud, t: usize) -> Result<PointCloud> {
        Ok(PointCloud { points: posterior_mean(&self.source, &self.schedule, x_t, t)?, label: x_t.label })
    }

    fn timesteps(&self) -> usize {
        self.schedule.timesteps
    }

    fn name(&self) -> &str {
        "empirical-posterior"
    }
}
