use rand::seq::index::sample;

use super::{check_denoisable, eps_from_x0, Denoiser, EmpiricalSource};
use crate::error::Result;
use crate::geometry::{Point, PointCloud};
use crate::rng::stream;
use crate::schedule::NoiseSchedule;

pub const MAX_POOLED_POINTS: usize = 8192;

const LOG_WEIGHT_CUTOFF: f64 = 50.0;

/// Per-point posterior mean: every query point is denoised independently
/// against a 3D Gaussian mixture centred on the pooled source points.
pub fn point_mixture_denoise(pool: &[Point], sched: &NoiseSchedule, x_t: &PointCloud, t: usize) -> Result<Vec<Point>> {
    let x0 = point_mixture_mean(pool, sched, x_t, t)?;
    eps_from_x0(sched, &x_t.points, &x0, t)
}

fn point_mixture_mean(pool: &[Point], sched: &NoiseSchedule, x_t: &PointCloud, t: usize) -> Result<Vec<Point>> {
    let (a, s) = check_denoisable(sched, t)?;
    if s == 0.0 {
        return Ok(x_t.points.clone());
    }
    let inv_2var = 1.0 / (2.0 * s * s);
    let mut log_w = vec![0.0; pool.len()];
    Ok(x_t
        .points
        .iter()
        .map(|q| {
            let mut max = f64::NEG_INFINITY;
            for (lw, p) in log_w.iter_mut().zip(pool) {
                let dx = q[0] - a * p[0];
                let dy = q[1] - a * p[1];
                let dz = q[2] - a * p[2];
                *lw = -(dx * dx + dy * dy + dz * dz) * inv_2var;
                max = max.max(*lw);
            }
            let mut acc = [0.0; 3];
            let mut total = 0.0;
            for (lw, p) in log_w.iter().zip(pool) {
                let rel = lw - max;
                if rel < -LOG_WEIGHT_CUTOFF {
                    continue;
                }
                let w = rel.exp();
                total += w;
                acc[0] += w * p[0];
                acc[1] += w * p[1];
                acc[2] += w * p[2];
            }
            [acc[0] / total, acc[1] / total, acc[2] / total]
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct PointMixtureDenoiser {
    pool: Vec<Point>,
    schedule: NoiseSchedule,
}

impl PointMixtureDenoiser {
    /// Pools every point of every source shape, subsampling deterministically
    /// (by `seed`) down to [`MAX_POOLED_POINTS`] when there are more.
    pub fn new(source: &EmpiricalSource, schedule: NoiseSchedule, seed: u64) -> Self {
        let all: Vec<Point> = source.shapes().iter().flatten().copied().collect();
        let pool = if all.len() > MAX_POOLED_POINTS {
            let mut rng = stream(seed, &[0x6d69_78]);
            let mut idx = sample(&mut rng, all.len(), MAX_POOLED_POINTS).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| all[i]).collect()
        } else {
            all
        };
        Self { pool, schedule }
    }

    pub fn from_pool(pool: Vec<Point>, schedule: NoiseSchedule) -> Self {
        Self { pool, schedule }
    }

    pub fn pool(&self) -> &[Point] {
        &self.pool
    }
}

impl Denoiser for PointMixtureDenoiser {
    fn denoise(&self, x_t: &PointCloud, t: usize) -> Result<Vec<Point>> {
        point_mixture_denoise(&self.pool, &self.schedule, x_t, t)
    }

    fn denoise_x0(&self, _sched: &NoiseSchedule, x_t: &PointCloud, t: usize) -> Result<PointCloud> {
        Ok(PointCloud { points: point_mixture_mean(&self.pool, &self.schedule, x_t, t)?, label: x_t.label })
    }

    fn timesteps(&self) -> usize {
        self.schedule.timesteps
    }

    fn name(&self) -> &str {
        "point-mixture"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{estimate_x0, standard_normal};

    fn sched() -> NoiseSchedule {
        NoiseSchedule::polynomial(500).unwrap()
    }

    fn x0_hat(pool: &[Point], xt: &PointCloud, t: usize) -> Vec<Point> {
        let s = sched();
        let eps = point_mixture_denoise(pool, &s, xt, t).unwrap();
        estimate_x0(&s, xt, &eps, t).unwrap().points
    }

    #[test]
    fn single_pool_point_attracts_everything() {
        let p = [0.3, -0.2, 0.9];
        let xt = PointCloud::new(vec![[1.0, 2.0, 3.0], [-1.0, 0.0, 0.5]]).unwrap();
        for row in x0_hat(&[p], &xt, 30) {
            for k in 0..3 {
                assert!((row[k] - p[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn equidistant_point_gets_midpoint() {
        let s = sched();
        let pool = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]];
        let xt = PointCloud::new(vec![[0.0, 0.7, 0.0]]).unwrap();
        let m = point_mixture_mean(&pool, &s, &xt, 20).unwrap();
        assert!(m[0].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn matches_brute_force_mixture() {
        let s = sched();
        let mut rng = stream(8, &[]);
        for t in [20, 60, 200] {
            let pool = standard_normal(40, &mut rng);
            let xt = PointCloud::new(standard_normal(10, &mut rng)).unwrap();
            let got = point_mixture_denoise(&pool, &s, &xt, t).unwrap();
            let (a, sg) = (s.alpha[t], s.sigma[t]);
            for (g, q) in got.iter().zip(&xt.points) {
                let dens: Vec<f64> = pool
                    .iter()
                    .map(|p| {
                        let d2: f64 = (0..3).map(|k| (q[k] - a * p[k]).powi(2)).sum();
                        (-d2 / (2.0 * sg * sg)).exp()
                    })
                    .collect();
                let z: f64 = dens.iter().sum();
                if z < 1e-250 {
                    continue;
                }
                for k in 0..3 {
                    let mean: f64 = dens.iter().zip(&pool).map(|(w, p)| w * p[k]).sum::<f64>() / z;
                    let want = (q[k] - a * mean) / sg;
                    assert!((g[k] - want).abs() < 1e-10, "{} vs {}", g[k], want);
                }
            }
        }
    }

    #[test]
    fn pool_is_capped_deterministically() {
        let mut rng = stream(9, &[]);
        let shapes: Vec<_> = (0..3).map(|_| standard_normal(4000, &mut rng)).collect();
        let src = EmpiricalSource::new(shapes).unwrap();
        let a = PointMixtureDenoiser::new(&src, sched(), 5);
        let b = PointMixtureDenoiser::new(&src, sched(), 5);
        assert_eq!(a.pool().len(), MAX_POOLED_POINTS);
        assert_eq!(a.pool(), b.pool());
    }
}
