//! The diffusion forward process: the `(alpha_t, sigma_t)` table, noising and
//! the one-step clean estimate.
//!
//! The polynomial schedule is `alpha_t = 1 - (t/T)^2` with `sigma_t^2` floored
//! at 1e-5 for `t > 0` (alpha is then recomputed so `alpha^2 + sigma^2 = 1`).
//! The floor grows by a relative `1/T` per step past `t = 1` so that long
//! schedules never get two equal floored entries. This particular polynomial
//! is a project choice, not a fitted constant.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud};

pub const DEFAULT_TIMESTEPS: usize = 500;
const SIGMA2_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    #[serde(rename = "T")]
    pub timesteps: usize,
    pub alpha: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl NoiseSchedule {
    pub fn polynomial(timesteps: usize) -> Result<Self> {
        if timesteps < 2 {
            return Err(Error::Config(format!("schedule needs T >= 2, got {timesteps}")));
        }
        let mut alpha = Vec::with_capacity(timesteps + 1);
        let mut sigma = Vec::with_capacity(timesteps + 1);
        for t in 0..=timesteps {
            let s = t as f64 / timesteps as f64;
            let mut a = 1.0 - s * s;
            let mut sig2 = 1.0 - a * a;
            let floor = SIGMA2_FLOOR * (1.0 + (t as f64 - 1.0) / timesteps as f64);
            if t > 0 && sig2 < floor {
                sig2 = floor;
                a = (1.0 - sig2).sqrt();
            }
            alpha.push(a);
            sigma.push(sig2.sqrt());
        }
        Ok(Self { timesteps, alpha, sigma })
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.alpha[t])
    }

    pub fn sigma(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.sigma[t])
    }

    fn check(&self, t: usize) -> Result<()> {
        if t > self.timesteps {
            Err(Error::TimestepOutOfRange { t, max: self.timesteps })
        } else {
            Ok(())
        }
    }

    /// Checks the table invariants; used when loading a schedule from disk.
    pub fn validate(&self) -> Result<()> {
        let n = self.timesteps + 1;
        if self.timesteps < 2 || self.alpha.len() != n || self.sigma.len() != n {
            return Err(Error::Config("schedule tables must have T + 1 entries".into()));
        }
        if (self.alpha[0] - 1.0).abs() > 1e-12 || self.alpha[self.timesteps].abs() > 1e-12 {
            return Err(Error::Config("alpha must run from 1 to 0".into()));
        }
        for t in 0..n {
            let (a, s) = (self.alpha[t], self.sigma[t]);
            if (a * a + s * s - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("alpha^2 + sigma^2 != 1 at t = {t}")));
            }
            if t > 0 && a >= self.alpha[t - 1] {
                return Err(Error::Config(format!("alpha not strictly decreasing at t = {t}")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let sched: Self = serde_json::from_str(s)?;
        sched.validate()?;
        Ok(sched)
    }
}

pub fn make_polynomial_schedule(timesteps: usize) -> Result<NoiseSchedule> {
    NoiseSchedule::polynomial(timesteps)
}

/// Sampling interval for timesteps, as fractions of `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimestepRange {
    pub t_min: f64,
    pub t_max: f64,
}

impl Default for TimestepRange {
    fn default() -> Self {
        Self { t_min: 0.02, t_max: 0.12 }
    }
}

impl TimestepRange {
    pub fn new(t_min: f64, t_max: f64) -> Result<Self> {
        let r = Self { t_min, t_max };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.t_min && self.t_min < self.t_max && self.t_max <= 1.0) {
            return Err(Error::Config(format!(
                "timestep range needs 0 <= t_min < t_max <= 1, got ({}, {})",
                self.t_min, self.t_max
            )));
        }
        Ok(())
    }

    /// Inclusive integer bounds `[round(t_min T), round(t_max T)]`.
    pub fn bounds(&self, timesteps: usize) -> Result<(usize, usize)> {
        let lo = (self.t_min * timesteps as f64).round();
        let hi = (self.t_max * timesteps as f64).round();
        if !(lo >= 0.0 && lo <= hi) {
            return Err(Error::EmptyRange);
        }
        Ok((lo as usize, hi as usize))
    }
}

pub fn sample_timestep<R: Rng + ?Sized>(range: &TimestepRange, timesteps: usize, rng: &mut R) -> Result<usize> {
    let (lo, hi) = range.bounds(timesteps)?;
    Ok(rng.random_range(lo..=hi))
}

/// Draws an `n x 3` standard-normal matrix.
pub fn standard_normal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Point> {
    (0..n)
        .map(|_| {
            [
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            ]
        })
        .collect()
}

/// `x_t = alpha_t x0 + sigma_t eps`.
pub fn forward_noise(sched: &NoiseSchedule, x0: &PointCloud, t: usize, eps: &[Point]) -> Result<PointCloud> {
    let (a, s) = (sched.alpha(t)?, sched.sigma(t)?);
    if eps.len() != x0.len() {
        return Err(Error::ShapeMismatch { expected: x0.len(), got: eps.len() });
    }
    let points = x0
        .points
        .iter()
        .zip(eps)
        .map(|(p, e)| [a * p[0] + s * e[0], a * p[1] + s * e[1], a * p[2] + s * e[2]])
        .collect();
    Ok(PointCloud { points, label: x0.label })
}

/// `x0_hat = (x_t - sigma_t eps_hat) / alpha_t`.
pub fn estimate_x0(sched: &NoiseSchedule, x_t: &PointCloud, eps_hat: &[Point], t: usize) -> Result<PointCloud> {
    let (a, s) = (sched.alpha(t)?, sched.sigma(t)?);
    if a == 0.0 {
        return Err(Error::AlphaZero(t));
    }
    if eps_hat.len() != x_t.len() {
        return Err(Error::ShapeMismatch { expected: x_t.len(), got: eps_hat.len() });
    }
    let points = x_t
        .points
        .iter()
        .zip(eps_hat)
        .map(|(p, e)| [(p[0] - s * e[0]) / a, (p[1] - s * e[1]) / a, (p[2] - s * e[2]) / a])
        .collect();
    Ok(PointCloud { points, label: x_t.label })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::polynomial(500).unwrap()
    }

    #[test]
    fn endpoints_and_midpoint() {
        let s = sched();
        assert_eq!((s.alpha(0).unwrap(), s.sigma(0).unwrap()), (1.0, 0.0));
        assert_eq!((s.alpha(500).unwrap(), s.sigma(500).unwrap()), (0.0, 1.0));
        assert_eq!(s.alpha(250).unwrap(), 0.75);
        assert!((s.sigma(250).unwrap() - 0.4375f64.sqrt()).abs() < 1e-15);
        assert!((s.sigma(250).unwrap() - 0.661438).abs() < 1e-6);
        assert!(matches!(s.alpha(501), Err(Error::TimestepOutOfRange { .. })));
    }

    #[test]
    fn table_invariants() {
        for t in [2, 3, 10, 500, 1000] {
            let s = NoiseSchedule::polynomial(t).unwrap();
            s.validate().unwrap();
            for i in 0..=t {
                assert!((s.alpha[i].powi(2) + s.sigma[i].powi(2) - 1.0).abs() < 1e-12);
                if i > 0 {
                    assert!(s.alpha[i] < s.alpha[i - 1]);
                    assert!(s.sigma[i] * s.sigma[i] >= SIGMA2_FLOOR * (1.0 - 1e-12));
                }
            }
        }
        assert!(NoiseSchedule::polynomial(1).is_err());
    }

    #[test]
    fn json_roundtrip_and_validation() {
        let s = sched();
        let j = s.to_json().unwrap();
        assert!(j.starts_with("{\"T\":500"));
        assert_eq!(NoiseSchedule::from_json(&j).unwrap(), s);
        let mut bad = s.clone();
        bad.alpha[3] = bad.alpha[2];
        assert!(NoiseSchedule::from_json(&bad.to_json().unwrap()).is_err());
    }

    #[test]
    fn forward_special_cases() {
        let s = sched();
        let x0 = PointCloud::new(vec![[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]]).unwrap();
        let zeros = vec![[0.0; 3]; 2];
        let xt = forward_noise(&s, &x0, 77, &zeros).unwrap();
        let a = s.alpha(77).unwrap();
        for (p, q) in xt.points.iter().zip(&x0.points) {
            for k in 0..3 {
                assert_eq!(p[k], a * q[k]);
            }
        }
        let eps = vec![[5.0, 1.0, -1.0]; 2];
        assert_eq!(forward_noise(&s, &x0, 0, &eps).unwrap(), x0);
        assert!(matches!(forward_noise(&s, &x0, 600, &eps), Err(Error::TimestepOutOfRange { .. })));
    }

    #[test]
    fn estimate_special_cases() {
        let s = sched();
        let xt = PointCloud::new(vec![[1.0, 2.0, 3.0]]).unwrap();
        let est = estimate_x0(&s, &xt, &[[0.0; 3]], 40).unwrap();
        let a = s.alpha(40).unwrap();
        assert_eq!(est.points[0], [1.0 / a, 2.0 / a, 3.0 / a]);
        assert!(matches!(estimate_x0(&s, &xt, &[[0.0; 3]], 500), Err(Error::AlphaZero(500))));
    }

    #[test]
    fn forward_then_estimate_roundtrip() {
        let s = sched();
        let mut rng = stream(5, &[]);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let t = rng.random_range(0..500);
            let x0 = PointCloud::new(standard_normal(64, &mut rng)).unwrap();
            let eps = standard_normal(64, &mut rng);
            let xt = forward_noise(&s, &x0, t, &eps).unwrap();
            let back = estimate_x0(&s, &xt, &eps, t).unwrap();
            for (p, q) in back.points.iter().zip(&x0.points) {
                for k in 0..3 {
                    worst = worst.max((p[k] - q[k]).abs());
                }
            }
        }
        assert!(worst < 1e-9, "worst {worst}");
    }

    #[test]
    fn monte_carlo_moments() {
        let s = sched();
        let t = 50;
        let (a, sg) = (s.alpha(t).unwrap(), s.sigma(t).unwrap());
        let x0 = PointCloud::new(vec![[0.7, -1.2, 0.1]]).unwrap();
        let mut rng = stream(9, &[]);
        let n = 100_000;
        let mut sum = [0.0; 3];
        let mut sum2 = [0.0; 3];
        for _ in 0..n {
            let eps = standard_normal(1, &mut rng);
            let p = forward_noise(&s, &x0, t, &eps).unwrap().points[0];
            for k in 0..3 {
                sum[k] += p[k];
                sum2[k] += p[k] * p[k];
            }
        }
        let nf = n as f64;
        for k in 0..3 {
            let mean = sum[k] / nf;
            let std = (sum2[k] / nf - mean * mean).sqrt();
            assert!((mean - a * x0.points[0][k]).abs() < 3.0 * sg / nf.sqrt());
            assert!((std - sg).abs() < 3.0 * sg / (2.0 * nf).sqrt());
        }
    }

    #[test]
    fn timestep_bounds() {
        let mut rng = stream(1, &[]);
        let r = TimestepRange::default();
        for _ in 0..1000 {
            let t = sample_timestep(&r, 500, &mut rng).unwrap();
            assert!((10..=60).contains(&t));
        }
        let narrow = TimestepRange::new(0.1, 0.1009).unwrap();
        for _ in 0..50 {
            assert_eq!(sample_timestep(&narrow, 500, &mut rng).unwrap(), 50);
        }
        assert!(TimestepRange::new(0.2, 0.1).is_err());
        assert!(TimestepRange::new(0.0, 1.5).is_err());
    }

    #[test]
    fn timestep_uniformity_chi_square() {
        let mut rng = stream(2, &[]);
        let mut counts = [0usize; 51];
        let n = 100_000;
        for _ in 0..n {
            counts[sample_timestep(&TimestepRange::default(), 500, &mut rng).unwrap() - 10] += 1;
        }
        let expected = n as f64 / 51.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // chi-square quantile at 0.999 for 50 degrees of freedom
        assert!(chi2 < 86.6608, "chi2 = {chi2}");
    }
}
