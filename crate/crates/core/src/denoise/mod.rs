//! Noise predictors `eps_hat(x_t, t)`.
//!
//! Two analytic denoisers stand in for a trained diffusion model: the exact
//! posterior mean over a finite set of source shapes, and a per-point
//! Gaussian-mixture surrogate. [`ExternalDenoiser`] talks to any model that
//! speaks the line-delimited JSON protocol in [`protocol`].

pub mod check;
mod empirical;
mod mixture;
pub mod protocol;

pub use empirical::{empirical_posterior_denoise, EmpiricalPosteriorDenoiser, EmpiricalSource};
pub use mixture::{point_mixture_denoise, PointMixtureDenoiser, MAX_POOLED_POINTS};
pub use protocol::{serve, ExternalDenoiser, LineClient, DEFAULT_TIMEOUT};

use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud};
use crate::schedule::{estimate_x0, NoiseSchedule};

/// Contract for noise predictors. Output has the same number of rows as the
/// input and is deterministic given `(x_t, t)` and the denoiser's state.
pub trait Denoiser: Send + Sync {
    fn denoise(&self, x_t: &PointCloud, t: usize) -> Result<Vec<Point>>;

    /// Length `T` of the schedule this denoiser was built for.
    fn timesteps(&self) -> usize;

    fn name(&self) -> &str;

    /// Clean estimate `x0_hat` for `x_t`. The default inverts the noise
    /// prediction through `sched`; denoisers that compute the posterior mean
    /// directly return it without the round trip through `eps`.
    fn denoise_x0(&self, sched: &NoiseSchedule, x_t: &PointCloud, t: usize) -> Result<PointCloud> {
        let eps = self.denoise(x_t, t)?;
        estimate_x0(sched, x_t, &eps, t)
    }
}

/// Predicts zero noise everywhere, so the clean estimate is `x_t / alpha_t`.
#[derive(Debug, Clone)]
pub struct ZeroDenoiser {
    pub timesteps: usize,
}

impl Denoiser for ZeroDenoiser {
    fn denoise(&self, x_t: &PointCloud, _t: usize) -> Result<Vec<Point>> {
        Ok(vec![[0.0; 3]; x_t.len()])
    }

    fn timesteps(&self) -> usize {
        self.timesteps
    }

    fn name(&self) -> &str {
        "zero"
    }
}

/// Turns a clean estimate into the equivalent noise prediction,
/// `eps = (x_t - alpha_t x0_hat) / sigma_t`. At `t = 0` the noise has no
/// effect on anything downstream and zero is returned.
pub(crate) fn eps_from_x0(sched: &NoiseSchedule, x_t: &[Point], x0_hat: &[Point], t: usize) -> Result<Vec<Point>> {
    let (a, s) = (sched.alpha(t)?, sched.sigma(t)?);
    if s == 0.0 {
        return Ok(vec![[0.0; 3]; x_t.len()]);
    }
    Ok(x_t
        .iter()
        .zip(x0_hat)
        .map(|(p, q)| [(p[0] - a * q[0]) / s, (p[1] - a * q[1]) / s, (p[2] - a * q[2]) / s])
        .collect())
}

pub(crate) fn check_denoisable(sched: &NoiseSchedule, t: usize) -> Result<(f64, f64)> {
    let (a, s) = (sched.alpha(t)?, sched.sigma(t)?);
    if a == 0.0 {
        return Err(Error::AlphaZero(t));
    }
    Ok((a, s))
}
