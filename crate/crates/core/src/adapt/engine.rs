use std::io::Write;

use serde::{Deserialize, Serialize};

use super::config::{lambda_schedule, lr_schedule, AdaptConfig, OptimizerKind};
use super::loss::adaptation_loss;
use super::optim::{gradient_descent_step, AdaMax};
use super::transform::{apply_transform, reg_weights, TransformParams};
use crate::denoise::Denoiser;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::rng::stream;
use crate::schedule::{forward_noise, sample_timestep, standard_normal, NoiseSchedule};

/// One optimizer step of one vote.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub t: usize,
    pub loss: f64,
    pub chamfer_term: f64,
    pub reg_term: f64,
    pub lr: f64,
    pub lambda: f64,
    /// Largest absolute change of any parameter in this step.
    pub max_step: f64,
}

/// Result of adapting one vote.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteResult {
    pub cloud: PointCloud,
    pub params: TransformParams,
    pub trace: Vec<TraceRow>,
}

/// Adapts `x` with `cfg.votes` independent transformations. `x` must be
/// diffusion-normalized. Vote `m` draws all its randomness from the stream
/// `(cfg.seed, m)`, so results do not depend on how votes are scheduled.
pub fn adapt_input(
    x: &PointCloud,
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    cfg: &AdaptConfig,
) -> Result<Vec<VoteResult>> {
    cfg.validate()?;
    check_denoiser(denoiser, sched)?;
    let weights = reg_weights(x, cfg.regularization, cfg.knn_k)?;
    (0..cfg.votes).map(|m| adapt_vote(x, &weights, denoiser, sched, cfg, m as u64)).collect()
}

fn check_denoiser(denoiser: &dyn Denoiser, sched: &NoiseSchedule) -> Result<()> {
    if denoiser.timesteps() != sched.timesteps {
        return Err(Error::Config(format!(
            "denoiser {} expects T = {}, schedule has T = {}",
            denoiser.name(),
            denoiser.timesteps(),
            sched.timesteps
        )));
    }
    Ok(())
}

/// Runs a single vote with precomputed regularization weights.
pub fn adapt_vote(
    x: &PointCloud,
    weights: &[f64],
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    cfg: &AdaptConfig,
    vote: u64,
) -> Result<VoteResult> {
    let mut rng = stream(cfg.seed, &[vote]);
    let mut params = TransformParams::identity(x.len(), cfg.transform);
    let mut theta = params.to_flat();
    let mut adamax = AdaMax::new(theta.len(), cfg.beta1, cfg.beta2, cfg.eps);
    let mut trace = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let t = sample_timestep(&cfg.t_range, sched.timesteps, &mut rng)?;
        let eps = standard_normal(x.len(), &mut rng);
        let y = apply_transform(x, &params)?;
        let x_t = forward_noise(sched, &y, t, &eps)?;
        let y_hat = denoiser.denoise_x0(sched, &x_t, t)?;

        let lr = lr_schedule(step, cfg);
        let lambda = lambda_schedule(step, cfg);
        let out = adaptation_loss(x, &params, &y_hat, weights, lambda, cfg.loss)?;
        let grad = out.flat_grad();
        let before = theta.clone();
        match cfg.optimizer {
            OptimizerKind::Adamax => adamax.step(&mut theta, &grad, lr),
            OptimizerKind::GradientDescent => gradient_descent_step(&mut theta, &grad, lr),
        }
        params.set_flat(&theta);
        let max_step = theta.iter().zip(&before).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        trace.push(TraceRow {
            step,
            t,
            loss: out.loss,
            chamfer_term: out.distance_term,
            reg_term: out.reg_term,
            lr,
            lambda,
            max_step,
        });
    }
    let cloud = apply_transform(x, &params)?;
    Ok(VoteResult { cloud, params, trace })
}

/// Writes a trace as CSV with columns `step,loss,chamfer_term,reg_term,lr,lambda`.
pub fn write_trace_csv<W: Write>(mut w: W, rows: &[TraceRow]) -> Result<()> {
    writeln!(w, "step,loss,chamfer_term,reg_term,lr,lambda")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{},{}", r.step, r.loss, r.chamfer_term, r.reg_term, r.lr, r.lambda)?;
    }
    Ok(())
}
