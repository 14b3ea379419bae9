use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::TimestepRange;

/// Distance between the denoised estimate and the transformed cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Chamfer,
    /// Row-wise mean squared distance; requires matching point order.
    SquaredL2,
}

/// How displacement regularization is weighted across points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RegKind {
    /// Inverse summed distance to the k nearest neighbours, normalized.
    #[default]
    Knn,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    #[default]
    Rotation,
    /// Unconstrained 3x3 matrix in place of the rotation.
    Affine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adamax,
    GradientDescent,
}

/// Hyperparameters of the input-adaptation loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub steps: usize,
    pub votes: usize,
    pub knn_k: usize,
    pub t_range: TimestepRange,
    pub lr_peak: f64,
    pub lr_final: f64,
    pub warmup_steps: usize,
    pub lambda_init: f64,
    pub lambda_final: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub loss: LossKind,
    pub regularization: RegKind,
    pub transform: TransformKind,
    pub optimizer: OptimizerKind,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            steps: 30,
            votes: 5,
            knn_k: 5,
            t_range: TimestepRange::default(),
            lr_peak: 0.2,
            lr_final: 0.01,
            warmup_steps: 6,
            lambda_init: 10.0,
            lambda_final: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            loss: LossKind::default(),
            regularization: RegKind::default(),
            transform: TransformKind::default(),
            optimizer: OptimizerKind::default(),
        }
    }
}

impl AdaptConfig {
    /// Sets the step count and rescales warmup to `ceil(0.2 * steps)`.
    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self.warmup_steps = warmup_for(steps);
        self
    }

    pub fn with_votes(mut self, votes: usize) -> Self {
        self.votes = votes;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// The "no regularization" ablation.
    pub fn without_regularization(mut self) -> Self {
        self.lambda_init = 0.0;
        self.lambda_final = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.steps == 0 {
            return fail("steps must be at least 1".into());
        }
        if self.votes == 0 {
            return fail("votes must be at least 1".into());
        }
        if self.knn_k == 0 {
            return fail("knn_k must be at least 1".into());
        }
        if self.warmup_steps > self.steps {
            return fail(format!("warmup_steps {} exceeds steps {}", self.warmup_steps, self.steps));
        }
        if !(self.lr_peak > 0.0 && self.lr_final > 0.0 && self.eps > 0.0) {
            return fail("learning rates and eps must be positive".into());
        }
        if !(self.lambda_init >= 0.0 && self.lambda_final >= 0.0) {
            return fail("regularization strengths must be non-negative".into());
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return fail("betas must lie in [0, 1)".into());
        }
        self.t_range.validate()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn warmup_for(steps: usize) -> usize {
    (0.2 * steps as f64).ceil() as usize
}

/// Linear warmup from 0 to `lr_peak`, then linear decay to `lr_final` at the
/// last step.
pub fn lr_schedule(n: usize, cfg: &AdaptConfig) -> f64 {
    let w = cfg.warmup_steps;
    if n < w {
        return cfg.lr_peak * n as f64 / w as f64;
    }
    let last = cfg.steps.saturating_sub(1);
    if last <= w {
        return cfg.lr_peak;
    }
    let frac = (n - w) as f64 / (last - w) as f64;
    cfg.lr_peak + (cfg.lr_final - cfg.lr_peak) * frac
}

/// Cosine anneal from `lambda_init` at step 0 to `lambda_final` at the last step.
pub fn lambda_schedule(n: usize, cfg: &AdaptConfig) -> f64 {
    if cfg.steps <= 1 {
        return cfg.lambda_init;
    }
    let frac = n as f64 / (cfg.steps - 1) as f64;
    cfg.lambda_final + (cfg.lambda_init - cfg.lambda_final) * (1.0 + (std::f64::consts::PI * frac).cos()) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_anchor_values() {
        let cfg = AdaptConfig::default();
        assert_eq!(lr_schedule(0, &cfg), 0.0);
        assert_eq!(lambda_schedule(0, &cfg), 10.0);
        assert!((lr_schedule(6, &cfg) - 0.2).abs() < 1e-15);
        assert!((lr_schedule(29, &cfg) - 0.01).abs() < 1e-15);
        assert!((lambda_schedule(29, &cfg) - 1.0).abs() < 1e-15);
        assert!((lr_schedule(3, &cfg) - 0.1).abs() < 1e-15);
        // warmup then monotone decay
        for n in 6..29 {
            assert!(lr_schedule(n + 1, &cfg) < lr_schedule(n, &cfg));
            assert!(lambda_schedule(n + 1, &cfg) < lambda_schedule(n, &cfg));
        }
    }

    #[test]
    fn warmup_rounding() {
        assert_eq!(warmup_for(30), 6);
        assert_eq!(warmup_for(10), 2);
        assert_eq!(warmup_for(11), 3);
        let cfg = AdaptConfig::default().with_steps(1);
        cfg.validate().unwrap();
        assert_eq!(lambda_schedule(0, &cfg), 10.0);
    }

    #[test]
    fn json_defaults_and_validation() {
        let cfg = AdaptConfig::from_json(r#"{"steps": 12, "votes": 3, "loss": "squared_l2"}"#).unwrap();
        assert_eq!(cfg.steps, 12);
        assert_eq!(cfg.knn_k, 5);
        assert_eq!(cfg.loss, LossKind::SquaredL2);
        assert!(AdaptConfig::from_json(r#"{"steps": 0}"#).is_err());
        assert!(AdaptConfig::from_json(r#"{"steps": 3, "warmup_steps": 6}"#).is_err());
        assert!(AdaptConfig::from_json(r#"{"stepz": 3}"#).is_err());
    }
}
