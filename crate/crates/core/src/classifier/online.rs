use serde::{Deserialize, Serialize};

use super::model::PointClassifier;
use crate::adapt::optim::AdamW;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;

const PROB_FLOOR: f64 = 1e-12;

/// `KL(p || q) = sum_c p_c log(p_c / q_c)` with probabilities floored at
/// 1e-12 inside the logarithm.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pc, _)| **pc > 0.0)
        .map(|(pc, qc)| pc * (pc.max(PROB_FLOOR).ln() - qc.max(PROB_FLOOR).ln()))
        .sum()
}

/// `sum_j KL(f(x) || f(y_j))` and its gradient with respect to the encoder
/// parameters. Gradients flow through both the prediction on `x` and the
/// predictions on the adapted clouds; the head is excluded.
///
/// Log-probabilities come from a log-softmax, so they are finite and no floor
/// is needed. In logit space the derivatives are
/// `dKL/dz = p * (log p - log q - KL)` and `dKL/dw = q - p`.
pub fn kl_consistency_loss(model: &PointClassifier, x: &PointCloud, adapted: &[PointCloud]) -> (f64, Vec<f64>) {
    let fx = model.forward(x);
    let p = fx.probs();
    let mut dz_x = vec![0.0; p.len()];
    let mut loss = 0.0;
    let mut grad = vec![0.0; model.encoder_len()];
    for y in adapted {
        let fy = model.forward(y);
        let q = fy.probs();
        let kl: f64 = p.iter().zip(&fx.log_probs).zip(&fy.log_probs).map(|((pc, lp), lq)| pc * (lp - lq)).sum();
        loss += kl;
        for c in 0..p.len() {
            dz_x[c] += p[c] * (fx.log_probs[c] - fy.log_probs[c] - kl);
        }
        let dz_y: Vec<f64> = q.iter().zip(&p).map(|(qc, pc)| qc - pc).collect();
        add_encoder(&mut grad, &model.backward(y, &fy, &dz_y));
    }
    add_encoder(&mut grad, &model.backward(x, &fx, &dz_x));
    (loss, grad)
}

fn add_encoder(acc: &mut [f64], full: &[f64]) {
    for (a, g) in acc.iter_mut().zip(full) {
        *a += g;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineConfig {
    /// Model update steps per batch.
    pub steps: usize,
    pub lr: f64,
    /// Adapted versions per input used for the consistency loss.
    pub votes: usize,
    pub weight_decay: f64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self { steps: 1, lr: 1e-5, votes: 3, weight_decay: 0.01 }
    }
}

impl OnlineConfig {
    /// Default learning rate for a batch size: 1e-6 at batch 1, 1e-5 otherwise.
    pub fn for_batch_size(batch_size: usize) -> Self {
        let lr = if batch_size <= 1 { 1e-6 } else { 1e-5 };
        Self { lr, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.votes == 0 || !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("online config needs positive steps, votes and lr".into()));
        }
        Ok(())
    }
}

/// Optimizer state of the online model update. It persists across batches
/// and is never reset.
#[derive(Debug, Clone)]
pub struct OnlineAdapter {
    cfg: OnlineConfig,
    opt: AdamW,
}

impl OnlineAdapter {
    pub fn new(model: &PointClassifier, cfg: OnlineConfig) -> Result<Self> {
        cfg.validate()?;
        let opt = AdamW::new(model.encoder_len(), cfg.weight_decay);
        Ok(Self { cfg, opt })
    }

    pub fn config(&self) -> &OnlineConfig {
        &self.cfg
    }

    /// Runs `steps` AdamW steps on the summed consistency loss of the batch
    /// and returns the loss before the first step.
    pub fn update(&mut self, model: &mut PointClassifier, batch: &[(PointCloud, Vec<PointCloud>)]) -> Result<f64> {
        online_update(model, &mut self.opt, batch, &self.cfg)
    }
}

/// Summed consistency loss over a batch and its encoder gradient.
pub fn batch_consistency(model: &PointClassifier, batch: &[(PointCloud, Vec<PointCloud>)]) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut grad = vec![0.0; model.encoder_len()];
    for (x, adapted) in batch {
        let (l, g) = kl_consistency_loss(model, x, adapted);
        loss += l;
        add_encoder(&mut grad, &g);
    }
    (loss, grad)
}

pub fn online_update(
    model: &mut PointClassifier,
    opt: &mut AdamW,
    batch: &[(PointCloud, Vec<PointCloud>)],
    cfg: &OnlineConfig,
) -> Result<f64> {
    let e = model.encoder_len();
    let mut first = None;
    for _ in 0..cfg.steps {
        let (loss, grad) = batch_consistency(model, batch);
        first.get_or_insert(loss);
        opt.step(&mut model.params_mut()[..e], &grad, cfg.lr);
    }
    Ok(first.unwrap_or(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::schedule::standard_normal;

    fn cloud(seed: u64, n: usize) -> PointCloud {
        let pts = standard_normal(n, &mut stream(seed, &[])).into_iter().map(|p| [0.5 * p[0], 0.5 * p[1], 0.5 * p[2]]).collect();
        PointCloud::new(pts).unwrap()
    }

    fn jitter(pc: &PointCloud, seed: u64, s: f64) -> PointCloud {
        let e = standard_normal(pc.len(), &mut stream(seed, &[1]));
        PointCloud::new(pc.points.iter().zip(e).map(|(p, e)| [p[0] + s * e[0], p[1] + s * e[1], p[2] + s * e[2]]).collect()).unwrap()
    }

    #[test]
    fn kl_hand_values() {
        assert!((kl_divergence(&[1.0, 0.0], &[0.5, 0.5]) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
        assert!(kl_divergence(&[0.5, 0.5], &[1.0, 0.0]).is_finite());
    }

    #[test]
    fn identical_inputs_give_zero_loss_and_gradient() {
        let m = PointClassifier::new(8, 3, 2).unwrap();
        let x = cloud(1, 20);
        let (l, g) = kl_consistency_loss(&m, &x, &[x.clone(), x.clone(), x.clone()]);
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn loss_matches_probability_formula() {
        let m = PointClassifier::new(8, 4, 3).unwrap();
        let x = cloud(2, 20);
        let ys = [jitter(&x, 1, 0.2), jitter(&x, 2, 0.2)];
        let (l, _) = kl_consistency_loss(&m, &x, &ys);
        let p = m.predict(&x);
        let direct: f64 = ys.iter().map(|y| kl_divergence(&p, &m.predict(y))).sum();
        assert!((l - direct).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..5 {
            let m = PointClassifier::new(5, 3, seed).unwrap();
            let x = cloud(seed + 10, 10);
            let ys = vec![jitter(&x, seed, 0.3), jitter(&x, seed + 100, 0.3)];
            let (_, g) = kl_consistency_loss(&m, &x, &ys);
            assert_eq!(g.len(), m.encoder_len());
            let h = 1e-5;
            for i in 0..g.len() {
                let mut mp = m.clone();
                mp.params_mut()[i] += h;
                let mut mm = m.clone();
                mm.params_mut()[i] -= h;
                let num = (kl_consistency_loss(&mp, &x, &ys).0 - kl_consistency_loss(&mm, &x, &ys).0) / (2.0 * h);
                let err = (num - g[i]).abs() / num.abs().max(g[i].abs()).max(1e-7);
                assert!(err < 1e-4, "param {i}: {} vs {num}", g[i]);
            }
        }
    }

    #[test]
    fn head_is_frozen_and_small_steps_descend() {
        let mut descended = 0;
        for seed in 0..20 {
            let mut m = PointClassifier::new(8, 3, seed).unwrap();
            let head = m.head().to_vec();
            let batch: Vec<_> = (0..4)
                .map(|i| {
                    let x = cloud(seed * 10 + i, 16);
                    let ys = (0..3).map(|k| jitter(&x, 1000 * seed + 10 * i + k, 0.1)).collect();
                    (x, ys)
                })
                .collect();
            let cfg = OnlineConfig { lr: 1e-6, weight_decay: 0.0, ..Default::default() };
            let mut ad = OnlineAdapter::new(&m, cfg).unwrap();
            let before = ad.update(&mut m, &batch).unwrap();
            let after = batch_consistency(&m, &batch).0;
            if after <= before {
                descended += 1;
            }
            for _ in 0..3 {
                ad.update(&mut m, &batch).unwrap();
            }
            assert_eq!(m.head(), &head[..]);
        }
        assert!(descended >= 18, "{descended}/20");
    }

    #[test]
    fn zero_gradient_batch_only_decays() {
        let mut m = PointClassifier::new(6, 3, 7).unwrap();
        let orig = m.clone();
        let x = cloud(3, 12);
        let mut ad = OnlineAdapter::new(&m, OnlineConfig::default()).unwrap();
        ad.update(&mut m, &[(x.clone(), vec![x.clone()]), (x.clone(), vec![x])]).unwrap();
        let e = m.encoder_len();
        let shrink = 1.0 - 1e-5 * 0.01;
        for (a, b) in m.params()[..e].iter().zip(&orig.params()[..e]) {
            assert!((a - b * shrink).abs() <= 1e-15 * b.abs());
        }
        assert_eq!(m.head(), orig.head());
    }
}
