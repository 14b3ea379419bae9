//! First-order optimizers over flat parameter vectors.

use serde::{Deserialize, Serialize};

/// AdaMax: Adam with the infinity norm in place of the second moment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaMax {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    u: Vec<f64>,
    step: u32,
}

impl AdaMax {
    pub fn new(dim: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { beta1, beta2, eps, m: vec![0.0; dim], u: vec![0.0; dim], step: 0 }
    }

    pub fn steps_taken(&self) -> u32 {
        self.step
    }

    /// Largest possible `|delta theta| / lr` at step `t` (1-based). Equals 1 at
    /// the first step and approaches `(1 - b1) / (1 - b1 / b2)` (about 1.009
    /// for the defaults) when gradients shrink at rate `b2`.
    pub fn movement_bound(beta1: f64, beta2: f64, t: i32) -> f64 {
        let r = beta1 / beta2;
        (1.0 - beta1) * (1.0 - r.powi(t)) / ((1.0 - r) * (1.0 - beta1.powi(t)))
    }

    /// `m <- b1 m + (1-b1) g; u <- max(b2 u, |g|);
    ///  theta <- theta - lr / (1 - b1^t) * m / (u + eps)`
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(theta.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.step += 1;
        let step_size = lr / (1.0 - self.beta1.powi(self.step as i32));
        for (((th, g), m), u) in theta.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.u) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *u = (self.beta2 * *u).max(g.abs());
            *th -= step_size * *m / (*u + self.eps);
        }
    }
}

/// Plain gradient descent, `theta <- theta - lr g`.
pub fn gradient_descent_step(theta: &mut [f64], grad: &[f64], lr: f64) {
    for (th, g) in theta.iter_mut().zip(grad) {
        *th -= lr * g;
    }
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u32,
}

impl AdamW {
    pub fn new(dim: usize, weight_decay: f64) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, m: vec![0.0; dim], v: vec![0.0; dim], step: 0 }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(theta.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((th, g), m), v) in theta.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *th -= lr * self.weight_decay * *th;
            *th -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn adamax_first_step_is_signed_lr() {
        let mut opt = AdaMax::new(3, 0.9, 0.999, 1e-8);
        let mut th = [1.0, 1.0, 1.0];
        let g = [2.0, -0.5, 1e-3];
        opt.step(&mut th, &g, 0.2);
        for k in 0..3 {
            let want = 1.0 - 0.2 * g[k] / (g[k].abs() + 1e-8);
            assert!((th[k] - want).abs() < 1e-15);
            assert!(((1.0 - th[k]).abs() - 0.2).abs() < 1e-5);
        }
    }

    #[test]
    fn adamax_zero_gradient_never_moves() {
        let mut opt = AdaMax::new(2, 0.9, 0.999, 1e-8);
        let mut th = [0.3, -4.0];
        for _ in 0..50 {
            opt.step(&mut th, &[0.0, 0.0], 0.2);
        }
        assert_eq!(th, [0.3, -4.0]);
    }

    #[test]
    fn adamax_movement_is_bounded() {
        let mut rng = stream(12, &[]);
        for _ in 0..200 {
            let mut opt = AdaMax::new(4, 0.9, 0.999, 1e-8);
            let mut th = [0.0; 4];
            let base: f64 = rng.random_range(1e-4..10.0);
            for t in 1..=60 {
                let g: Vec<f64> = (0..4).map(|_| base * rng.random_range(-1.0..1.0)).collect();
                let lr = rng.random_range(0.0..0.3);
                let before = th;
                opt.step(&mut th, &g, lr);
                let bound = lr * AdaMax::movement_bound(0.9, 0.999, t);
                for k in 0..4 {
                    assert!((th[k] - before[k]).abs() <= bound * (1.0 + 1e-12));
                }
            }
        }
        assert!((AdaMax::movement_bound(0.9, 0.999, 1) - 1.0).abs() < 1e-15);
        assert!(AdaMax::movement_bound(0.9, 0.999, 10_000) < 1.0091);
    }

    #[test]
    fn adamax_constant_gradient_moves_at_most_lr() {
        let mut opt = AdaMax::new(1, 0.9, 0.999, 1e-8);
        let mut th = [0.0];
        for _ in 0..100 {
            let before = th[0];
            opt.step(&mut th, &[3.0], 0.1);
            assert!((th[0] - before).abs() <= 0.1);
        }
    }

    #[test]
    fn adamax_bound_is_attained_by_geometric_decay() {
        // gradients shrinking at rate b2 keep u flat while m keeps the history
        let mut opt = AdaMax::new(1, 0.9, 0.999, 0.0);
        let mut th = [0.0];
        let mut last = 0.0;
        for t in 0..500 {
            let before = th[0];
            opt.step(&mut th, &[0.999f64.powi(t)], 1.0);
            last = (th[0] - before).abs();
        }
        assert!(last > 1.0);
        assert!((last - AdaMax::movement_bound(0.9, 0.999, 500)).abs() < 1e-9);
    }

    #[test]
    fn adamw_zero_gradient_only_decays() {
        let mut opt = AdamW::new(2, 0.01);
        let mut th = [1.0, -2.0];
        opt.step(&mut th, &[0.0, 0.0], 1e-3);
        assert_eq!(th, [1.0 * (1.0 - 1e-5), -2.0 * (1.0 - 1e-5)]);
    }

    #[test]
    fn adamw_descends_a_quadratic() {
        let mut opt = AdamW::new(1, 0.0);
        let mut th = [5.0];
        for _ in 0..2000 {
            let g = [2.0 * th[0]];
            opt.step(&mut th, &g, 0.05);
        }
        assert!(th[0].abs() < 0.05);
    }
}
