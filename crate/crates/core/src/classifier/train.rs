use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::PointClassifier;
use crate::adapt::optim::AdamW;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 30, lr: 3e-3, batch_size: 16, seed: 0 }
    }
}

/// Cross-entropy `-log p_label` and its gradient over all parameters.
pub fn cross_entropy(model: &PointClassifier, pc: &PointCloud, label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= model.classes() {
        return Err(Error::Config(format!("label {label} out of range for {} classes", model.classes())));
    }
    let fwd = model.forward(pc);
    let mut dz = fwd.probs();
    dz[label] -= 1.0;
    Ok((-fwd.log_probs[label], model.backward(pc, &fwd, &dz)))
}

/// Minimizes mean cross-entropy with mini-batch Adam. Returns the mean
/// training loss of every epoch. Per-sample gradients are computed in
/// parallel and summed in sample order, so the result is deterministic.
pub fn train_source(model: &mut PointClassifier, data: &[PointCloud], cfg: &TrainConfig) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("training needs positive epochs, batch size and lr".into()));
    }
    let labels: Vec<usize> = data
        .iter()
        .enumerate()
        .map(|(i, pc)| pc.label.ok_or_else(|| Error::Config(format!("training cloud {i} has no label"))))
        .collect::<Result<_>>()?;
    let mut opt = AdamW::new(model.params().len(), 0.0);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut stream(cfg.seed, &[epoch as u64]));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let snapshot = &*model;
            let results: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&i| cross_entropy(snapshot, &data[i], labels[i]))
                .collect::<Result<_>>()?;
            let mut grad = vec![0.0; model.params().len()];
            for (loss, g) in &results {
                epoch_loss += loss;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            let inv = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            opt.step(model.params_mut(), &grad, cfg.lr);
        }
        history.push(epoch_loss / data.len() as f64);
    }
    Ok(history)
}

/// Fraction of clouds whose argmax prediction equals their label.
pub fn accuracy(model: &PointClassifier, data: &[PointCloud]) -> f64 {
    let preds = model.predict_many(data);
    let hits = preds
        .iter()
        .zip(data)
        .filter(|(p, pc)| Some(crate::adapt::argmax(p)) == pc.label)
        .count();
    hits as f64 / data.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::standard_normal;

    fn blob(seed: u64, center: [f64; 3], label: usize) -> PointCloud {
        let pts = standard_normal(24, &mut stream(seed, &[]))
            .into_iter()
            .map(|p| [center[0] + 0.2 * p[0], center[1] + 0.2 * p[1], center[2] + 0.2 * p[2]])
            .collect();
        PointCloud::new(pts).unwrap().with_label(label)
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let m = PointClassifier::new(5, 3, seed).unwrap();
            let pc = blob(seed + 50, [0.1, -0.2, 0.3], 1);
            let (_, g) = cross_entropy(&m, &pc, 1).unwrap();
            let h = 1e-5;
            for i in 0..m.params().len() {
                let mut mp = m.clone();
                mp.params_mut()[i] += h;
                let mut mm = m.clone();
                mm.params_mut()[i] -= h;
                let num = (cross_entropy(&mp, &pc, 1).unwrap().0 - cross_entropy(&mm, &pc, 1).unwrap().0) / (2.0 * h);
                let err = (num - g[i]).abs() / num.abs().max(g[i].abs()).max(1e-6);
                assert!(err < 1e-4, "param {i}: {} vs {num}", g[i]);
            }
        }
    }

    #[test]
    fn single_class_dataset() {
        let data: Vec<PointCloud> = (0..10).map(|s| blob(s, [0.0; 3], 2)).collect();
        let mut m = PointClassifier::new(8, 3, 1).unwrap();
        train_source(&mut m, &data, &TrainConfig { epochs: 200, lr: 1e-2, ..Default::default() }).unwrap();
        for pc in &data {
            assert!(m.predict(pc)[2] >= 0.99);
        }
    }

    #[test]
    fn separable_loss_does_not_increase() {
        let mut data = Vec::new();
        for s in 0..12 {
            data.push(blob(s, [0.5, 0.0, 0.0], 0));
            data.push(blob(100 + s, [-0.5, 0.0, 0.0], 1));
        }
        let mut m = PointClassifier::new(8, 2, 3).unwrap();
        let cfg = TrainConfig { epochs: 25, lr: 1e-3, batch_size: 24, seed: 4 };
        let hist = train_source(&mut m, &data, &cfg).unwrap();
        for w in hist.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{hist:?}");
        }
        assert_eq!(accuracy(&m, &data), 1.0);
    }

    #[test]
    fn training_is_deterministic_and_validates() {
        let data: Vec<PointCloud> = (0..6).map(|s| blob(s, [0.0; 3], (s % 2) as usize)).collect();
        let cfg = TrainConfig { epochs: 3, ..Default::default() };
        let mut a = PointClassifier::new(4, 2, 0).unwrap();
        let mut b = a.clone();
        train_source(&mut a, &data, &cfg).unwrap();
        train_source(&mut b, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(matches!(train_source(&mut a, &[], &cfg), Err(Error::EmptyDataset)));
        let unlabeled = vec![PointCloud::new(vec![[0.0; 3], [1.0; 3]]).unwrap()];
        assert!(train_source(&mut a, &unlabeled, &cfg).is_err());
    }
}
