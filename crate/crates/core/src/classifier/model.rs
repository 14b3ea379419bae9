use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud};
use crate::numeric::log_sum_exp;
use crate::rng::stream;

pub const DEFAULT_HIDDEN: usize = 64;

/// Per-point two-layer tanh encoder, max pooling over points, linear head
/// and softmax. All parameters live in one flat vector, encoder first:
/// `W1 (H x 3), b1, W2 (H x H), b2, Wh (C x H), bh`, matrices row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointClassifier {
    hidden: usize,
    classes: usize,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass needed by the backward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Pooled feature.
    pub feature: Vec<f64>,
    /// Point index that attains the max in each channel (lowest on ties).
    pub argmax: Vec<usize>,
    pub logits: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl Forward {
    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }
}

impl PointClassifier {
    /// Random initialization scaled by fan-in.
    pub fn new(hidden: usize, classes: usize, seed: u64) -> Result<Self> {
        if hidden == 0 || classes < 2 {
            return Err(Error::Config(format!("classifier needs hidden >= 1 and classes >= 2, got {hidden}, {classes}")));
        }
        let mut m = Self { hidden, classes, params: vec![0.0; Self::param_count(hidden, classes)] };
        let mut rng = stream(seed, &[0x636c_73]);
        let h = hidden;
        let fill = |slice: &mut [f64], std: f64, rng: &mut crate::rng::Rng| {
            let d = Normal::new(0.0, std).expect("positive std");
            slice.iter_mut().for_each(|v| *v = d.sample(rng));
        };
        let o = m.offsets();
        fill(&mut m.params[o.w1..o.b1], (1.0f64 / 3.0).sqrt() * 2.0, &mut rng);
        for v in &mut m.params[o.b1..o.w2] {
            *v = rng.random_range(-1.0..1.0);
        }
        fill(&mut m.params[o.w2..o.b2], (1.0 / h as f64).sqrt(), &mut rng);
        fill(&mut m.params[o.wh..o.bh], (1.0 / h as f64).sqrt(), &mut rng);
        Ok(m)
    }

    pub fn from_params(hidden: usize, classes: usize, params: Vec<f64>) -> Result<Self> {
        let want = Self::param_count(hidden, classes);
        if params.len() != want {
            return Err(Error::ShapeMismatch { expected: want, got: params.len() });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite classifier parameter".into()));
        }
        Ok(Self { hidden, classes, params })
    }

    pub fn param_count(hidden: usize, classes: usize) -> usize {
        Self::encoder_count(hidden) + classes * hidden + classes
    }

    fn encoder_count(hidden: usize) -> usize {
        5 * hidden + hidden * hidden
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Number of leading parameters that belong to the encoder.
    pub fn encoder_len(&self) -> usize {
        Self::encoder_count(self.hidden)
    }

    pub fn head(&self) -> &[f64] {
        &self.params[self.encoder_len()..]
    }

    pub fn head_mut(&mut self) -> &mut [f64] {
        let e = self.encoder_len();
        &mut self.params[e..]
    }

    pub(crate) fn offsets(&self) -> Offsets {
        let h = self.hidden;
        let w1 = 0;
        let b1 = w1 + 3 * h;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let wh = b2 + h;
        let bh = wh + self.classes * h;
        Offsets { w1, b1, w2, b2, wh, bh }
    }

    fn point_features(&self, p: Point, h1: &mut [f64], h2: &mut [f64]) {
        let o = self.offsets();
        let h = self.hidden;
        let w1 = &self.params[o.w1..o.b1];
        let b1 = &self.params[o.b1..o.w2];
        for c in 0..h {
            let w = &w1[3 * c..3 * c + 3];
            h1[c] = (w[0] * p[0] + w[1] * p[1] + w[2] * p[2] + b1[c]).tanh();
        }
        let w2 = &self.params[o.w2..o.b2];
        let b2 = &self.params[o.b2..o.wh];
        for c in 0..h {
            let row = &w2[h * c..h * (c + 1)];
            let mut s = b2[c];
            for (w, v) in row.iter().zip(h1.iter()) {
                s += w * v;
            }
            h2[c] = s.tanh();
        }
    }

    pub fn forward(&self, pc: &PointCloud) -> Forward {
        let h = self.hidden;
        let mut feature = vec![f64::NEG_INFINITY; h];
        let mut argmax = vec![0; h];
        let mut h1 = vec![0.0; h];
        let mut h2 = vec![0.0; h];
        for (j, &p) in pc.points.iter().enumerate() {
            self.point_features(p, &mut h1, &mut h2);
            for c in 0..h {
                if h2[c] > feature[c] {
                    feature[c] = h2[c];
                    argmax[c] = j;
                }
            }
        }
        let o = self.offsets();
        let wh = &self.params[o.wh..o.bh];
        let bh = &self.params[o.bh..];
        let logits: Vec<f64> = (0..self.classes)
            .map(|k| {
                let mut s = bh[k];
                for (w, f) in wh[h * k..h * (k + 1)].iter().zip(&feature) {
                    s += w * f;
                }
                s
            })
            .collect();
        let lse = log_sum_exp(&logits);
        let log_probs = logits.iter().map(|z| z - lse).collect();
        Forward { feature, argmax, logits, log_probs }
    }

    /// Class probabilities.
    pub fn predict(&self, pc: &PointCloud) -> Vec<f64> {
        self.forward(pc).probs()
    }

    pub fn predict_many(&self, clouds: &[PointCloud]) -> Vec<Vec<f64>> {
        clouds.par_iter().map(|pc| self.predict(pc)).collect()
    }

    /// Gradient of a scalar with respect to every parameter, given its
    /// gradient `d_logits` with respect to the logits of `fwd`.
    pub fn backward(&self, pc: &PointCloud, fwd: &Forward, d_logits: &[f64]) -> Vec<f64> {
        let h = self.hidden;
        let o = self.offsets();
        let mut grad = vec![0.0; self.params.len()];
        let wh = &self.params[o.wh..o.bh];
        let mut d_feat = vec![0.0; h];
        for (k, dz) in d_logits.iter().enumerate() {
            grad[o.bh + k] += dz;
            for c in 0..h {
                grad[o.wh + h * k + c] += dz * fwd.feature[c];
                d_feat[c] += dz * wh[h * k + c];
            }
        }
        // only the points that won some channel receive gradient
        let mut winners: Vec<usize> = fwd.argmax.clone();
        winners.sort_unstable();
        winners.dedup();
        let w2 = &self.params[o.w2..o.b2];
        let mut h1 = vec![0.0; h];
        let mut h2 = vec![0.0; h];
        let mut da2 = vec![0.0; h];
        for &j in &winners {
            let p = pc.points[j];
            self.point_features(p, &mut h1, &mut h2);
            for c in 0..h {
                da2[c] = if fwd.argmax[c] == j { d_feat[c] * (1.0 - h2[c] * h2[c]) } else { 0.0 };
            }
            let mut dh1 = vec![0.0; h];
            for c in 0..h {
                let d = da2[c];
                if d == 0.0 {
                    continue;
                }
                grad[o.b2 + c] += d;
                let row = &w2[h * c..h * (c + 1)];
                for i in 0..h {
                    grad[o.w2 + h * c + i] += d * h1[i];
                    dh1[i] += d * row[i];
                }
            }
            for i in 0..h {
                let d = dh1[i] * (1.0 - h1[i] * h1[i]);
                grad[o.b1 + i] += d;
                grad[o.w1 + 3 * i] += d * p[0];
                grad[o.w1 + 3 * i + 1] += d * p[1];
                grad[o.w1 + 3 * i + 2] += d * p[2];
            }
        }
        grad
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let o = self.offsets();
        let (h, c) = (self.hidden, self.classes);
        let layer = |name: &str, shape: Vec<usize>, range: std::ops::Range<usize>| Layer {
            name: name.to_string(),
            shape,
            data: self.params[range].to_vec(),
        };
        Checkpoint {
            format: CHECKPOINT_FORMAT,
            hidden: h,
            classes: c,
            layers: vec![
                layer("encoder.0.weight", vec![h, 3], o.w1..o.b1),
                layer("encoder.0.bias", vec![h], o.b1..o.w2),
                layer("encoder.1.weight", vec![h, h], o.w2..o.b2),
                layer("encoder.1.bias", vec![h], o.b2..o.wh),
                layer("head.weight", vec![c, h], o.wh..o.bh),
                layer("head.bias", vec![c], o.bh..self.params.len()),
            ],
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("unsupported checkpoint format {}", ck.format)));
        }
        let (h, c) = (ck.hidden, ck.classes);
        let expected: [(&str, Vec<usize>); 6] = [
            ("encoder.0.weight", vec![h, 3]),
            ("encoder.0.bias", vec![h]),
            ("encoder.1.weight", vec![h, h]),
            ("encoder.1.bias", vec![h]),
            ("head.weight", vec![c, h]),
            ("head.bias", vec![c]),
        ];
        if ck.layers.len() != expected.len() {
            return Err(Error::Config(format!("checkpoint has {} layers, expected 6", ck.layers.len())));
        }
        let mut params = Vec::with_capacity(Self::param_count(h, c));
        for (layer, (name, shape)) in ck.layers.iter().zip(expected) {
            if layer.name != name || layer.shape != shape {
                return Err(Error::Config(format!("unexpected layer {} {:?}", layer.name, layer.shape)));
            }
            let n: usize = shape.iter().product();
            if layer.data.len() != n {
                return Err(Error::ShapeMismatch { expected: n, got: layer.data.len() });
            }
            params.extend_from_slice(&layer.data);
        }
        Self::from_params(h, c, params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_checkpoint())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_checkpoint(&serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Offsets {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub wh: usize,
    pub bh: usize,
}

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub hidden: usize,
    pub classes: usize,
    pub layers: Vec<Layer>,
}
