use crate::error::{Error, Result};

/// Averages `K` probability vectors and returns the mean with its argmax
/// (lowest class index on ties).
pub fn vote(predictions: &[Vec<f64>]) -> Result<(Vec<f64>, usize)> {
    let first = predictions.first().ok_or(Error::EmptyVoteSet)?;
    let c = first.len();
    let mut mean = vec![0.0; c];
    for p in predictions {
        if p.len() != c {
            return Err(Error::ShapeMismatch { expected: c, got: p.len() });
        }
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    let k = predictions.len() as f64;
    mean.iter_mut().for_each(|m| *m /= k);
    Ok((mean.clone(), argmax(&mean)))
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
