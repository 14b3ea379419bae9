use crate::error::{Error, Result};

/// `confusion[true][predicted]` counts.
pub fn confusion_matrix(classes: usize, truth: &[usize], pred: &[usize]) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0; classes]; classes];
    for (&t, &p) in truth.iter().zip(pred) {
        m[t][p] += 1;
    }
    m
}

/// Mean per-class recall. Fails on the first class without true instances.
pub fn macro_recall(confusion: &[Vec<u64>]) -> Result<f64> {
    let mut sum = 0.0;
    for (c, row) in confusion.iter().enumerate() {
        let support: u64 = row.iter().sum();
        if support == 0 {
            return Err(Error::UndefinedClassRecall(c));
        }
        sum += row[c] as f64 / support as f64;
    }
    if confusion.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(sum / confusion.len() as f64)
}

/// Mean recall over the classes that have true instances; classes without
/// support are skipped with a warning. `None` if no class has support.
pub fn macro_recall_supported(confusion: &[Vec<u64>]) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0;
    for (c, row) in confusion.iter().enumerate() {
        let support: u64 = row.iter().sum();
        if support == 0 {
            log::warn!("class {c} has no instances in this stream; excluded from macro-recall");
            continue;
        }
        sum += row[c] as f64 / support as f64;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

pub fn accuracy(truth: &[usize], pred: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    truth.iter().zip(pred).filter(|(t, p)| t == p).count() as f64 / truth.len() as f64
}

pub fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) })
}
