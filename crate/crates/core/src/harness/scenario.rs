use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StreamOrder {
    #[default]
    IidShuffled,
    LabelSorted,
}

/// How the test stream is presented: batch size, order and label shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub batch_size: usize,
    pub order: StreamOrder,
    /// Ratio between the largest and smallest class count.
    pub imbalance_ratio: f64,
    /// Stream length; all instances when absent and the ratio is 1.
    pub n_instances: Option<usize>,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self { batch_size: 1, order: StreamOrder::IidShuffled, imbalance_ratio: 1.0, n_instances: None, seed: 0 }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.imbalance_ratio >= 1.0) {
            return Err(Error::Config(format!("imbalance_ratio must be >= 1, got {}", self.imbalance_ratio)));
        }
        Ok(())
    }
}

/// Class counts following a geometric profile from `total * w_0` down to a
/// count `ratio` times smaller, apportioned by largest remainder.
pub fn imbalance_counts(classes: usize, total: usize, ratio: f64) -> Result<Vec<usize>> {
    if classes == 0 {
        return Err(Error::EmptyDataset);
    }
    let weights: Vec<f64> = (0..classes)
        .map(|c| if classes == 1 { 1.0 } else { ratio.powf(-(c as f64) / (classes - 1) as f64) })
        .collect();
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..classes).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &c in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[c] += 1;
        rest -= 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::InfeasibleImbalance(c));
    }
    Ok(counts)
}

/// Orders (and, under label shift, subsamples) a labeled dataset into an
/// evaluation stream. Returns dataset indices.
pub fn make_stream(labels: &[usize], scenario: &ScenarioSpec) -> Result<Vec<usize>> {
    scenario.validate()?;
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = labels.iter().max().expect("non-empty") + 1;
    let mut rng = stream(scenario.seed, &[0x7374_7265]);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut chosen: Vec<usize> = if scenario.imbalance_ratio == 1.0 && scenario.n_instances.is_none() {
        (0..labels.len()).collect()
    } else {
        let total = scenario.n_instances.unwrap_or(labels.len());
        let counts = imbalance_counts(classes, total, scenario.imbalance_ratio)?;
        let mut chosen = Vec::with_capacity(total);
        for (c, members) in by_class.iter_mut().enumerate() {
            if counts[c] > members.len() {
                return Err(Error::Config(format!(
                    "class {c} needs {} instances but the dataset has {}",
                    counts[c],
                    members.len()
                )));
            }
            members.shuffle(&mut rng);
            let mut take = members[..counts[c]].to_vec();
            take.sort_unstable();
            chosen.extend(take);
        }
        chosen
    };
    chosen.shuffle(&mut rng);
    if scenario.order == StreamOrder::LabelSorted {
        chosen.sort_by_key(|&i| labels[i]);
    }
    Ok(chosen)
}
