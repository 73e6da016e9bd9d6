use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::sample::{Label, Sample};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratify: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
            stratify: true,
        }
    }
}

/// `⌈fraction · n⌉`, treating products within 1e-9 of an integer as exact.
pub fn train_count(n: usize, fraction: f64) -> usize {
    let x = fraction * n as f64;
    let r = x.round();
    let k = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    (k.max(0.0) as usize).min(n)
}

fn shuffled(mut idx: Vec<usize>, seed: u64) -> Vec<usize> {
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Train and test index lists. With `stratify`, each label contributes
/// `⌈fraction · n_label⌉` to train.
pub fn split_indices(labels: &[Label], spec: &SplitSpec) -> (Vec<usize>, Vec<usize>) {
    if !spec.stratify {
        let idx = shuffled((0..labels.len()).collect(), seed::derive(&[spec.seed, 0x5e]));
        let k = train_count(labels.len(), spec.train_fraction);
        let (train, test) = idx.split_at(k);
        return (train.to_vec(), test.to_vec());
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (li, label) in Label::ALL.into_iter().enumerate() {
        let group: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        let group = shuffled(group, seed::derive(&[spec.seed, 0x5e, li as u64 + 1]));
        let k = train_count(group.len(), spec.train_fraction);
        train.extend_from_slice(&group[..k]);
        test.extend_from_slice(&group[k..]);
    }
    (train, test)
}

pub fn split(samples: &[Sample], spec: &SplitSpec) -> (Vec<Sample>, Vec<Sample>) {
    let labels: Vec<Label> = samples.iter().map(|s| s.label).collect();
    let (train, test) = split_indices(&labels, spec);
    (
        train.into_iter().map(|i| samples[i].clone()).collect(),
        test.into_iter().map(|i| samples[i].clone()).collect(),
    )
}
