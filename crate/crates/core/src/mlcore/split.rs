//! Seeded train/test splits and k-fold assignment.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{rng_from_seed, MlError, Result};

pub const MIN_FRACTION: f64 = 0.75;
pub const MAX_FRACTION: f64 = 0.80;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..n` with `seed` and takes the first `round(f * n)` indices as
/// the training split, clamped so that both sides are non-empty.
pub fn train_test_split(n: usize, fraction: f64, seed: u64) -> Result<Split> {
    if n < 2 {
        return Err(MlError::TooFewSamples { needed: 2, got: n });
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(MlError::InvalidConfig(format!("split fraction {fraction} not in (0, 1)")));
    }
    if !(MIN_FRACTION..=MAX_FRACTION).contains(&fraction) {
        log::warn!("split fraction {fraction} outside the recommended 0.75..=0.80");
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let n_train = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let test = idx.split_off(n_train);
    Ok(Split { train: idx, test })
}

/// Assigns sample indices to `k` folds. Stratified when every class has at
/// least `k` members; the returned flag is `false` when it had to fall back.
pub fn k_folds(labels: &[usize], k: usize, seed: u64) -> (Vec<Vec<usize>>, bool) {
    let mut rng = rng_from_seed(seed);
    let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let stratified = by_class.iter().all(|c| c.is_empty() || c.len() >= k);
    let mut folds = vec![Vec::new(); k];
    if stratified {
        let mut next = 0;
        for members in &mut by_class {
            members.shuffle(&mut rng);
            for &i in members.iter() {
                folds[next % k].push(i);
                next += 1;
            }
        }
    } else {
        let mut all: Vec<usize> = (0..labels.len()).collect();
        all.shuffle(&mut rng);
        for (j, i) in all.into_iter().enumerate() {
            folds[j % k].push(i);
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    (folds, stratified)
}
