//! CART classification tree with Gini impurity and axis-aligned splits.

use serde::{Deserialize, Serialize};

use super::{MlError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        counts: Vec<usize>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub num_classes: usize,
    pub feature_width: usize,
    /// Node 0 is the root.
    pub nodes: Vec<TreeNode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreePrediction {
    pub label: usize,
    /// Majority share of the leaf the sample lands in.
    pub purity: f64,
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

struct Builder<'a> {
    xs: &'a [Vec<f64>],
    ys: &'a [usize],
    num_classes: usize,
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<TreeNode>,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for &i in idx {
            c[self.ys[i]] += 1;
        }
        c
    }

    /// Best (feature, threshold) by weighted child Gini. Iterates features and
    /// thresholds in ascending order and only replaces on strict improvement,
    /// so ties go to the lowest feature, then the lowest threshold.
    fn best_split(&self, idx: &[usize]) -> Option<(usize, f64)> {
        let width = self.xs.first().map_or(0, Vec::len);
        let n = idx.len();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted: Vec<(f64, usize)> = Vec::with_capacity(n);
        for f in 0..width {
            sorted.clear();
            sorted.extend(idx.iter().map(|&i| (self.xs[i][f], self.ys[i])));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = vec![0usize; self.num_classes];
            let mut right = self.counts(idx);
            for k in 0..n - 1 {
                left[sorted[k].1] += 1;
                right[sorted[k].1] -= 1;
                let (lo, hi) = (sorted[k].0, sorted[k + 1].0);
                if lo == hi {
                    continue;
                }
                let (nl, nr) = (k + 1, n - k - 1);
                if nl < self.min_leaf || nr < self.min_leaf {
                    continue;
                }
                let impurity = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / n as f64;
                if best.is_none_or(|(b, _, _)| impurity < b) {
                    best = Some((impurity, f, lo + (hi - lo) / 2.0));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&idx);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { counts });
        if pure || depth >= self.max_depth || idx.len() < 2 * self.min_leaf {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(&idx) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| self.xs[i][feature] <= threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

/// Greedy CART. Deterministic: no randomness is involved, ties are broken by
/// feature index then threshold.
pub fn cart_train(
    xs: &[Vec<f64>],
    ys: &[usize],
    num_classes: usize,
    max_depth: usize,
    min_leaf: usize,
) -> Result<DecisionTree> {
    if xs.is_empty() {
        return Err(MlError::TooFewSamples { needed: 1, got: 0 });
    }
    if xs.len() != ys.len() {
        return Err(MlError::LengthMismatch(xs.len(), ys.len()));
    }
    if let Some(&y) = ys.iter().find(|&&y| y >= num_classes) {
        return Err(MlError::DimensionMismatch {
            expected: num_classes,
            actual: y + 1,
        });
    }
    let mut b = Builder {
        xs,
        ys,
        num_classes,
        max_depth,
        min_leaf: min_leaf.max(1),
        nodes: Vec::new(),
    };
    b.grow((0..xs.len()).collect(), 0);
    Ok(DecisionTree {
        num_classes,
        feature_width: xs[0].len(),
        nodes: b.nodes,
    })
}

impl DecisionTree {
    fn leaf(&self, x: &[f64]) -> &[usize] {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                TreeNode::Leaf { counts } => return counts,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> TreePrediction {
        let counts = self.leaf(x);
        let total: usize = counts.iter().sum();
        let label = majority(counts);
        TreePrediction {
            label,
            purity: if total == 0 { 0.0 } else { counts[label] as f64 / total as f64 },
        }
    }

    /// Leaf class shares, used as scores for AUC.
    pub fn class_shares(&self, x: &[f64]) -> Vec<f64> {
        let counts = self.leaf(x);
        let total = counts.iter().sum::<usize>().max(1) as f64;
        counts.iter().map(|&c| c as f64 / total).collect()
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &DecisionTree, id: usize) -> usize {
            match &t.nodes[id] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
            }
        }
        walk(self, 0)
    }
}

/// Outcome of a majority vote across trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub label: usize,
    /// Fraction of trees voting for each class.
    pub shares: Vec<f64>,
}

/// Majority vote over `trees`. Ties go to the class with the highest summed
/// leaf purity among its voters, then to the lexicographically smallest name
/// in `label_names`.
pub fn tree_vote(trees: &[DecisionTree], x: &[f64], label_names: &[&str]) -> Result<Vote> {
    let first = trees.first().ok_or(MlError::TooFewSamples { needed: 1, got: 0 })?;
    let k = first.num_classes;
    if label_names.len() != k || trees.iter().any(|t| t.num_classes != k) {
        return Err(MlError::DimensionMismatch {
            expected: k,
            actual: label_names.len(),
        });
    }
    let mut votes = vec![0usize; k];
    let mut purity = vec![0.0; k];
    for t in trees {
        if t.feature_width != x.len() {
            return Err(MlError::DimensionMismatch {
                expected: t.feature_width,
                actual: x.len(),
            });
        }
        let p = t.predict(x);
        votes[p.label] += 1;
        purity[p.label] += p.purity;
    }
    let mut best = 0;
    for c in 1..k {
        let better = (votes[c], purity[c]) > (votes[best], purity[best])
            || (votes[c] == votes[best] && purity[c] == purity[best] && label_names[c] < label_names[best]);
        if better {
            best = c;
        }
    }
    let n = trees.len() as f64;
    Ok(Vote {
        label: best,
        shares: votes.iter().map(|&v| v as f64 / n).collect(),
    })
}
