//! Classification metrics: accuracy, precision, recall, F1 and ROC AUC.
//!
//! Binary problems (two classes) report the positive class (label 1).
//! Multiclass problems report macro averages. In both cases `f1` is the
//! harmonic mean of the reported precision and recall.

use serde::{Deserialize, Serialize};

use super::{MlError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    BinaryPositive,
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc_roc: f64,
    pub averaging: Averaging,
    pub per_class: Vec<ClassMetrics>,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<u64>>,
    pub n_test: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Accuracy, precision, recall and F1 derived from a confusion matrix alone.
/// Returns the report with `auc_roc` set to NaN.
pub fn from_confusion(confusion: &[Vec<u64>]) -> MetricsReport {
    let k = confusion.len();
    let n: u64 = confusion.iter().flatten().sum();
    let correct: u64 = (0..k).map(|c| confusion[c][c]).sum();
    let mut flags = Vec::new();
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let tp = confusion[c][c];
        let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
        let actual: u64 = confusion[c].iter().sum();
        let precision = ratio(tp, predicted).unwrap_or_else(|| {
            flags.push(format!("precision_undefined:{c}"));
            0.0
        });
        let recall = ratio(tp, actual).unwrap_or_else(|| {
            flags.push(format!("recall_undefined:{c}"));
            0.0
        });
        per_class.push(ClassMetrics {
            class: c,
            precision,
            recall,
            f1: harmonic(precision, recall),
            support: actual,
        });
    }
    let (averaging, precision, recall) = if k == 2 {
        (Averaging::BinaryPositive, per_class[1].precision, per_class[1].recall)
    } else {
        let kf = k.max(1) as f64;
        (
            Averaging::Macro,
            per_class.iter().map(|m| m.precision).sum::<f64>() / kf,
            per_class.iter().map(|m| m.recall).sum::<f64>() / kf,
        )
    };
    MetricsReport {
        accuracy: ratio(correct, n).unwrap_or(0.0),
        precision,
        recall,
        f1: harmonic(precision, recall),
        auc_roc: f64::NAN,
        averaging,
        per_class,
        confusion: confusion.to_vec(),
        n_test: n,
        flags,
    }
}

/// Normalized Mann-Whitney U: the probability that a random positive scores
/// above a random negative, ties counting one half. `None` when either class
/// is absent.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average ranks (1-based) over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += avg_rank * order[i..=j].iter().filter(|&&o| positive[o]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Full metric suite. `scores[i]` holds per-class scores for sample `i`.
pub fn compute_metrics(
    y_true: &[usize],
    y_pred: &[usize],
    scores: &[Vec<f64>],
    num_classes: usize,
) -> Result<MetricsReport> {
    if y_true.len() != y_pred.len() {
        return Err(MlError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.len() != scores.len() {
        return Err(MlError::LengthMismatch(y_true.len(), scores.len()));
    }
    if y_true.is_empty() {
        return Err(MlError::TooFewSamples { needed: 1, got: 0 });
    }
    if num_classes < 2 {
        return Err(MlError::InvalidConfig("metrics need at least two classes".into()));
    }
    let out_of_range = y_true.iter().chain(y_pred).any(|&y| y >= num_classes);
    if out_of_range || scores.iter().any(|s| s.len() != num_classes) {
        return Err(MlError::DimensionMismatch {
            expected: num_classes,
            actual: scores.iter().map(Vec::len).max().unwrap_or(0),
        });
    }
    let mut confusion = vec![vec![0u64; num_classes]; num_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        confusion[t][p] += 1;
    }
    let mut report = from_confusion(&confusion);

    let class_auc = |c: usize| {
        let s: Vec<f64> = scores.iter().map(|row| row[c]).collect();
        let pos: Vec<bool> = y_true.iter().map(|&y| y == c).collect();
        binary_auc(&s, &pos)
    };
    let auc = if num_classes == 2 {
        class_auc(1)
    } else {
        let aucs: Vec<f64> = (0..num_classes).filter_map(class_auc).collect();
        (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64)
    };
    report.auc_roc = auc.unwrap_or_else(|| {
        report.flags.push("auc_undefined".into());
        0.5
    });
    Ok(report)
}
