//! Linear classifiers over a flat parameter vector.
//!
//! Layout: for each class `c`, `feature_width` weights followed by one bias,
//! so the vector has `num_classes * (feature_width + 1)` entries. A flat
//! layout is what FedAvg averages.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BatchMode, MlError, ModelKind, Result, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub kind: ModelKind,
    pub num_classes: usize,
    pub feature_width: usize,
    pub values: Vec<f64>,
}

impl ParameterVector {
    pub fn zeros(kind: ModelKind, num_classes: usize, feature_width: usize) -> Self {
        Self {
            kind,
            num_classes,
            feature_width,
            values: vec![0.0; num_classes * (feature_width + 1)],
        }
    }

    pub fn expected_len(num_classes: usize, feature_width: usize) -> usize {
        num_classes * (feature_width + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let expected = Self::expected_len(self.num_classes, self.feature_width);
        if self.values.len() != expected {
            return Err(MlError::DimensionMismatch {
                expected,
                actual: self.values.len(),
            });
        }
        if !self.values.iter().all(|v| v.is_finite()) {
            return Err(MlError::NonFinite("parameters"));
        }
        Ok(())
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        Self {
            values,
            ..self.clone()
        }
    }

    fn stride(&self) -> usize {
        self.feature_width + 1
    }

    pub fn is_bias(&self, index: usize) -> bool {
        index % self.stride() == self.feature_width
    }

    /// Raw decision scores `w_c . x + b_c`.
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.values
            .chunks(self.stride())
            .map(|w| {
                let (weights, bias) = w.split_at(self.feature_width);
                weights.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias[0]
            })
            .collect()
    }

    /// Class probabilities. Softmax of the scores for both model kinds; for the
    /// hinge model this is a monotone calibration of its margins.
    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.scores(x))
    }

    /// Highest-scoring class, ties to the lowest index.
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.scores(x))
    }

    fn check_batch(&self, xs: &[Vec<f64>], ys: &[usize]) -> Result<()> {
        if xs.len() != ys.len() {
            return Err(MlError::LengthMismatch(xs.len(), ys.len()));
        }
        let expected = Self::expected_len(self.num_classes, self.feature_width);
        if self.values.len() != expected {
            return Err(MlError::DimensionMismatch {
                expected,
                actual: self.values.len(),
            });
        }
        if let Some(x) = xs.iter().find(|x| x.len() != self.feature_width) {
            return Err(MlError::DimensionMismatch {
                expected: self.feature_width,
                actual: x.len(),
            });
        }
        if let Some(&y) = ys.iter().find(|&&y| y >= self.num_classes) {
            return Err(MlError::DimensionMismatch {
                expected: self.num_classes,
                actual: y + 1,
            });
        }
        Ok(())
    }
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

/// Mean data loss over the batch plus `l2 / 2 * ||W||^2` (biases excluded).
pub fn loss(params: &ParameterVector, xs: &[Vec<f64>], ys: &[usize], l2: f64) -> Result<f64> {
    params.check_batch(xs, ys)?;
    let mut data = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let s = params.scores(x);
        data += match params.kind {
            ModelKind::Logistic => log_sum_exp(&s) - s[y],
            ModelKind::LinearSvmHinge => s
                .iter()
                .enumerate()
                .map(|(c, &sc)| {
                    let t = if c == y { 1.0 } else { -1.0 };
                    (1.0 - t * sc).max(0.0).powi(2)
                })
                .sum(),
            ModelKind::DecisionTree => return Err(MlError::InvalidConfig("decision trees have no linear loss".into())),
        };
    }
    let n = xs.len().max(1) as f64;
    let penalty: f64 = params
        .values
        .iter()
        .enumerate()
        .filter(|(i, _)| !params.is_bias(*i))
        .map(|(_, w)| w * w)
        .sum();
    Ok(data / n + 0.5 * l2 * penalty)
}

/// Analytic gradient of [`loss`].
pub fn gradient(params: &ParameterVector, xs: &[Vec<f64>], ys: &[usize], l2: f64) -> Result<Vec<f64>> {
    params.check_batch(xs, ys)?;
    let stride = params.feature_width + 1;
    let mut grad = vec![0.0; params.values.len()];
    // per-class coefficient multiplying [x, 1]
    let mut coef = vec![0.0; params.num_classes];
    for (x, &y) in xs.iter().zip(ys) {
        let s = params.scores(x);
        match params.kind {
            ModelKind::Logistic => {
                let p = softmax(&s);
                for c in 0..params.num_classes {
                    coef[c] = p[c] - if c == y { 1.0 } else { 0.0 };
                }
            }
            ModelKind::LinearSvmHinge => {
                for c in 0..params.num_classes {
                    let t = if c == y { 1.0 } else { -1.0 };
                    let slack = (1.0 - t * s[c]).max(0.0);
                    coef[c] = -2.0 * t * slack;
                }
            }
            ModelKind::DecisionTree => {
                return Err(MlError::InvalidConfig("decision trees have no gradient".into()))
            }
        }
        for (c, &k) in coef.iter().enumerate() {
            if k == 0.0 {
                continue;
            }
            let g = &mut grad[c * stride..(c + 1) * stride];
            for (gj, xj) in g.iter_mut().zip(x) {
                *gj += k * xj;
            }
            g[params.feature_width] += k;
        }
    }
    let n = xs.len().max(1) as f64;
    for (i, g) in grad.iter_mut().enumerate() {
        *g /= n;
        if !params.is_bias(i) {
            *g += l2 * params.values[i];
        }
    }
    if !grad.iter().all(|g| g.is_finite()) {
        return Err(MlError::NonFinite("gradient"));
    }
    Ok(grad)
}

/// One gradient step: `params - lr * (grad_batch + l2 * weights)`.
pub fn sgd_step(
    params: &ParameterVector,
    xs: &[Vec<f64>],
    ys: &[usize],
    learning_rate: f64,
    l2: f64,
) -> Result<ParameterVector> {
    let grad = gradient(params, xs, ys, l2)?;
    let values: Vec<f64> = params
        .values
        .iter()
        .zip(&grad)
        .map(|(w, g)| w - learning_rate * g)
        .collect();
    if !values.iter().all(|v| v.is_finite()) {
        return Err(MlError::NonFinite("parameters"));
    }
    Ok(params.with_values(values))
}

/// Runs `config.local_epochs` passes over `(xs, ys)` starting from `params`.
pub fn train_epochs<R: Rng>(
    params: &ParameterVector,
    xs: &[Vec<f64>],
    ys: &[usize],
    config: &TrainConfig,
    rng: &mut R,
) -> Result<ParameterVector> {
    params.check_batch(xs, ys)?;
    let mut current = params.clone();
    if xs.is_empty() {
        return Ok(current);
    }
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut bx = Vec::new();
    let mut by = Vec::new();
    for _ in 0..config.local_epochs {
        match config.batch {
            BatchMode::Full => {
                current = sgd_step(&current, xs, ys, config.learning_rate, config.l2)?;
            }
            BatchMode::Minibatch { size } => {
                order.shuffle(rng);
                for chunk in order.chunks(size.max(1)) {
                    bx.clear();
                    by.clear();
                    bx.extend(chunk.iter().map(|&i| xs[i].clone()));
                    by.extend(chunk.iter().map(|&i| ys[i]));
                    current = sgd_step(&current, &bx, &by, config.learning_rate, config.l2)?;
                }
            }
        }
    }
    Ok(current)
}
