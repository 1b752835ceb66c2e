//! Preprocessing, model and metric kernels shared by data nodes and the
//! coordinator. Everything here is a pure function or takes an explicit RNG.

pub mod cart;
pub mod chi2;
pub mod encode;
pub mod grid;
pub mod linear;
pub mod metrics;
pub mod resample;
pub mod split;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cart::{tree_vote, DecisionTree};
pub use chi2::{chi_squared_imbalance, ChiSquaredOutcome};
pub use encode::FeatureLayout;
pub use grid::{grid_search, GridSearchResult};
pub use linear::ParameterVector;
pub use metrics::{compute_metrics, MetricsReport};
pub use resample::{adasyn, smote, BalanceConfig, BalanceMethod};
pub use split::{train_test_split, Split};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MlError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("value {value:?} is not in the vocabulary of {attribute}")]
    OutOfVocabulary { attribute: String, value: String },
    #[error("attribute {0} is missing or has the wrong type")]
    BadCell(String),
    #[error("unknown feature attribute {0}")]
    UnknownFeature(String),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

pub type Result<T, E = MlError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Multinomial logistic regression (softmax cross-entropy).
    Logistic,
    /// One-vs-rest linear SVM with squared hinge loss.
    LinearSvmHinge,
    DecisionTree,
}

impl ModelKind {
    pub fn is_linear(self) -> bool {
        !matches!(self, ModelKind::DecisionTree)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum BatchMode {
    Full,
    Minibatch { size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch: BatchMode,
    /// L2 penalty on weights; biases are never penalized.
    pub l2: f64,
    pub seed: u64,
    /// Federated rounds, used by the coordinator.
    pub rounds: usize,
    /// Neighbors for SMOTE/ADASYN.
    pub neighbors: usize,
    /// ADASYN balance level, in (0, 1].
    pub adasyn_beta: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Logistic,
            learning_rate: 0.5,
            local_epochs: 1,
            batch: BatchMode::Minibatch { size: 64 },
            l2: 1e-4,
            seed: 0,
            rounds: 200,
            neighbors: 5,
            adasyn_beta: 1.0,
            max_depth: 6,
            min_leaf: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MlError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2 must be >= 0");
        }
        if self.rounds < 1 {
            return bad("rounds must be >= 1");
        }
        if self.neighbors < 1 {
            return bad("neighbors must be >= 1");
        }
        if !(self.adasyn_beta > 0.0 && self.adasyn_beta <= 1.0) {
            return bad("adasyn_beta must be in (0, 1]");
        }
        if let BatchMode::Minibatch { size: 0 } = self.batch {
            return bad("minibatch size must be >= 1");
        }
        if self.min_leaf < 1 {
            return bad("min_leaf must be >= 1");
        }
        Ok(())
    }
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Squared Euclidean distance.
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` nearest rows to `query` among `candidates`, excluding
/// `skip`. Ties resolve to the lower index.
pub fn nearest(rows: &[Vec<f64>], candidates: &[usize], query: &[f64], skip: Option<usize>, k: usize) -> Vec<usize> {
    let mut dists: Vec<(f64, usize)> = candidates
        .iter()
        .filter(|&&i| Some(i) != skip)
        .map(|&i| (sq_dist(&rows[i], query), i))
        .collect();
    dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    dists.into_iter().take(k).map(|(_, i)| i).collect()
}
