//! The coordinator: federated queries end to end and the FedAvg training loop.
//!
//! Requests go to every participating node concurrently, one thread per node,
//! and responses are collected with a deadline. Whatever order they arrive
//! in, results are sorted by node id before anything is merged, so merged
//! payloads and aggregated parameters do not depend on timing.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::mpsc;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::{decode_cell, CatalogError, CatalogStore};
use crate::datanode::{
    CacheRequest, CacheSettings, CacheSummary, DataNode, EvalModel, EvaluateRequest, NodeError, NodeMetadata, RoundRequest,
    RoundResponse, SubQueryResult, TreeRequest,
};
use crate::mlcore::cart::{tree_vote, DecisionTree};
use crate::mlcore::linear::{softmax, ParameterVector};
use crate::mlcore::metrics::{from_confusion, MetricsReport};
use crate::mlcore::{FeatureLayout, MlError, ModelKind, TrainConfig};
use crate::queryir::{parse, plan, Aggregation, LocalSubQuery, Pattern, QueryError};
use crate::value::{Comparator, Row, Value};

#[derive(Debug, Error)]
pub enum FederationError {
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Ml(#[from] MlError),
    #[error("invalid fedavg input: {0}")]
    FedAvg(String),
    #[error("federation unavailable: every node failed ({})", .0.iter().map(|(n, e)| format!("{n}: {e}")).collect::<Vec<_>>().join("; "))]
    Unavailable(Vec<(String, String)>),
    #[error("no trained model for {0}")]
    NoModel(Pattern),
    #[error("a training session for {0} is already running")]
    Busy(Pattern),
    #[error("pattern {0} is not a prediction pattern")]
    NotPredictive(Pattern),
    #[error("{0}")]
    BadInput(String),
    #[error("need {needed} participating node(s), {got} available")]
    TooFewParticipants { needed: usize, got: usize },
    #[error("training aborted in round {round}: {reason}")]
    Aborted {
        round: usize,
        reason: String,
        partial: Box<GlobalModel>,
    },
    #[error("nodes disagree on the preprocessing fingerprint")]
    FingerprintMismatch,
    #[error("count partials disagree on grouping: {0}")]
    MismatchedGrouping(String),
}

impl FederationError {
    pub fn code(&self) -> &'static str {
        match self {
            FederationError::Query(QueryError::Parse { .. }) => "parse_error",
            FederationError::Query(QueryError::Unanswerable(_)) => "unanswerable",
            FederationError::Catalog(_) => "catalog",
            FederationError::Ml(_) => "ml",
            FederationError::FedAvg(_) => "fedavg",
            FederationError::Unavailable(_) => "federation_unavailable",
            FederationError::NoModel(_) => "no_model",
            FederationError::Busy(_) => "busy",
            FederationError::NotPredictive(_) | FederationError::BadInput(_) => "bad_request",
            FederationError::TooFewParticipants { .. } => "too_few_participants",
            FederationError::Aborted { .. } => "training_aborted",
            FederationError::FingerprintMismatch => "fingerprint_mismatch",
            FederationError::MismatchedGrouping(_) => "mismatched_grouping",
        }
    }

    /// True for errors caused by the request rather than the federation.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            FederationError::Query(_)
                | FederationError::NotPredictive(_)
                | FederationError::BadInput(_)
                | FederationError::NoModel(_)
        )
    }
}

// --- FedAvg ---------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// Plain elementwise mean over participating nodes.
    #[default]
    Unweighted,
    /// Mean weighted by each node's training-split size.
    SampleWeighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientUpdate {
    pub node_id: String,
    pub params: Vec<f64>,
    pub n_train: usize,
}

/// Averages client parameter vectors. Inputs are processed in node-id order
/// as a running mean `m += (w_k / S_k)(x_k - m)`, so identical inputs come
/// back bit for bit and the result does not depend on input order.
pub fn fedavg(updates: &[ClientUpdate], mode: AggregationMode) -> Result<Vec<f64>, FederationError> {
    let first = updates.first().ok_or_else(|| FederationError::FedAvg("no updates".into()))?;
    let dim = first.params.len();
    for u in updates {
        if u.params.len() != dim {
            return Err(FederationError::FedAvg(format!(
                "dimension mismatch: {} has {}, expected {dim}",
                u.node_id,
                u.params.len()
            )));
        }
        if !u.params.iter().all(|v| v.is_finite()) {
            return Err(FederationError::FedAvg(format!("non-finite parameters from {}", u.node_id)));
        }
    }
    let mut order: Vec<&ClientUpdate> = updates.iter().collect();
    order.sort_by(|a, b| a.node_id.cmp(&b.node_id));
    let weight = |u: &ClientUpdate| match mode {
        AggregationMode::Unweighted => 1.0,
        AggregationMode::SampleWeighted => u.n_train as f64,
    };
    if mode == AggregationMode::SampleWeighted && order.iter().all(|u| u.n_train == 0) {
        return Err(FederationError::FedAvg("all sample counts are zero".into()));
    }

    let mut mean = vec![0.0; dim];
    let mut total = 0.0;
    for u in order {
        let w = weight(u);
        if w == 0.0 {
            continue;
        }
        total += w;
        if total == w {
            mean.copy_from_slice(&u.params);
            continue;
        }
        let step = w / total;
        for (m, x) in mean.iter_mut().zip(&u.params) {
            *m += step * (x - *m);
        }
    }
    Ok(mean)
}

// --- count trees ----------------------------------------------------------

/// One node's TREE_INSIGHT counts in global vocabulary. Keys are the
/// `group_by` values followed by the target value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountPartial {
    pub group_by: Vec<String>,
    pub target: String,
    pub counts: Vec<(Vec<String>, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum CountTree {
    Branch {
        attribute: String,
        children: BTreeMap<String, CountTree>,
    },
    Leaf {
        counts: BTreeMap<String, u64>,
        most_likely: String,
        share: f64,
    },
}

impl CountTree {
    /// Leaf counts at `path`, if that path exists.
    pub fn leaf(&self, path: &[&str]) -> Option<&BTreeMap<String, u64>> {
        match (self, path.split_first()) {
            (CountTree::Leaf { counts, .. }, None) => Some(counts),
            (CountTree::Branch { children, .. }, Some((head, rest))) => children.get(*head)?.leaf(rest),
            _ => None,
        }
    }

    pub fn total(&self) -> u64 {
        match self {
            CountTree::Leaf { counts, .. } => counts.values().sum(),
            CountTree::Branch { children, .. } => children.values().map(CountTree::total).sum(),
        }
    }
}

fn leaf_from(counts: BTreeMap<String, u64>) -> CountTree {
    let total: u64 = counts.values().sum();
    // ascending key order with strict improvement: ties go to the smallest name
    let mut best: Option<(&String, u64)> = None;
    for (k, &v) in &counts {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    let (most_likely, top) = best.map_or((String::new(), 0), |(k, v)| (k.clone(), v));
    CountTree::Leaf {
        share: if total == 0 { 0.0 } else { top as f64 / total as f64 },
        most_likely,
        counts,
    }
}

fn build_tree(group_by: &[String], entries: &[(Vec<String>, u64)], depth: usize) -> CountTree {
    if depth == group_by.len() {
        let mut counts = BTreeMap::new();
        for (key, c) in entries {
            *counts.entry(key[depth].clone()).or_insert(0) += c;
        }
        return leaf_from(counts);
    }
    let mut by_value: BTreeMap<&str, Vec<(Vec<String>, u64)>> = BTreeMap::new();
    for e in entries {
        by_value.entry(e.0[depth].as_str()).or_default().push(e.clone());
    }
    CountTree::Branch {
        attribute: group_by[depth].clone(),
        children: by_value
            .into_iter()
            .map(|(v, es)| (v.to_string(), build_tree(group_by, &es, depth + 1)))
            .collect(),
    }
}

/// Key-wise sum of count partials, nested by `group_by` order.
pub fn merge_count_trees(partials: &[CountPartial]) -> Result<CountTree, FederationError> {
    let first = partials
        .first()
        .ok_or_else(|| FederationError::MismatchedGrouping("no partials".into()))?;
    let mut summed: BTreeMap<Vec<String>, u64> = BTreeMap::new();
    for p in partials {
        if p.group_by != first.group_by || p.target != first.target {
            return Err(FederationError::MismatchedGrouping(format!(
                "{:?}/{} vs {:?}/{}",
                first.group_by, first.target, p.group_by, p.target
            )));
        }
        for (key, c) in &p.counts {
            if key.len() != first.group_by.len() + 1 {
                return Err(FederationError::MismatchedGrouping(format!("key {key:?} has wrong arity")));
            }
            *summed.entry(key.clone()).or_insert(0) += c;
        }
    }
    let entries: Vec<(Vec<String>, u64)> = summed.into_iter().collect();
    Ok(build_tree(&first.group_by, &entries, 0))
}

// --- node transport -------------------------------------------------------

/// The node API as seen by the coordinator. Implemented in process by
/// [`DataNode`] and over HTTP by the command-line crate.
pub trait NodeClient: Send + Sync {
    fn node_id(&self) -> &str;
    fn metadata(&self) -> Result<NodeMetadata, NodeError>;
    fn subquery(&self, sq: &LocalSubQuery) -> Result<SubQueryResult, NodeError>;
    fn build_cache(&self, req: &CacheRequest) -> Result<CacheSummary, NodeError>;
    fn train_round(&self, req: &RoundRequest) -> Result<RoundResponse, NodeError>;
    fn evaluate(&self, req: &EvaluateRequest) -> Result<MetricsReport, NodeError>;
    fn train_tree(&self, req: &TreeRequest) -> Result<DecisionTree, NodeError>;
    fn metrics(&self, pattern: Pattern) -> Result<MetricsReport, NodeError>;
    fn model_log(&self, pattern: Pattern) -> Result<Vec<crate::datanode::ModelLogEntry>, NodeError>;
}

impl NodeClient for DataNode {
    fn node_id(&self) -> &str {
        DataNode::node_id(self)
    }
    fn metadata(&self) -> Result<NodeMetadata, NodeError> {
        DataNode::metadata(self)
    }
    fn subquery(&self, sq: &LocalSubQuery) -> Result<SubQueryResult, NodeError> {
        self.execute_subquery(sq)
    }
    fn build_cache(&self, req: &CacheRequest) -> Result<CacheSummary, NodeError> {
        DataNode::build_cache(self, req)
    }
    fn train_round(&self, req: &RoundRequest) -> Result<RoundResponse, NodeError> {
        DataNode::train_round(self, req)
    }
    fn evaluate(&self, req: &EvaluateRequest) -> Result<MetricsReport, NodeError> {
        DataNode::evaluate(self, req)
    }
    fn train_tree(&self, req: &TreeRequest) -> Result<DecisionTree, NodeError> {
        DataNode::train_tree(self, req)
    }
    fn metrics(&self, pattern: Pattern) -> Result<MetricsReport, NodeError> {
        self.latest_metrics(pattern)
    }
    fn model_log(&self, pattern: Pattern) -> Result<Vec<crate::datanode::ModelLogEntry>, NodeError> {
        Ok(DataNode::model_log(self, pattern))
    }
}

// --- coordinator types ----------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    /// Rounds used when a training job does not say.
    pub rounds: usize,
    pub mode: AggregationMode,
    /// Per-request deadline, in milliseconds.
    pub round_timeout_ms: u64,
    pub min_participants: usize,
    /// Stop when aggregated accuracy moved less than 1e-4 over 10 rounds.
    pub early_stop: bool,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            rounds: 200,
            mode: AggregationMode::Unweighted,
            round_timeout_ms: 30_000,
            min_participants: 1,
            early_stop: false,
        }
    }
}

#[derive(Default, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingJob {
    pub rounds: Option<usize>,
    pub mode: Option<AggregationMode>,
    pub train_config: TrainConfig,
    pub cache: CacheSettings,
}

/// Test-set metrics averaged over nodes, weighted by each node's `n_test`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc_roc: f64,
    pub n_test: u64,
}

impl AggregatedMetrics {
    pub fn weighted(reports: &[&MetricsReport]) -> Option<Self> {
        let n: u64 = reports.iter().map(|r| r.n_test).sum();
        if n == 0 {
            return None;
        }
        let avg = |f: fn(&MetricsReport) -> f64| {
            reports.iter().map(|r| f(r) * r.n_test as f64).sum::<f64>() / n as f64
        };
        Some(Self {
            accuracy: avg(|r| r.accuracy),
            precision: avg(|r| r.precision),
            recall: avg(|r| r.recall),
            f1: avg(|r| r.f1),
            auc_roc: avg(|r| r.auc_roc),
            n_test: n,
        })
    }
}

/// Metrics of one model over the union of node test splits, from the summed
/// confusion matrices. AUC cannot be pooled without scores, so it is the
/// `n_test`-weighted mean and flagged as such.
pub fn pooled_metrics(reports: &[&MetricsReport]) -> Option<MetricsReport> {
    let k = reports.first()?.confusion.len();
    let mut confusion = vec![vec![0u64; k]; k];
    for r in reports {
        if r.confusion.len() != k {
            return None;
        }
        for (i, row) in r.confusion.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                confusion[i][j] += c;
            }
        }
    }
    let mut pooled = from_confusion(&confusion);
    pooled.auc_roc = AggregatedMetrics::weighted(reports)?.auc_roc;
    pooled.flags.push("auc_weighted_mean".into());
    Some(pooled)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedNode {
    pub node_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub participants: Vec<String>,
    pub n_train: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<SkippedNode>,
    pub metrics: Option<AggregatedMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTree {
    pub node_id: String,
    pub tree: DecisionTree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalModel {
    pub pattern: Pattern,
    pub model: ModelKind,
    pub mode: AggregationMode,
    /// Rounds completed; equals `history.len()`.
    pub round: usize,
    pub labels: Vec<String>,
    pub feature_width: usize,
    pub fingerprint: String,
    /// Linear models only.
    pub params: Option<ParameterVector>,
    /// Decision trees, one per node, combined by vote.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trees: Vec<NodeTree>,
    pub history: Vec<RoundRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded: Vec<SkippedNode>,
    /// Final per-node test metrics.
    pub node_metrics: BTreeMap<String, MetricsReport>,
    /// Primary figure: `n_test`-weighted mean of node metrics.
    pub aggregated: Option<AggregatedMetrics>,
    /// Secondary figure: pooled confusion matrix over all test splits.
    pub pooled: Option<MetricsReport>,
    pub stopped_early: bool,
}

impl GlobalModel {
    /// Class probabilities for an encoded input.
    pub fn distribution(&self, x: &[f64]) -> Result<Vec<f64>, FederationError> {
        if let Some(p) = &self.params {
            return Ok(match p.kind {
                ModelKind::Logistic => p.probabilities(x),
                // hinge scores are not probabilities; softmax gives a ranking-preserving normalization
                _ => softmax(&p.scores(x)),
            });
        }
        let trees: Vec<DecisionTree> = self.trees.iter().map(|t| t.tree.clone()).collect();
        let names: Vec<&str> = self.labels.iter().map(String::as_str).collect();
        Ok(tree_vote(&trees, x, &names)?.shares)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelProbability {
    pub label: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MergedPayload {
    Rows {
        count: usize,
        rows: Vec<Row>,
    },
    CountTree {
        group_by: Vec<String>,
        target: String,
        total: u64,
        tree: CountTree,
    },
    Distribution {
        target: String,
        predicted: String,
        /// Sorted by descending probability, then label.
        distribution: Vec<LabelProbability>,
        model_round: usize,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        missing_features: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodePartial {
    pub node_id: String,
    pub ok: bool,
    /// Rows returned, or groups for count queries.
    pub items: usize,
    pub elapsed_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedResult {
    /// Canonical query text.
    pub query: String,
    pub pattern: Pattern,
    pub aggregation: Aggregation,
    pub participants: Vec<String>,
    pub merged: MergedPayload,
    pub partials: Vec<NodePartial>,
    pub partial: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed_nodes: Vec<String>,
    /// SHA-256 of the serialized merged payload.
    pub digest: String,
    /// Index of the saved-result entry in the catalog.
    pub saved_result: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeHealth {
    pub node_id: String,
    pub ok: bool,
    pub elapsed_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<NodeMetadata>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Outcome of asking one node to (re)build its training cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeCacheStatus {
    pub node_id: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<CacheSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct Reply<T> {
    node_id: String,
    result: Result<T, NodeError>,
    elapsed_ms: u64,
}

/// Releases the per-pattern training slot on drop.
struct SessionGuard<'a> {
    active: &'a Mutex<BTreeSet<Pattern>>,
    pattern: Pattern,
}

impl Drop for SessionGuard<'_> {
    fn drop(&mut self) {
        self.active.lock().unwrap_or_else(|e| e.into_inner()).remove(&self.pattern);
    }
}

pub struct Coordinator {
    catalog: Arc<CatalogStore>,
    clients: BTreeMap<String, Arc<dyn NodeClient>>,
    config: FederationConfig,
    models: RwLock<BTreeMap<Pattern, Arc<GlobalModel>>>,
    training: Mutex<BTreeSet<Pattern>>,
}

impl Coordinator {
    pub fn new(catalog: Arc<CatalogStore>, clients: Vec<Arc<dyn NodeClient>>, config: FederationConfig) -> Self {
        Self {
            catalog,
            clients: clients.into_iter().map(|c| (c.node_id().to_string(), c)).collect(),
            config,
            models: RwLock::default(),
            training: Mutex::default(),
        }
    }

    pub fn catalog(&self) -> &CatalogStore {
        &self.catalog
    }

    pub fn config(&self) -> &FederationConfig {
        &self.config
    }

    pub fn model(&self, pattern: Pattern) -> Option<Arc<GlobalModel>> {
        self.models.read().unwrap_or_else(|e| e.into_inner()).get(&pattern).cloned()
    }

    pub fn models(&self) -> Vec<Arc<GlobalModel>> {
        self.models.read().unwrap_or_else(|e| e.into_inner()).values().cloned().collect()
    }

    pub fn client(&self, node_id: &str) -> Option<Arc<dyn NodeClient>> {
        self.clients.get(node_id).cloned()
    }

    fn timeout(&self) -> Duration {
        Duration::from_millis(self.config.round_timeout_ms.max(1))
    }

    /// Calls every node in `nodes` concurrently and waits at most the round
    /// timeout. Late nodes come back as [`NodeError::Timeout`]. Replies are
    /// returned in node-id order.
    fn dispatch<T, F>(&self, nodes: &[String], call: F) -> Vec<Reply<T>>
    where
        T: Send + 'static,
        F: Fn(&dyn NodeClient) -> Result<T, NodeError> + Send + Sync + 'static,
    {
        let call = Arc::new(call);
        let (tx, rx) = mpsc::channel();
        let mut pending: BTreeSet<String> = BTreeSet::new();
        let mut replies = Vec::new();
        for id in nodes {
            let Some(client) = self.clients.get(id).cloned() else {
                replies.push(Reply {
                    node_id: id.clone(),
                    result: Err(NodeError::Transport("no client registered".into())),
                    elapsed_ms: 0,
                });
                continue;
            };
            pending.insert(id.clone());
            let (tx, call, id) = (tx.clone(), call.clone(), id.clone());
            std::thread::spawn(move || {
                let start = Instant::now();
                let result = call(client.as_ref());
                let elapsed_ms = start.elapsed().as_millis() as u64;
                // the receiver is gone if we already timed out
                let _ = tx.send(Reply {
                    node_id: id,
                    result,
                    elapsed_ms,
                });
            });
        }
        drop(tx);
        let deadline = Instant::now() + self.timeout();
        while !pending.is_empty() {
            let left = deadline.saturating_duration_since(Instant::now());
            match rx.recv_timeout(left) {
                Ok(reply) => {
                    pending.remove(&reply.node_id);
                    replies.push(reply);
                }
                Err(_) => break,
            }
        }
        for id in pending {
            log::warn!("node {id} timed out");
            replies.push(Reply {
                node_id: id,
                result: Err(NodeError::Timeout),
                elapsed_ms: self.config.round_timeout_ms,
            });
        }
        replies.sort_by(|a, b| a.node_id.cmp(&b.node_id));
        replies
    }

    pub fn node_health(&self) -> Vec<NodeHealth> {
        let ids: Vec<String> = self.catalog.mappings().keys().cloned().collect();
        self.dispatch(&ids, |c| c.metadata())
            .into_iter()
            .map(|r| match r.result {
                Ok(m) => NodeHealth {
                    node_id: r.node_id,
                    ok: true,
                    elapsed_ms: r.elapsed_ms,
                    metadata: Some(m),
                    error: None,
                },
                Err(e) => NodeHealth {
                    node_id: r.node_id,
                    ok: false,
                    elapsed_ms: r.elapsed_ms,
                    metadata: None,
                    error: Some(e.to_string()),
                },
            })
            .collect()
    }

    /// Asks every node covering `pattern` to build its training cache.
    pub fn build_caches(&self, pattern: Pattern, settings: &CacheSettings) -> Result<Vec<NodeCacheStatus>, FederationError> {
        let nodes = self.training_participants(pattern)?;
        let request = Arc::new(CacheRequest {
            pattern,
            schema: self.catalog.schema().clone(),
            settings: settings.clone(),
        });
        Ok(self
            .dispatch(&nodes, move |c| c.build_cache(&request))
            .into_iter()
            .map(|r| match r.result {
                Ok(s) => NodeCacheStatus {
                    node_id: r.node_id,
                    ok: true,
                    summary: Some(s),
                    error: None,
                },
                Err(e) => NodeCacheStatus {
                    node_id: r.node_id,
                    ok: false,
                    summary: None,
                    error: Some(e.to_string()),
                },
            })
            .collect())
    }

    // --- queries ----------------------------------------------------------

    /// Parse, plan, dispatch, merge, record.
    pub fn run_federated_query(&self, text: &str) -> Result<AggregatedResult, FederationError> {
        let schema = self.catalog.schema();
        let query = parse(text, schema)?;
        let plan = plan(&query, &self.catalog)?;
        let mut partials = Vec::new();
        let mut failed = Vec::new();

        let merged = match plan.aggregation {
            Aggregation::ModelInference => self.infer(&query.pattern, &query.filter)?,
            _ => {
                let ids: Vec<String> = plan.subqueries.iter().map(|(id, _)| id.clone()).collect();
                let subqueries: BTreeMap<String, LocalSubQuery> = plan.subqueries.iter().cloned().collect();
                let subqueries = Arc::new(subqueries);
                let replies = self.dispatch(&ids, move |c| {
                    let sq = subqueries
                        .get(c.node_id())
                        .ok_or_else(|| NodeError::Transport("no sub-query for node".into()))?;
                    c.subquery(sq)
                });
                let mut ok = Vec::new();
                for r in replies {
                    let decoded = r.result.and_then(|res| self.decode_partial(&r.node_id, &query, res));
                    match decoded {
                        Ok(d) => {
                            partials.push(NodePartial {
                                node_id: r.node_id.clone(),
                                ok: true,
                                items: d.len(),
                                elapsed_ms: r.elapsed_ms,
                                error: None,
                            });
                            ok.push(d);
                        }
                        Err(e) => {
                            partials.push(NodePartial {
                                node_id: r.node_id.clone(),
                                ok: false,
                                items: 0,
                                elapsed_ms: r.elapsed_ms,
                                error: Some(e.to_string()),
                            });
                            failed.push((r.node_id, e.to_string()));
                        }
                    }
                }
                if ok.is_empty() {
                    return Err(FederationError::Unavailable(failed));
                }
                merge_partials(&query, ok)?
            }
        };

        let digest = hex::encode(Sha256::digest(serde_json::to_vec(&merged).unwrap_or_default()));
        let canonical = query.render();
        let saved_result = self.catalog.record_result(&canonical, &digest)?;
        Ok(AggregatedResult {
            query: canonical,
            pattern: query.pattern,
            aggregation: plan.aggregation,
            participants: plan.participants,
            merged,
            partials,
            partial: !failed.is_empty(),
            failed_nodes: failed.into_iter().map(|(n, _)| n).collect(),
            digest,
            saved_result,
        })
    }

    fn decode_partial(
        &self,
        node_id: &str,
        query: &crate::queryir::AnalyticalQuery,
        result: SubQueryResult,
    ) -> Result<Decoded, NodeError> {
        let mapping = self
            .catalog
            .mapping(node_id)
            .ok_or_else(|| NodeError::Transport("node not in catalog".into()))?;
        let schema = self.catalog.schema();
        match result {
            SubQueryResult::Rows { rows } => {
                Ok(Decoded::Rows(crate::catalog::to_global(&rows, mapping, schema)?))
            }
            SubQueryResult::Counts { columns, groups } => {
                let mut attrs: Vec<String> = query.group_by.clone();
                attrs.push(query.target.clone().unwrap_or_default());
                if columns.len() != attrs.len() {
                    return Err(NodeError::Remote {
                        code: "bad_reply".into(),
                        message: "count columns do not match the request".into(),
                    });
                }
                let mut counts = Vec::with_capacity(groups.len());
                for g in groups {
                    let mut key = Vec::with_capacity(attrs.len());
                    for ((attr, column), cell) in attrs.iter().zip(&columns).zip(&g.key) {
                        match decode_cell(mapping, schema, attr, column, cell)? {
                            Value::Text(s) => key.push(s),
                            other => key.push(other.to_string()),
                        }
                    }
                    counts.push((key, g.count));
                }
                Ok(Decoded::Counts(CountPartial {
                    group_by: query.group_by.clone(),
                    target: query.target.clone().unwrap_or_default(),
                    counts,
                }))
            }
        }
    }

    fn infer(&self, pattern: &Pattern, filter: &[crate::value::Predicate]) -> Result<MergedPayload, FederationError> {
        let model = self.model(*pattern).ok_or(FederationError::NoModel(*pattern))?;
        let schema = self.catalog.schema();
        let layout = FeatureLayout::new(schema, pattern.feature_attributes())?;
        let mut profile = Row::new();
        for p in filter {
            if p.op != Comparator::Eq {
                return Err(FederationError::BadInput(format!("{} must use =", p.attribute)));
            }
            profile.insert(p.attribute.clone(), p.value.clone());
        }
        let (x, missing_features) = layout.encode_partial(&profile)?;
        let probs = model.distribution(&x)?;
        let mut distribution: Vec<LabelProbability> = model
            .labels
            .iter()
            .zip(probs)
            .map(|(label, probability)| LabelProbability {
                label: label.clone(),
                probability,
            })
            .collect();
        distribution.sort_by(|a, b| b.probability.total_cmp(&a.probability).then_with(|| a.label.cmp(&b.label)));
        Ok(MergedPayload::Distribution {
            target: pattern.target_attribute().unwrap_or_default().to_string(),
            predicted: distribution.first().map(|d| d.label.clone()).unwrap_or_default(),
            distribution,
            model_round: model.round,
            missing_features,
        })
    }

    /// Majority vote of the stored per-node trees on one global-vocabulary row.
    pub fn federated_tree_vote(&self, pattern: Pattern, input: &Row) -> Result<String, FederationError> {
        let model = self.model(pattern).ok_or(FederationError::NoModel(pattern))?;
        if model.trees.is_empty() {
            return Err(FederationError::NoModel(pattern));
        }
        let layout = FeatureLayout::new(self.catalog.schema(), pattern.feature_attributes())?;
        let x = layout.encode(input)?;
        let trees: Vec<DecisionTree> = model.trees.iter().map(|t| t.tree.clone()).collect();
        let names: Vec<&str> = model.labels.iter().map(String::as_str).collect();
        let vote = tree_vote(&trees, &x, &names)?;
        Ok(model.labels[vote.label].clone())
    }

    // --- training ---------------------------------------------------------

    fn begin_session(&self, pattern: Pattern) -> Result<SessionGuard<'_>, FederationError> {
        let mut active = self.training.lock().unwrap_or_else(|e| e.into_inner());
        if !active.insert(pattern) {
            return Err(FederationError::Busy(pattern));
        }
        Ok(SessionGuard {
            active: &self.training,
            pattern,
        })
    }

    /// Nodes mapping the pattern's target and every feature, by node id.
    pub fn training_participants(&self, pattern: Pattern) -> Result<Vec<String>, FederationError> {
        let target = pattern.target_attribute().ok_or(FederationError::NotPredictive(pattern))?;
        Ok(self
            .catalog
            .mappings()
            .values()
            .filter(|m| m.covers(target) && pattern.feature_attributes().iter().all(|f| m.covers(f)))
            .map(|m| m.node_id.clone())
            .collect())
    }

    /// Builds caches everywhere and checks the nodes agree on them.
    fn prepare(
        &self,
        pattern: Pattern,
        settings: &CacheSettings,
    ) -> Result<(Vec<String>, String, Vec<SkippedNode>), FederationError> {
        let candidates = self.training_participants(pattern)?;
        let request = Arc::new(CacheRequest {
            pattern,
            schema: self.catalog.schema().clone(),
            settings: settings.clone(),
        });
        let expected = request.fingerprint();
        let width = FeatureLayout::new(self.catalog.schema(), pattern.feature_attributes())?.width;
        let replies = self.dispatch(&candidates, move |c| c.build_cache(&request));
        let mut ready = Vec::new();
        let mut excluded = Vec::new();
        for r in replies {
            match r.result {
                Ok(s) if s.fingerprint != expected => return Err(FederationError::FingerprintMismatch),
                Ok(s) if s.feature_width != width => {
                    return Err(FederationError::Ml(MlError::DimensionMismatch {
                        expected: width,
                        actual: s.feature_width,
                    }))
                }
                Ok(_) => ready.push(r.node_id),
                Err(e) => excluded.push(SkippedNode {
                    node_id: r.node_id,
                    reason: e.to_string(),
                }),
            }
        }
        let needed = self.config.min_participants.max(1);
        if ready.len() < needed {
            return Err(FederationError::TooFewParticipants {
                needed,
                got: ready.len(),
            });
        }
        Ok((ready, expected, excluded))
    }

    fn evaluate_all(
        &self,
        nodes: &[String],
        pattern: Pattern,
        model: EvalModel,
    ) -> (BTreeMap<String, MetricsReport>, Vec<SkippedNode>) {
        let req = Arc::new(EvaluateRequest { pattern, model });
        let mut reports = BTreeMap::new();
        let mut skipped = Vec::new();
        for r in self.dispatch(nodes, move |c| c.evaluate(&req)) {
            match r.result {
                Ok(m) => {
                    reports.insert(r.node_id, m);
                }
                Err(e) => skipped.push(SkippedNode {
                    node_id: r.node_id,
                    reason: format!("evaluate: {e}"),
                }),
            }
        }
        (reports, skipped)
    }

    /// Federated training. Linear models run FedAvg rounds from zero
    /// parameters; decision trees are trained once per node and combined by
    /// vote. The finished model replaces any previous one for the pattern.
    pub fn run_federated_training(&self, pattern: Pattern, job: &TrainingJob) -> Result<Arc<GlobalModel>, FederationError> {
        job.train_config.validate()?;
        let _session = self.begin_session(pattern)?;
        let target = pattern.target_attribute().ok_or(FederationError::NotPredictive(pattern))?;
        let labels = self
            .catalog
            .schema()
            .attribute(target)
            .map(|a| a.vocabulary.clone())
            .ok_or_else(|| FederationError::BadInput(format!("{target} not in schema")))?;
        let (nodes, fingerprint, excluded) = self.prepare(pattern, &job.cache)?;
        let width = FeatureLayout::new(self.catalog.schema(), pattern.feature_attributes())?.width;
        let mode = job.mode.unwrap_or(self.config.mode);
        let mut model = GlobalModel {
            pattern,
            model: job.train_config.model,
            mode,
            round: 0,
            labels,
            feature_width: width,
            fingerprint,
            params: None,
            trees: Vec::new(),
            history: Vec::new(),
            excluded,
            node_metrics: BTreeMap::new(),
            aggregated: None,
            pooled: None,
            stopped_early: false,
        };
        if job.train_config.model.is_linear() {
            self.train_linear(&nodes, job, &mut model)?;
        } else {
            self.train_trees(&nodes, job, &mut model)?;
        }
        let model = Arc::new(model);
        self.models
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(pattern, model.clone());
        Ok(model)
    }

    fn finish_metrics(model: &mut GlobalModel, reports: BTreeMap<String, MetricsReport>) {
        let refs: Vec<&MetricsReport> = reports.values().collect();
        model.aggregated = AggregatedMetrics::weighted(&refs);
        model.pooled = pooled_metrics(&refs);
        model.node_metrics = reports;
    }

    fn train_linear(&self, nodes: &[String], job: &TrainingJob, model: &mut GlobalModel) -> Result<(), FederationError> {
        let config = &job.train_config;
        let rounds = job.rounds.unwrap_or(self.config.rounds);
        if rounds < 1 {
            return Err(FederationError::BadInput("rounds must be >= 1".into()));
        }
        let pattern = model.pattern;
        let mut params = ParameterVector::zeros(config.model, model.labels.len(), model.feature_width);
        let needed = self.config.min_participants.max(1);
        let mut last_reports = BTreeMap::new();

        for round in 1..=rounds {
            let request = Arc::new(RoundRequest {
                pattern,
                round,
                params: params.values.clone(),
                config: config.clone(),
            });
            let mut updates = Vec::new();
            let mut skipped = Vec::new();
            for r in self.dispatch(nodes, move |c| c.train_round(&request)) {
                match r.result {
                    Ok(resp) if resp.params.len() == params.values.len() => updates.push(ClientUpdate {
                        node_id: r.node_id,
                        params: resp.params,
                        n_train: resp.n_train,
                    }),
                    Ok(_) => skipped.push(SkippedNode {
                        node_id: r.node_id,
                        reason: "parameter dimension mismatch".into(),
                    }),
                    Err(e) => skipped.push(SkippedNode {
                        node_id: r.node_id,
                        reason: e.to_string(),
                    }),
                }
            }
            if updates.len() < needed {
                model.params = Some(params);
                let reason = format!("{} of {needed} required nodes responded", updates.len());
                return Err(FederationError::Aborted {
                    round,
                    reason,
                    partial: Box::new(model.clone()),
                });
            }
            params = params.with_values(fedavg(&updates, model.mode)?);

            let (reports, eval_skipped) = self.evaluate_all(
                nodes,
                pattern,
                EvalModel::Linear {
                    kind: config.model,
                    params: params.values.clone(),
                },
            );
            skipped.extend(eval_skipped);
            let refs: Vec<&MetricsReport> = reports.values().collect();
            model.history.push(RoundRecord {
                round,
                participants: updates.iter().map(|u| u.node_id.clone()).collect(),
                n_train: updates.iter().map(|u| (u.node_id.clone(), u.n_train)).collect(),
                skipped,
                metrics: AggregatedMetrics::weighted(&refs),
            });
            model.round = round;
            if !reports.is_empty() {
                last_reports = reports;
            }
            if self.config.early_stop && converged(&model.history) {
                model.stopped_early = true;
                break;
            }
        }
        model.params = Some(params);
        Self::finish_metrics(model, last_reports);
        Ok(())
    }

    fn train_trees(&self, nodes: &[String], job: &TrainingJob, model: &mut GlobalModel) -> Result<(), FederationError> {
        let pattern = model.pattern;
        let request = Arc::new(TreeRequest {
            pattern,
            config: job.train_config.clone(),
        });
        let mut skipped = Vec::new();
        for r in self.dispatch(nodes, move |c| c.train_tree(&request)) {
            match r.result {
                Ok(tree) => model.trees.push(NodeTree {
                    node_id: r.node_id,
                    tree,
                }),
                Err(e) => skipped.push(SkippedNode {
                    node_id: r.node_id,
                    reason: e.to_string(),
                }),
            }
        }
        let needed = self.config.min_participants.max(1);
        if model.trees.len() < needed {
            return Err(FederationError::TooFewParticipants {
                needed,
                got: model.trees.len(),
            });
        }
        let trees = model.trees.iter().map(|t| t.tree.clone()).collect();
        let (reports, eval_skipped) = self.evaluate_all(nodes, pattern, EvalModel::TreeVote { trees });
        skipped.extend(eval_skipped);
        let refs: Vec<&MetricsReport> = reports.values().collect();
        model.history.push(RoundRecord {
            round: 1,
            participants: model.trees.iter().map(|t| t.node_id.clone()).collect(),
            n_train: BTreeMap::new(),
            skipped,
            metrics: AggregatedMetrics::weighted(&refs),
        });
        model.round = 1;
        Self::finish_metrics(model, reports);
        Ok(())
    }
}

fn converged(history: &[RoundRecord]) -> bool {
    const WINDOW: usize = 10;
    if history.len() <= WINDOW {
        return false;
    }
    let acc = |r: &RoundRecord| r.metrics.as_ref().map(|m| m.accuracy);
    match (acc(&history[history.len() - 1]), acc(&history[history.len() - 1 - WINDOW])) {
        (Some(a), Some(b)) => (a - b).abs() < 1e-4,
        _ => false,
    }
}

enum Decoded {
    Rows(Vec<Row>),
    Counts(CountPartial),
}

impl Decoded {
    fn len(&self) -> usize {
        match self {
            Decoded::Rows(r) => r.len(),
            Decoded::Counts(c) => c.counts.len(),
        }
    }
}

/// Merges node partials, already in node-id order.
fn merge_partials(query: &crate::queryir::AnalyticalQuery, parts: Vec<Decoded>) -> Result<MergedPayload, FederationError> {
    if query.pattern == Pattern::Retrieve {
        let rows: Vec<Row> = parts
            .into_iter()
            .flat_map(|p| match p {
                Decoded::Rows(r) => r,
                Decoded::Counts(_) => Vec::new(),
            })
            .collect();
        return Ok(MergedPayload::Rows {
            count: rows.len(),
            rows,
        });
    }
    let partials: Vec<CountPartial> = parts
        .into_iter()
        .filter_map(|p| match p {
            Decoded::Counts(c) => Some(c),
            Decoded::Rows(_) => None,
        })
        .collect();
    let tree = merge_count_trees(&partials)?;
    Ok(MergedPayload::CountTree {
        group_by: query.group_by.clone(),
        target: query.target.clone().unwrap_or_default(),
        total: tree.total(),
        tree,
    })
}
