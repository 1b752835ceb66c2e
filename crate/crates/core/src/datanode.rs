//! An autonomous data node: its local table, sub-query execution, and the
//! local half of federated training.
//!
//! For prediction patterns nothing but parameter vectors, counts and metrics
//! leaves the node. Only `SELECT_ROWS` sub-queries return row values.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::{decode_cell, AttributeKind, CatalogError, GlobalSchema, NodeMapping};
use crate::mlcore::cart::{cart_train, tree_vote, DecisionTree};
use crate::mlcore::linear::{train_epochs, ParameterVector};
use crate::mlcore::metrics::{compute_metrics, MetricsReport};
use crate::mlcore::resample::{balance, BalanceConfig};
use crate::mlcore::split::{train_test_split, Split};
use crate::mlcore::{rng_from_seed, FeatureLayout, MlError, ModelKind, TrainConfig};
use crate::queryir::{LocalSubQuery, LocalTerm, Pattern, SubQueryMode};
use crate::value::{compare, Comparator, Row, Value};

#[derive(Debug, Error)]
pub enum NodeError {
    #[error("io error: {0}")]
    Io(String),
    #[error("csv error: {0}")]
    Csv(String),
    #[error("header mismatch: expected {expected:?}, found {found:?}")]
    HeaderMismatch { expected: Vec<String>, found: Vec<String> },
    #[error("no dataset has been ingested")]
    NotIngested,
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("column {column}: {message}")]
    KindMismatch { column: String, message: String },
    #[error("pattern {0} has no target attribute")]
    NotPredictive(Pattern),
    #[error("attribute {0} is not mapped at this node")]
    Unmapped(String),
    #[error("only {found} class(es) present; need at least 2")]
    TooFewClasses { found: usize },
    #[error("no training cache for pattern {0}; build one first")]
    NoCache(Pattern),
    #[error("training cache fingerprint mismatch for {pattern}: have {have}, requested {requested}")]
    FingerprintMismatch {
        pattern: Pattern,
        have: String,
        requested: String,
    },
    #[error("a training session for {0} is already running")]
    Busy(Pattern),
    #[error("the {0} split is empty")]
    EmptySplit(&'static str),
    #[error("no metrics recorded for {0}")]
    NoMetrics(Pattern),
    #[error(transparent)]
    Ml(#[from] MlError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("node unreachable: {0}")]
    Transport(String),
    #[error("node timed out")]
    Timeout,
    #[error("node error {code}: {message}")]
    Remote { code: String, message: String },
}

impl NodeError {
    /// Stable machine-readable code, used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            NodeError::Io(_) | NodeError::Csv(_) | NodeError::HeaderMismatch { .. } => "ingest",
            NodeError::NotIngested => "not_ingested",
            NodeError::UnknownTable(_) | NodeError::UnknownColumn(_) => "unknown_column",
            NodeError::KindMismatch { .. } => "kind_mismatch",
            NodeError::NotPredictive(_) | NodeError::Unmapped(_) => "unmapped",
            NodeError::TooFewClasses { .. } => "too_few_classes",
            NodeError::NoCache(_) | NodeError::FingerprintMismatch { .. } => "cache",
            NodeError::Busy(_) => "busy",
            NodeError::EmptySplit(_) => "empty_split",
            NodeError::NoMetrics(_) => "not_found",
            NodeError::Ml(_) => "ml",
            NodeError::Catalog(_) => "catalog",
            NodeError::Transport(_) => "transport",
            NodeError::Timeout => "timeout",
            NodeError::Remote { .. } => "remote",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub kind: AttributeKind,
}

impl ColumnDef {
    pub fn new(name: &str, kind: AttributeKind) -> Self {
        Self {
            name: name.to_string(),
            kind,
        }
    }
}

/// A node's table. Empty cells are missing values and are absent from the
/// row map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalDataset {
    pub table: String,
    pub columns: Vec<ColumnDef>,
    pub rows: Vec<Row>,
}

impl LocalDataset {
    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedRow {
    /// 1-based line number in the file, header included.
    pub line: usize,
    pub column: String,
    pub cell: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub dropped: Vec<DroppedRow>,
}

fn parse_cell(kind: AttributeKind, raw: &str) -> Option<Value> {
    match kind {
        AttributeKind::Categorical => Some(Value::text(raw)),
        AttributeKind::NumericInteger => raw.trim().parse().ok().map(Value::Int),
        AttributeKind::NumericReal => raw
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .map(Value::Real),
    }
}

/// Reads a CSV table whose header must list `columns` in order. Rows with an
/// unparseable numeric cell are dropped and reported.
pub fn ingest_reader<R: Read>(
    reader: R,
    table: &str,
    columns: &[ColumnDef],
) -> Result<(LocalDataset, IngestReport), NodeError> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = csv
        .headers()
        .map_err(|e| NodeError::Csv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let expected: Vec<String> = columns.iter().map(|c| c.name.clone()).collect();
    if header != expected {
        return Err(NodeError::HeaderMismatch {
            expected,
            found: header,
        });
    }
    let mut rows = Vec::new();
    let mut report = IngestReport::default();
    for (i, record) in csv.records().enumerate() {
        let record = record.map_err(|e| NodeError::Csv(e.to_string()))?;
        report.rows_read += 1;
        let mut row = Row::new();
        let mut bad = None;
        for (col, raw) in columns.iter().zip(record.iter()) {
            if raw.is_empty() {
                continue;
            }
            match parse_cell(col.kind, raw) {
                Some(v) => {
                    row.insert(col.name.clone(), v);
                }
                None => {
                    bad = Some((col.name.clone(), raw.to_string()));
                    break;
                }
            }
        }
        match bad {
            Some((column, cell)) => report.dropped.push(DroppedRow {
                line: i + 2,
                column,
                cell,
            }),
            None => rows.push(row),
        }
    }
    if !report.dropped.is_empty() {
        log::warn!("{table}: dropped {} row(s) with unparseable cells", report.dropped.len());
    }
    Ok((
        LocalDataset {
            table: table.to_string(),
            columns: columns.to_vec(),
            rows,
        },
        report,
    ))
}

pub fn ingest_csv(
    path: &Path,
    table: &str,
    columns: &[ColumnDef],
) -> Result<(LocalDataset, IngestReport), NodeError> {
    let file = std::fs::File::open(path).map_err(|e| NodeError::Io(format!("{}: {e}", path.display())))?;
    ingest_reader(file, table, columns)
}

/// Node configuration: identity, local column kinds, and the mapping to the
/// global schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDescriptor {
    pub node_id: String,
    pub table: String,
    pub local_columns: Vec<ColumnDef>,
    pub columns: BTreeMap<String, String>,
    #[serde(default)]
    pub values: BTreeMap<String, BTreeMap<String, String>>,
}

impl NodeDescriptor {
    pub fn mapping(&self) -> NodeMapping {
        NodeMapping {
            node_id: self.node_id.clone(),
            base_url: None,
            table: self.table.clone(),
            columns: self.columns.clone(),
            values: self.values.clone(),
        }
    }
}

/// Structural metadata. Never carries cell values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeMetadata {
    pub node_id: String,
    pub table: String,
    pub columns: Vec<ColumnDef>,
    pub row_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountGroup {
    pub key: Vec<Value>,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SubQueryResult {
    /// Matching rows in table order, projected to the requested columns.
    Rows { rows: Vec<Row> },
    /// Groups sorted by key. Rows missing any grouping column are skipped.
    Counts { columns: Vec<String>, groups: Vec<CountGroup> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheSettings {
    pub balance: BalanceConfig,
    pub split_fraction: f64,
    pub seed: u64,
}

impl Default for CacheSettings {
    fn default() -> Self {
        Self {
            balance: BalanceConfig::default(),
            split_fraction: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRequest {
    pub pattern: Pattern,
    pub schema: GlobalSchema,
    #[serde(default)]
    pub settings: CacheSettings,
}

impl CacheRequest {
    /// SHA-256 over the schema, pattern and preprocessing settings.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(self).unwrap_or_default();
        hex::encode(Sha256::digest(&canonical))
    }
}

/// Encoded training and test matrices for one pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingCache {
    pub pattern: Pattern,
    pub fingerprint: String,
    pub layout: FeatureLayout,
    pub labels: Vec<String>,
    /// Indices into the cleaned rows.
    pub split: Split,
    /// Real training rows followed by synthetic ones.
    pub train_x: Vec<Vec<f64>>,
    pub train_y: Vec<usize>,
    pub n_synthetic: usize,
    pub test_x: Vec<Vec<f64>>,
    pub test_y: Vec<usize>,
}

impl TrainingCache {
    pub fn n_train_real(&self) -> usize {
        self.train_x.len() - self.n_synthetic
    }
}

/// What the coordinator learns about a cache: sizes and counts only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheSummary {
    pub pattern: Pattern,
    pub fingerprint: String,
    pub rebuilt: bool,
    pub feature_width: usize,
    pub num_classes: usize,
    pub n_train: usize,
    pub n_synthetic: usize,
    pub n_test: usize,
    pub incomplete_rows: usize,
    pub train_class_counts: Vec<u64>,
    pub balancing_applied: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRequest {
    pub pattern: Pattern,
    pub round: usize,
    pub params: Vec<f64>,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundResponse {
    pub pattern: Pattern,
    pub round: usize,
    pub params: Vec<f64>,
    pub n_train: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EvalModel {
    Linear { kind: ModelKind, params: Vec<f64> },
    TreeVote { trees: Vec<DecisionTree> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateRequest {
    pub pattern: Pattern,
    pub model: EvalModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeRequest {
    pub pattern: Pattern,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelLogEntry {
    pub round: usize,
    pub pattern: Pattern,
    /// SHA-256 of the little-endian parameter bytes.
    pub params_digest: String,
    pub local_metrics: Option<MetricsReport>,
}

pub fn params_digest(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Seed for the minibatch order of one round.
fn round_seed(seed: u64, round: usize) -> u64 {
    seed ^ (round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub struct DataNode {
    descriptor: NodeDescriptor,
    mapping: NodeMapping,
    dataset: RwLock<Option<Arc<LocalDataset>>>,
    caches: Mutex<BTreeMap<Pattern, Arc<TrainingCache>>>,
    sessions: BTreeMap<Pattern, Mutex<()>>,
    logs: Mutex<BTreeMap<Pattern, Vec<ModelLogEntry>>>,
    metrics: Mutex<BTreeMap<Pattern, MetricsReport>>,
}

impl DataNode {
    pub fn new(descriptor: NodeDescriptor) -> Self {
        Self {
            mapping: descriptor.mapping(),
            descriptor,
            dataset: RwLock::new(None),
            caches: Mutex::default(),
            sessions: Pattern::PREDICTIONS.into_iter().map(|p| (p, Mutex::new(()))).collect(),
            logs: Mutex::default(),
            metrics: Mutex::default(),
        }
    }

    pub fn with_dataset(descriptor: NodeDescriptor, dataset: LocalDataset) -> Self {
        let node = Self::new(descriptor);
        node.load(dataset);
        node
    }

    /// Replaces the dataset and invalidates every cache.
    pub fn load(&self, dataset: LocalDataset) {
        *self.dataset.write().unwrap_or_else(|e| e.into_inner()) = Some(Arc::new(dataset));
        self.caches.lock().unwrap_or_else(|e| e.into_inner()).clear();
    }

    pub fn node_id(&self) -> &str {
        &self.descriptor.node_id
    }

    pub fn descriptor(&self) -> &NodeDescriptor {
        &self.descriptor
    }

    pub fn mapping(&self) -> &NodeMapping {
        &self.mapping
    }

    fn data(&self) -> Result<Arc<LocalDataset>, NodeError> {
        self.dataset
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
            .ok_or(NodeError::NotIngested)
    }

    pub fn metadata(&self) -> Result<NodeMetadata, NodeError> {
        let data = self.data()?;
        Ok(NodeMetadata {
            node_id: self.descriptor.node_id.clone(),
            table: data.table.clone(),
            columns: data.columns.clone(),
            row_count: data.row_count(),
        })
    }

    pub fn execute_subquery(&self, sq: &LocalSubQuery) -> Result<SubQueryResult, NodeError> {
        let data = self.data()?;
        if sq.table != data.table {
            return Err(NodeError::UnknownTable(sq.table.clone()));
        }
        let kind_of = |name: &str| {
            data.column(name)
                .map(|c| c.kind)
                .ok_or_else(|| NodeError::UnknownColumn(name.to_string()))
        };
        let mut never = false;
        for term in &sq.filter {
            match term {
                LocalTerm::Never => never = true,
                LocalTerm::Compare { column, op, value } => check_term(column, kind_of(column)?, *op, value)?,
            }
        }
        let matches = |row: &Row| {
            !never
                && sq.filter.iter().all(|t| match t {
                    LocalTerm::Compare { column, op, value } => {
                        row.get(column).is_some_and(|cell| compare(cell, *op, value))
                    }
                    LocalTerm::Never => false,
                })
        };
        match &sq.mode {
            SubQueryMode::SelectRows => {
                for c in &sq.columns {
                    kind_of(c)?;
                }
                let rows = data
                    .rows
                    .iter()
                    .filter(|r| matches(r))
                    .map(|r| {
                        sq.columns
                            .iter()
                            .filter_map(|c| r.get(c).map(|v| (c.clone(), v.clone())))
                            .collect()
                    })
                    .collect();
                Ok(SubQueryResult::Rows { rows })
            }
            SubQueryMode::CountBy { columns } => {
                for c in columns {
                    kind_of(c)?;
                }
                let mut counts: BTreeMap<Vec<Value>, u64> = BTreeMap::new();
                for row in data.rows.iter().filter(|r| matches(r)) {
                    let key: Option<Vec<Value>> = columns.iter().map(|c| row.get(c).cloned()).collect();
                    if let Some(key) = key {
                        *counts.entry(key).or_default() += 1;
                    }
                }
                Ok(SubQueryResult::Counts {
                    columns: columns.clone(),
                    groups: counts
                        .into_iter()
                        .map(|(key, count)| CountGroup { key, count })
                        .collect(),
                })
            }
        }
    }

    /// Builds (or reuses, when the fingerprint matches) the training cache.
    /// Order: translate to global, drop incomplete rows, split, encode,
    /// balance the training split only.
    pub fn build_cache(&self, req: &CacheRequest) -> Result<CacheSummary, NodeError> {
        let _session = self.session(req.pattern)?;
        let fingerprint = req.fingerprint();
        if let Some(existing) = self.cache(req.pattern) {
            if existing.fingerprint == fingerprint {
                return Ok(self.summarize(&existing, false, 0, Vec::new()));
            }
        }
        let (cache, incomplete, flags) = self.preprocess(req, fingerprint)?;
        let cache = Arc::new(cache);
        self.caches
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(req.pattern, cache.clone());
        Ok(self.summarize(&cache, true, incomplete, flags))
    }

    fn summarize(&self, c: &TrainingCache, rebuilt: bool, incomplete: usize, flags: Vec<String>) -> CacheSummary {
        let mut counts = vec![0u64; c.labels.len()];
        for &y in &c.train_y {
            counts[y] += 1;
        }
        CacheSummary {
            pattern: c.pattern,
            fingerprint: c.fingerprint.clone(),
            rebuilt,
            feature_width: c.layout.width,
            num_classes: c.labels.len(),
            n_train: c.n_train_real(),
            n_synthetic: c.n_synthetic,
            n_test: c.test_x.len(),
            incomplete_rows: incomplete,
            train_class_counts: counts,
            balancing_applied: c.n_synthetic > 0,
            flags,
        }
    }

    fn preprocess(
        &self,
        req: &CacheRequest,
        fingerprint: String,
    ) -> Result<(TrainingCache, usize, Vec<String>), NodeError> {
        let data = self.data()?;
        let schema = &req.schema;
        let target = req.pattern.target_attribute().ok_or(NodeError::NotPredictive(req.pattern))?;
        let features = req.pattern.feature_attributes();
        let target_def = schema
            .attribute(target)
            .ok_or_else(|| NodeError::Unmapped(target.to_string()))?;
        let layout = FeatureLayout::new(schema, features)?;

        let mut needed: Vec<(&str, &str)> = Vec::new();
        for &attr in features.iter().chain([&target]) {
            let column = self
                .mapping
                .local_column(attr)
                .ok_or_else(|| NodeError::Unmapped(attr.to_string()))?;
            if data.column(column).is_none() {
                return Err(NodeError::UnknownColumn(column.to_string()));
            }
            needed.push((attr, column));
        }

        // clean: translate, keeping only complete rows
        let mut rows: Vec<Row> = Vec::new();
        let mut incomplete = 0;
        'rows: for local in &data.rows {
            let mut global = Row::new();
            for &(attr, column) in &needed {
                let Some(cell) = local.get(column) else {
                    incomplete += 1;
                    continue 'rows;
                };
                global.insert(attr.to_string(), decode_cell(&self.mapping, schema, attr, column, cell)?);
            }
            rows.push(global);
        }

        let labels = target_def.vocabulary.clone();
        let ys: Vec<usize> = rows
            .iter()
            .map(|r| {
                r.get(target)
                    .and_then(Value::as_text)
                    .and_then(|v| target_def.vocabulary_index(v))
                    .ok_or_else(|| NodeError::Unmapped(target.to_string()))
            })
            .collect::<Result<_, _>>()?;
        let present = {
            let mut seen = vec![false; labels.len()];
            ys.iter().for_each(|&y| seen[y] = true);
            seen.iter().filter(|&&s| s).count()
        };
        if present < 2 {
            return Err(NodeError::TooFewClasses { found: present });
        }

        let split = train_test_split(rows.len(), req.settings.split_fraction, req.settings.seed)?;
        let encode = |idx: &[usize]| -> Result<(Vec<Vec<f64>>, Vec<usize>), MlError> {
            let xs = idx.iter().map(|&i| layout.encode(&rows[i])).collect::<Result<_, _>>()?;
            Ok((xs, idx.iter().map(|&i| ys[i]).collect()))
        };
        let (mut train_x, mut train_y) = encode(&split.train)?;
        let (test_x, test_y) = encode(&split.test)?;

        let mut rng = rng_from_seed(req.settings.seed.wrapping_add(1));
        let outcome = balance(&train_x, &train_y, labels.len(), &req.settings.balance, &mut rng)?;
        let n_synthetic = outcome.synthetic_x.len();
        train_x.extend(outcome.synthetic_x);
        train_y.extend(outcome.synthetic_y);

        Ok((
            TrainingCache {
                pattern: req.pattern,
                fingerprint,
                layout,
                labels,
                split,
                train_x,
                train_y,
                n_synthetic,
                test_x,
                test_y,
            },
            incomplete,
            outcome.flags,
        ))
    }

    /// The cache for `pattern`, if built. Exposed for in-process oracles;
    /// never served over the wire.
    pub fn cache(&self, pattern: Pattern) -> Option<Arc<TrainingCache>> {
        self.caches.lock().unwrap_or_else(|e| e.into_inner()).get(&pattern).cloned()
    }

    fn require_cache(&self, pattern: Pattern) -> Result<Arc<TrainingCache>, NodeError> {
        self.cache(pattern).ok_or(NodeError::NoCache(pattern))
    }

    fn session(&self, pattern: Pattern) -> Result<std::sync::MutexGuard<'_, ()>, NodeError> {
        let lock = self.sessions.get(&pattern).ok_or(NodeError::NotPredictive(pattern))?;
        match lock.try_lock() {
            Ok(g) => Ok(g),
            Err(std::sync::TryLockError::Poisoned(p)) => Ok(p.into_inner()),
            Err(std::sync::TryLockError::WouldBlock) => Err(NodeError::Busy(pattern)),
        }
    }

    /// One local training round starting from the received global
    /// parameters. A round that arrives while another runs is rejected.
    pub fn train_round(&self, req: &RoundRequest) -> Result<RoundResponse, NodeError> {
        let _session = self.session(req.pattern)?;
        let cache = self.require_cache(req.pattern)?;
        if !req.config.model.is_linear() {
            return Err(MlError::InvalidConfig("round training needs a linear model".into()).into());
        }
        req.config.validate()?;
        if cache.train_x.is_empty() {
            return Err(NodeError::EmptySplit("training"));
        }
        let init = ParameterVector::zeros(req.config.model, cache.labels.len(), cache.layout.width);
        if req.params.len() != init.values.len() {
            return Err(MlError::DimensionMismatch {
                expected: init.values.len(),
                actual: req.params.len(),
            }
            .into());
        }
        let start = init.with_values(req.params.clone());
        start.validate()?;
        let mut rng = rng_from_seed(round_seed(req.config.seed, req.round));
        let updated = train_epochs(&start, &cache.train_x, &cache.train_y, &req.config, &mut rng)?;

        let local_metrics = if cache.test_x.is_empty() {
            None
        } else {
            let (pred, scores) = linear_predictions(&updated, &cache.test_x);
            compute_metrics(&cache.test_y, &pred, &scores, cache.labels.len()).ok()
        };
        let mut logs = self.logs.lock().unwrap_or_else(|e| e.into_inner());
        let log = logs.entry(req.pattern).or_default();
        // replays of an already logged round are answered but not re-logged
        if log.last().is_none_or(|e| req.round > e.round) {
            log.push(ModelLogEntry {
                round: req.round,
                pattern: req.pattern,
                params_digest: params_digest(&updated.values),
                local_metrics,
            });
        }
        Ok(RoundResponse {
            pattern: req.pattern,
            round: req.round,
            params: updated.values,
            n_train: cache.n_train_real(),
        })
    }

    /// Scores a model on this node's held-out test split and remembers the
    /// report as the latest metrics for the pattern.
    pub fn evaluate(&self, req: &EvaluateRequest) -> Result<MetricsReport, NodeError> {
        let cache = self.require_cache(req.pattern)?;
        if cache.test_x.is_empty() {
            return Err(NodeError::EmptySplit("test"));
        }
        let k = cache.labels.len();
        let (pred, scores) = match &req.model {
            EvalModel::Linear { kind, params } => {
                let p = ParameterVector::zeros(*kind, k, cache.layout.width);
                if params.len() != p.values.len() {
                    return Err(MlError::DimensionMismatch {
                        expected: p.values.len(),
                        actual: params.len(),
                    }
                    .into());
                }
                let p = p.with_values(params.clone());
                p.validate()?;
                linear_predictions(&p, &cache.test_x)
            }
            EvalModel::TreeVote { trees } => {
                let names: Vec<&str> = cache.labels.iter().map(String::as_str).collect();
                let mut pred = Vec::with_capacity(cache.test_x.len());
                let mut scores = Vec::with_capacity(cache.test_x.len());
                for x in &cache.test_x {
                    let v = tree_vote(trees, x, &names)?;
                    pred.push(v.label);
                    scores.push(v.shares);
                }
                (pred, scores)
            }
        };
        let report = compute_metrics(&cache.test_y, &pred, &scores, k)?;
        self.metrics
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(req.pattern, report.clone());
        Ok(report)
    }

    /// Trains a CART tree on the training split.
    pub fn train_tree(&self, req: &TreeRequest) -> Result<DecisionTree, NodeError> {
        let _session = self.session(req.pattern)?;
        let cache = self.require_cache(req.pattern)?;
        if cache.train_x.is_empty() {
            return Err(NodeError::EmptySplit("training"));
        }
        Ok(cart_train(
            &cache.train_x,
            &cache.train_y,
            cache.labels.len(),
            req.config.max_depth,
            req.config.min_leaf,
        )?)
    }

    pub fn latest_metrics(&self, pattern: Pattern) -> Result<MetricsReport, NodeError> {
        self.metrics
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(&pattern)
            .cloned()
            .ok_or(NodeError::NoMetrics(pattern))
    }

    pub fn model_log(&self, pattern: Pattern) -> Vec<ModelLogEntry> {
        self.logs
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(&pattern)
            .cloned()
            .unwrap_or_default()
    }
}

fn linear_predictions(p: &ParameterVector, xs: &[Vec<f64>]) -> (Vec<usize>, Vec<Vec<f64>>) {
    let scores: Vec<Vec<f64>> = xs.iter().map(|x| p.scores(x)).collect();
    let pred = scores.iter().map(|s| crate::mlcore::linear::argmax(s)).collect();
    (pred, scores)
}

fn check_term(column: &str, kind: AttributeKind, op: Comparator, value: &Value) -> Result<(), NodeError> {
    let mismatch = |message: &str| NodeError::KindMismatch {
        column: column.to_string(),
        message: message.to_string(),
    };
    match kind {
        AttributeKind::Categorical if !matches!(value, Value::Text(_)) => {
            Err(mismatch("categorical column compared with a number"))
        }
        AttributeKind::Categorical if op.is_ordering() => Err(mismatch("ordering comparison on a categorical column")),
        AttributeKind::NumericInteger | AttributeKind::NumericReal if !value.is_numeric() => {
            Err(mismatch("numeric column compared with text"))
        }
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::AttributeDef;
    use crate::mlcore::resample::BalanceMethod;
    use crate::mlcore::BatchMode;

    fn columns() -> Vec<ColumnDef> {
        vec![
            ColumnDef::new("SEXE", AttributeKind::Categorical),
            ColumnDef::new("AGE", AttributeKind::NumericInteger),
            ColumnDef::new("treatment_loc", AttributeKind::Categorical),
        ]
    }

    fn descriptor() -> NodeDescriptor {
        NodeDescriptor {
            node_id: "n1".into(),
            table: "patients".into(),
            local_columns: columns(),
            columns: [("sex", "SEXE"), ("age", "AGE"), ("treatment", "treatment_loc")]
                .into_iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
            values: BTreeMap::from([(
                "sex".to_string(),
                BTreeMap::from([("female".to_string(), "F".to_string()), ("male".to_string(), "M".to_string())]),
            )]),
        }
    }

    fn node_from(csv_text: &str) -> DataNode {
        let (ds, _) = ingest_reader(csv_text.as_bytes(), "patients", &columns()).unwrap();
        DataNode::with_dataset(descriptor(), ds)
    }

    #[test]
    fn ingest_well_formed_and_header_only() {
        let (ds, rep) = ingest_reader("SEXE,AGE,treatment_loc\nF,40,a\nM,50,b\nF,61,a\n".as_bytes(), "t", &columns()).unwrap();
        assert_eq!(ds.row_count(), 3);
        assert!(rep.dropped.is_empty());
        let (ds, _) = ingest_reader("SEXE,AGE,treatment_loc\n".as_bytes(), "t", &columns()).unwrap();
        assert_eq!(ds.row_count(), 0);
    }

    #[test]
    fn ingest_drops_bad_numeric_rows() {
        let (ds, rep) =
            ingest_reader("SEXE,AGE,treatment_loc\nF,40,a\nM,forty,b\nF,61,a\n".as_bytes(), "t", &columns()).unwrap();
        assert_eq!(ds.row_count(), 2);
        assert_eq!(rep.dropped.len(), 1);
        assert_eq!(rep.dropped[0].line, 3);
        assert_eq!(rep.dropped[0].column, "AGE");
    }

    #[test]
    fn ingest_errors() {
        assert!(matches!(
            ingest_reader("SEX,AGE,treatment_loc\n".as_bytes(), "t", &columns()),
            Err(NodeError::HeaderMismatch { .. })
        ));
        assert!(matches!(
            ingest_csv(Path::new("/nonexistent/x.csv"), "t", &columns()),
            Err(NodeError::Io(_))
        ));
    }

    #[test]
    fn empty_cells_are_missing() {
        let (ds, rep) = ingest_reader("SEXE,AGE,treatment_loc\nF,,a\n".as_bytes(), "t", &columns()).unwrap();
        assert!(rep.dropped.is_empty());
        assert!(!ds.rows[0].contains_key("AGE"));
    }

    #[test]
    fn metadata_has_no_values() {
        let node = node_from("SEXE,AGE,treatment_loc\nF,40,sentinel_drug_xyz\n");
        let m = node.metadata().unwrap();
        assert_eq!(m.columns.len(), 3);
        assert_eq!(m.row_count, 1);
        assert!(!serde_json::to_string(&m).unwrap().contains("sentinel_drug_xyz"));
        assert!(matches!(DataNode::new(descriptor()).metadata(), Err(NodeError::NotIngested)));
    }

    fn select(filter: Vec<LocalTerm>) -> LocalSubQuery {
        LocalSubQuery {
            table: "patients".into(),
            columns: vec!["SEXE".into(), "AGE".into()],
            filter,
            mode: SubQueryMode::SelectRows,
        }
    }

    fn term(column: &str, op: Comparator, value: Value) -> LocalTerm {
        LocalTerm::Compare {
            column: column.into(),
            op,
            value,
        }
    }

    #[test]
    fn select_rows_filters_exactly() {
        let node = node_from("SEXE,AGE,treatment_loc\nF,40,a\nM,50,b\nF,61,a\n");
        let SubQueryResult::Rows { rows } = node
            .execute_subquery(&select(vec![term("SEXE", Comparator::Eq, Value::text("F"))]))
            .unwrap()
        else {
            panic!()
        };
        assert_eq!(rows.len(), 2);
        assert!(!rows[0].contains_key("treatment_loc"));
        let SubQueryResult::Rows { rows } = node
            .execute_subquery(&select(vec![term("AGE", Comparator::Ge, Value::Real(50.0))]))
            .unwrap()
        else {
            panic!()
        };
        assert_eq!(rows.len(), 2);
        let SubQueryResult::Rows { rows } = node
            .execute_subquery(&select(vec![term("SEXE", Comparator::Eq, Value::text("X"))]))
            .unwrap()
        else {
            panic!()
        };
        assert!(rows.is_empty());
        let SubQueryResult::Rows { rows } = node.execute_subquery(&select(vec![LocalTerm::Never])).unwrap() else {
            panic!()
        };
        assert!(rows.is_empty());
    }

    #[test]
    fn subquery_errors() {
        let node = node_from("SEXE,AGE,treatment_loc\nF,40,a\n");
        let err = node.execute_subquery(&select(vec![term("NOPE", Comparator::Eq, Value::Int(1))]));
        assert!(matches!(err, Err(NodeError::UnknownColumn(_))));
        let err = node.execute_subquery(&select(vec![term("SEXE", Comparator::Lt, Value::text("F"))]));
        assert!(matches!(err, Err(NodeError::KindMismatch { .. })));
        let err = node.execute_subquery(&select(vec![term("AGE", Comparator::Eq, Value::text("x"))]));
        assert!(matches!(err, Err(NodeError::KindMismatch { .. })));
        let mut sq = select(vec![]);
        sq.table = "other".into();
        assert!(matches!(node.execute_subquery(&sq), Err(NodeError::UnknownTable(_))));
    }

    #[test]
    fn count_by_partitions_rows() {
        let node = node_from("SEXE,AGE,treatment_loc\nF,40,a\nM,50,b\nF,61,a\nM,70,a\n");
        let sq = LocalSubQuery {
            table: "patients".into(),
            columns: vec![],
            filter: vec![],
            mode: SubQueryMode::CountBy {
                columns: vec!["treatment_loc".into()],
            },
        };
        let SubQueryResult::Counts { groups, .. } = node.execute_subquery(&sq).unwrap() else {
            panic!()
        };
        assert_eq!(groups.len(), 2);
        assert_eq!(groups.iter().map(|g| g.count).sum::<u64>(), 4);
        assert_eq!(groups[0], CountGroup { key: vec![Value::text("a")], count: 3 });
    }

    // --- training pipeline -------------------------------------------------

    fn ae_schema() -> GlobalSchema {
        GlobalSchema {
            version: 1,
            attributes: vec![
                AttributeDef::categorical("sex", &["female", "male"]),
                AttributeDef::integer("age", Some([0.0, 120.0])),
                AttributeDef::categorical("cancer_type", &["melanoma", "lung"]),
                AttributeDef::categorical("tnm_stage", &["T1", "T2"]),
                AttributeDef::categorical("treatment", &["pembro", "nivo"]),
                AttributeDef::categorical("frequency", &["q2w", "q3w"]),
                AttributeDef::categorical("ae_occurred", &["no", "yes"]),
            ],
        }
    }

    fn ae_columns() -> Vec<ColumnDef> {
        ["sex", "age", "cancer_type", "tnm_stage", "treatment", "frequency", "ae_occurred"]
            .iter()
            .map(|&n| {
                let kind = if n == "age" {
                    AttributeKind::NumericInteger
                } else {
                    AttributeKind::Categorical
                };
                ColumnDef::new(n, kind)
            })
            .collect()
    }

    /// `n` rows, `n_yes` of which have ae_occurred = yes.
    fn ae_node(n: usize, n_yes: usize) -> DataNode {
        let cols = ae_columns();
        let rows = (0..n)
            .map(|i| {
                let mut r = Row::new();
                r.insert("sex".into(), Value::text(if i % 2 == 0 { "female" } else { "male" }));
                r.insert("age".into(), Value::Int(20 + (i as i64 * 7) % 80));
                r.insert("cancer_type".into(), Value::text(if i % 3 == 0 { "lung" } else { "melanoma" }));
                r.insert("tnm_stage".into(), Value::text(if i % 5 < 2 { "T2" } else { "T1" }));
                r.insert("treatment".into(), Value::text(if i < n_yes { "nivo" } else { "pembro" }));
                r.insert("frequency".into(), Value::text(if i % 4 == 0 { "q3w" } else { "q2w" }));
                r.insert("ae_occurred".into(), Value::text(if i < n_yes { "yes" } else { "no" }));
                r
            })
            .collect();
        let descriptor = NodeDescriptor {
            node_id: "n".into(),
            table: "t".into(),
            local_columns: cols.clone(),
            columns: cols.iter().map(|c| (c.name.clone(), c.name.clone())).collect(),
            values: BTreeMap::new(),
        };
        DataNode::with_dataset(
            descriptor,
            LocalDataset {
                table: "t".into(),
                columns: cols,
                rows,
            },
        )
    }

    fn cache_req(method: BalanceMethod, seed: u64) -> CacheRequest {
        CacheRequest {
            pattern: Pattern::AeRisk,
            schema: ae_schema(),
            settings: CacheSettings {
                balance: BalanceConfig {
                    method,
                    ..Default::default()
                },
                split_fraction: 0.8,
                seed,
            },
        }
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let node = ae_node(100, 50);
        let s = node.build_cache(&cache_req(BalanceMethod::Smote, 3)).unwrap();
        assert_eq!((s.n_train, s.n_test, s.n_synthetic), (80, 20, 0));
        let c = node.cache(Pattern::AeRisk).unwrap();
        let mut all: Vec<usize> = c.split.train.iter().chain(&c.split.test).copied().collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert!(c.split.train.iter().all(|i| !c.split.test.contains(i)));
    }

    #[test]
    fn smote_balances_training_split_only() {
        let node = ae_node(100, 10);
        let none = ae_node(100, 10);
        none.build_cache(&cache_req(BalanceMethod::None, 0)).unwrap();
        let s = node.build_cache(&cache_req(BalanceMethod::Smote, 0)).unwrap();
        assert!(s.balancing_applied);
        assert_eq!(s.train_class_counts[0], s.train_class_counts[1]);
        let (a, b) = (node.cache(Pattern::AeRisk).unwrap(), none.cache(Pattern::AeRisk).unwrap());
        assert_eq!(a.test_x, b.test_x);
        assert_eq!(a.test_y, b.test_y);
        assert_eq!(a.train_x[..a.n_train_real()], b.train_x[..]);
        assert_eq!(a.test_x.len(), 20);
    }

    #[test]
    fn cache_is_reused_and_rebuilt_on_new_fingerprint() {
        let node = ae_node(50, 20);
        assert!(node.build_cache(&cache_req(BalanceMethod::None, 0)).unwrap().rebuilt);
        assert!(!node.build_cache(&cache_req(BalanceMethod::None, 0)).unwrap().rebuilt);
        assert!(node.build_cache(&cache_req(BalanceMethod::None, 1)).unwrap().rebuilt);
    }

    #[test]
    fn single_class_is_rejected() {
        let node = ae_node(20, 0);
        assert!(matches!(
            node.build_cache(&cache_req(BalanceMethod::None, 0)),
            Err(NodeError::TooFewClasses { found: 1 })
        ));
        let mut req = cache_req(BalanceMethod::None, 0);
        req.pattern = Pattern::AeType;
        assert!(node.build_cache(&req).is_err());
    }

    fn round(params: Vec<f64>, epochs: usize) -> RoundRequest {
        RoundRequest {
            pattern: Pattern::AeRisk,
            round: 1,
            params,
            config: TrainConfig {
                local_epochs: epochs,
                batch: BatchMode::Full,
                learning_rate: 0.3,
                ..Default::default()
            },
        }
    }

    #[test]
    fn zero_epochs_is_identity_and_rounds_are_deterministic() {
        let node = ae_node(60, 25);
        let s = node.build_cache(&cache_req(BalanceMethod::None, 0)).unwrap();
        let len = 2 * (s.feature_width + 1);
        let p: Vec<f64> = (0..len).map(|i| i as f64 * 0.01).collect();
        let r = node.train_round(&round(p.clone(), 0)).unwrap();
        assert_eq!(r.params, p);
        assert_eq!(r.n_train, 48);
        let mut req = round(p.clone(), 3);
        req.config.batch = BatchMode::Minibatch { size: 7 };
        let a = node.train_round(&req).unwrap();
        let b = node.train_round(&req).unwrap();
        assert_eq!(a.params, b.params);
        assert!(node.train_round(&round(vec![0.0; 3], 1)).is_err());
    }

    #[test]
    fn model_log_rounds_increase() {
        let node = ae_node(60, 25);
        let s = node.build_cache(&cache_req(BalanceMethod::None, 0)).unwrap();
        let p = vec![0.0; 2 * (s.feature_width + 1)];
        for r in [1, 2, 2, 3] {
            let mut req = round(p.clone(), 1);
            req.round = r;
            node.train_round(&req).unwrap();
        }
        let rounds: Vec<usize> = node.model_log(Pattern::AeRisk).iter().map(|e| e.round).collect();
        assert_eq!(rounds, vec![1, 2, 3]);
    }

    #[test]
    fn evaluate_constant_predictor() {
        // 70/30 in the test split: build a node whose test rows follow that ratio
        let node = ae_node(100, 30);
        let s = node.build_cache(&cache_req(BalanceMethod::None, 0)).unwrap();
        let c = node.cache(Pattern::AeRisk).unwrap();
        let k = 2;
        let mut params = vec![0.0; k * (s.feature_width + 1)];
        // bias of class 0 wins everywhere
        params[s.feature_width] = 1.0;
        let report = node
            .evaluate(&EvaluateRequest {
                pattern: Pattern::AeRisk,
                model: EvalModel::Linear {
                    kind: ModelKind::Logistic,
                    params,
                },
            })
            .unwrap();
        let majority = c.test_y.iter().filter(|&&y| y == 0).count() as f64 / c.test_y.len() as f64;
        assert_eq!(report.accuracy, majority);
        assert_eq!(node.latest_metrics(Pattern::AeRisk).unwrap(), report);
    }

    #[test]
    fn busy_session_is_rejected() {
        let node = ae_node(40, 10);
        let _held = node.session(Pattern::AeRisk).unwrap();
        assert!(matches!(
            node.build_cache(&cache_req(BalanceMethod::None, 0)),
            Err(NodeError::Busy(Pattern::AeRisk))
        ));
    }

    #[test]
    fn trees_train_and_vote() {
        let node = ae_node(100, 40);
        node.build_cache(&cache_req(BalanceMethod::None, 0)).unwrap();
        let tree = node
            .train_tree(&TreeRequest {
                pattern: Pattern::AeRisk,
                config: TrainConfig::default(),
            })
            .unwrap();
        let r = node
            .evaluate(&EvaluateRequest {
                pattern: Pattern::AeRisk,
                model: EvalModel::TreeVote { trees: vec![tree] },
            })
            .unwrap();
        // treatment determines the label in this fixture
        assert_eq!(r.accuracy, 1.0);
    }
}
