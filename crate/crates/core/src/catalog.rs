//! Global schema catalog and per-node metadata mappings.
//!
//! The catalog presents a virtual view over heterogeneous node schemas. A
//! query written against global attribute names is translated to each node's
//! local column names and value encodings with [`to_local`], and local result
//! rows are brought back into the global vocabulary with [`to_global`].

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::queryir::LocalTerm;
use crate::value::{Comparator, Predicate, Row, Value};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CatalogError {
    #[error("catalog parse error: {0}")]
    Parse(String),
    #[error("{message} (at {path})")]
    Validation { path: String, message: String },
    #[error("attribute {attribute} is not covered by node {node}")]
    Uncovered { node: String, attribute: String },
    #[error("node {node}: column {column} is not mapped to any global attribute")]
    UnmappedColumn { node: String, column: String },
    #[error("node {node}: value {value:?} in column {column} has no global mapping")]
    UnknownLocalValue {
        node: String,
        column: String,
        value: String,
    },
    #[error("result digest must not be empty")]
    EmptyDigest,
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> CatalogError {
    CatalogError::Validation {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttributeKind {
    Categorical,
    NumericInteger,
    NumericReal,
}

impl AttributeKind {
    pub fn is_numeric(self) -> bool {
        !matches!(self, AttributeKind::Categorical)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeDef {
    pub name: String,
    pub kind: AttributeKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vocabulary: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 2]>,
}

impl AttributeDef {
    pub fn categorical(name: &str, vocabulary: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            kind: AttributeKind::Categorical,
            vocabulary: vocabulary.iter().map(|s| s.to_string()).collect(),
            unit: None,
            range: None,
        }
    }

    pub fn integer(name: &str, range: Option<[f64; 2]>) -> Self {
        Self {
            name: name.to_string(),
            kind: AttributeKind::NumericInteger,
            vocabulary: Vec::new(),
            unit: None,
            range,
        }
    }

    pub fn real(name: &str, range: Option<[f64; 2]>) -> Self {
        Self {
            kind: AttributeKind::NumericReal,
            ..Self::integer(name, range)
        }
    }

    pub fn vocabulary_index(&self, value: &str) -> Option<usize> {
        self.vocabulary.iter().position(|v| v == value)
    }

    /// Checks that a literal has the right type for this attribute. Text must
    /// be in the vocabulary; integers accept only integer values.
    pub fn accepts(&self, value: &Value) -> bool {
        match (self.kind, value) {
            (AttributeKind::Categorical, Value::Text(s)) => self.vocabulary_index(s).is_some(),
            (AttributeKind::NumericInteger, Value::Int(_)) => true,
            (AttributeKind::NumericReal, Value::Int(_)) => true,
            (AttributeKind::NumericReal, Value::Real(r)) => r.is_finite(),
            _ => false,
        }
    }

    fn validate(&self, path: &str) -> Result<(), CatalogError> {
        if !is_snake_case(&self.name) {
            return Err(invalid(
                path,
                format!("attribute name {:?} must be lowercase snake-case", self.name),
            ));
        }
        match self.kind {
            AttributeKind::Categorical => {
                if self.vocabulary.is_empty() {
                    return Err(invalid(path, format!("empty vocabulary: {}", self.name)));
                }
                let mut seen = BTreeSet::new();
                for v in &self.vocabulary {
                    if v.is_empty() {
                        return Err(invalid(path, format!("empty vocabulary entry: {}", self.name)));
                    }
                    if !seen.insert(v) {
                        return Err(invalid(
                            path,
                            format!("duplicate vocabulary entry {v:?}: {}", self.name),
                        ));
                    }
                }
                if self.range.is_some() || self.unit.is_some() {
                    return Err(invalid(
                        path,
                        format!("categorical attribute cannot carry range or unit: {}", self.name),
                    ));
                }
            }
            AttributeKind::NumericInteger | AttributeKind::NumericReal => {
                if !self.vocabulary.is_empty() {
                    return Err(invalid(
                        path,
                        format!("numeric attribute cannot carry a vocabulary: {}", self.name),
                    ));
                }
                if let Some([lo, hi]) = self.range {
                    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                        return Err(invalid(path, format!("invalid range: {}", self.name)));
                    }
                }
            }
        }
        Ok(())
    }
}

fn is_snake_case(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// The global schema. Attribute order is significant: it fixes the one-hot
/// column order on every node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalSchema {
    pub version: u32,
    pub attributes: Vec<AttributeDef>,
}

impl GlobalSchema {
    pub fn attribute(&self, name: &str) -> Option<&AttributeDef> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn validate(&self) -> Result<(), CatalogError> {
        let mut names = BTreeSet::new();
        for (i, attr) in self.attributes.iter().enumerate() {
            let path = format!("attributes[{i}]");
            attr.validate(&path)?;
            if !names.insert(attr.name.as_str()) {
                return Err(invalid(path, format!("duplicate attribute: {}", attr.name)));
            }
        }
        Ok(())
    }
}

/// Translation between global attributes and one node's local table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeMapping {
    pub node_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    pub table: String,
    /// global attribute -> local column
    pub columns: BTreeMap<String, String>,
    /// global attribute -> (global value -> local value), categorical only
    #[serde(default)]
    pub values: BTreeMap<String, BTreeMap<String, String>>,
}

impl NodeMapping {
    pub fn covered_attributes(&self) -> BTreeSet<&str> {
        self.columns.keys().map(String::as_str).collect()
    }

    pub fn covers(&self, attribute: &str) -> bool {
        self.columns.contains_key(attribute)
    }

    pub fn local_column(&self, attribute: &str) -> Option<&str> {
        self.columns.get(attribute).map(String::as_str)
    }

    pub fn attribute_for_column(&self, column: &str) -> Option<&str> {
        self.columns
            .iter()
            .find(|(_, c)| c.as_str() == column)
            .map(|(a, _)| a.as_str())
    }

    /// Global -> local value. Attributes without a value map are stored
    /// verbatim at the node.
    pub fn encode_value<'a>(&'a self, attribute: &str, global: &'a str) -> Option<&'a str> {
        match self.values.get(attribute) {
            Some(map) => map.get(global).map(String::as_str),
            None => Some(global),
        }
    }

    /// Local -> global value, the inverse of [`NodeMapping::encode_value`].
    pub fn decode_value<'a>(&'a self, attribute: &str, local: &'a str) -> Option<&'a str> {
        match self.values.get(attribute) {
            Some(map) => map
                .iter()
                .find(|(_, l)| l.as_str() == local)
                .map(|(g, _)| g.as_str()),
            None => Some(local),
        }
    }

    pub fn validate(&self, schema: &GlobalSchema, path: &str) -> Result<(), CatalogError> {
        if self.node_id.is_empty() {
            return Err(invalid(path, "empty node_id"));
        }
        let mut locals = BTreeSet::new();
        for (attr, column) in &self.columns {
            if schema.attribute(attr).is_none() {
                return Err(invalid(
                    format!("{path}.columns.{attr}"),
                    format!("unknown attribute: {attr}"),
                ));
            }
            if column.is_empty() || !locals.insert(column.as_str()) {
                return Err(invalid(
                    format!("{path}.columns.{attr}"),
                    format!("duplicate or empty local column: {column:?}"),
                ));
            }
        }
        for (attr, map) in &self.values {
            let vpath = format!("{path}.values.{attr}");
            let def = schema
                .attribute(attr)
                .ok_or_else(|| invalid(&vpath, format!("unknown attribute: {attr}")))?;
            if def.kind != AttributeKind::Categorical {
                return Err(invalid(&vpath, format!("value map on numeric attribute: {attr}")));
            }
            if !self.covers(attr) {
                return Err(invalid(&vpath, format!("value map on unmapped attribute: {attr}")));
            }
            let mut targets = BTreeSet::new();
            for (global, local) in map {
                if def.vocabulary_index(global).is_none() {
                    return Err(invalid(
                        &vpath,
                        format!("value {global:?} not in vocabulary: {attr}"),
                    ));
                }
                if local.is_empty() || !targets.insert(local.as_str()) {
                    return Err(invalid(&vpath, format!("non-bijective value map: {attr}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SavedResult {
    pub query: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
    pub digest: String,
}

/// Schema, mappings, and the append-only log of saved query results.
///
/// Everything except the result log is immutable after loading; a schema
/// change is a reload.
#[derive(Debug)]
pub struct CatalogStore {
    schema: GlobalSchema,
    mappings: BTreeMap<String, NodeMapping>,
    saved_results: Mutex<Vec<SavedResult>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogDocument {
    version: u32,
    attributes: Vec<AttributeDef>,
    #[serde(default)]
    nodes: Vec<NodeMapping>,
}

#[derive(Serialize)]
struct CatalogDocumentRef<'a> {
    version: u32,
    attributes: &'a [AttributeDef],
    nodes: Vec<&'a NodeMapping>,
}

impl CatalogStore {
    pub fn new(schema: GlobalSchema, nodes: Vec<NodeMapping>) -> Result<Self, CatalogError> {
        schema.validate()?;
        let mut mappings = BTreeMap::new();
        for (i, node) in nodes.into_iter().enumerate() {
            let path = format!("nodes[{i}]");
            node.validate(&schema, &path)?;
            if mappings.contains_key(&node.node_id) {
                return Err(invalid(path, format!("duplicate node_id: {}", node.node_id)));
            }
            mappings.insert(node.node_id.clone(), node);
        }
        Ok(Self {
            schema,
            mappings,
            saved_results: Mutex::new(Vec::new()),
        })
    }

    pub fn schema(&self) -> &GlobalSchema {
        &self.schema
    }

    pub fn mappings(&self) -> &BTreeMap<String, NodeMapping> {
        &self.mappings
    }

    pub fn mapping(&self, node_id: &str) -> Option<&NodeMapping> {
        self.mappings.get(node_id)
    }

    /// Serializes back to the catalog file format.
    pub fn to_json(&self) -> String {
        let doc = CatalogDocumentRef {
            version: self.schema.version,
            attributes: &self.schema.attributes,
            nodes: self.mappings.values().collect(),
        };
        serde_json::to_string_pretty(&doc).expect("catalog serializes")
    }

    /// Appends to the saved-results log. Timestamps never go backwards even
    /// if the wall clock does.
    pub fn record_result(&self, query: &str, digest: &str) -> Result<usize, CatalogError> {
        if digest.is_empty() {
            return Err(CatalogError::EmptyDigest);
        }
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        let mut log = self.saved_results.lock().unwrap_or_else(|e| e.into_inner());
        let timestamp_ms = log.last().map_or(now, |last| last.timestamp_ms.max(now));
        log.push(SavedResult {
            query: query.to_string(),
            timestamp_ms,
            digest: digest.to_string(),
        });
        Ok(log.len())
    }

    pub fn saved_results(&self) -> Vec<SavedResult> {
        self.saved_results
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }
}

/// Parses and validates a catalog document.
pub fn load_catalog(document: &str) -> Result<CatalogStore, CatalogError> {
    let doc: CatalogDocument =
        serde_json::from_str(document).map_err(|e| CatalogError::Parse(e.to_string()))?;
    CatalogStore::new(
        GlobalSchema {
            version: doc.version,
            attributes: doc.attributes,
        },
        doc.nodes,
    )
}

/// Translates a global filter into the node's local columns and encodings.
///
/// A categorical value the node has no encoding for cannot occur in its data:
/// `=` becomes a term that matches nothing and `!=` is dropped as always true.
pub fn to_local(filter: &[Predicate], mapping: &NodeMapping) -> Result<Vec<LocalTerm>, CatalogError> {
    let mut terms = Vec::with_capacity(filter.len());
    for p in filter {
        let column = mapping
            .local_column(&p.attribute)
            .ok_or_else(|| CatalogError::Uncovered {
                node: mapping.node_id.clone(),
                attribute: p.attribute.clone(),
            })?;
        let value = match &p.value {
            Value::Text(global) => match mapping.encode_value(&p.attribute, global) {
                Some(local) => Value::text(local),
                None => {
                    if p.op == Comparator::Eq {
                        terms.push(LocalTerm::Never);
                    }
                    continue;
                }
            },
            numeric => numeric.clone(),
        };
        terms.push(LocalTerm::Compare {
            column: column.to_string(),
            op: p.op,
            value,
        });
    }
    Ok(terms)
}

/// Renames local columns to global attributes and decodes categorical values.
pub fn to_global(
    rows: &[Row],
    mapping: &NodeMapping,
    schema: &GlobalSchema,
) -> Result<Vec<Row>, CatalogError> {
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let mut global = Row::new();
        for (column, cell) in row {
            let attribute = mapping.attribute_for_column(column).ok_or_else(|| {
                CatalogError::UnmappedColumn {
                    node: mapping.node_id.clone(),
                    column: column.clone(),
                }
            })?;
            let value = decode_cell(mapping, schema, attribute, column, cell)?;
            global.insert(attribute.to_string(), value);
        }
        out.push(global);
    }
    Ok(out)
}

/// Decodes one local cell into the global vocabulary for `attribute`.
pub fn decode_cell(
    mapping: &NodeMapping,
    schema: &GlobalSchema,
    attribute: &str,
    column: &str,
    cell: &Value,
) -> Result<Value, CatalogError> {
    let unknown = || CatalogError::UnknownLocalValue {
        node: mapping.node_id.clone(),
        column: column.to_string(),
        value: cell.to_string(),
    };
    let def = schema.attribute(attribute).ok_or_else(unknown)?;
    match (def.kind, cell) {
        (AttributeKind::Categorical, Value::Text(local)) => {
            let global = mapping.decode_value(attribute, local).ok_or_else(unknown)?;
            if def.vocabulary_index(global).is_none() {
                return Err(unknown());
            }
            Ok(Value::text(global))
        }
        (AttributeKind::NumericInteger, Value::Int(i)) => Ok(Value::Int(*i)),
        (AttributeKind::NumericReal, v) if v.is_numeric() => {
            Ok(Value::Real(v.as_f64().unwrap_or(f64::NAN)))
        }
        _ => Err(unknown()),
    }
}
