//! Analytical query language, its IR, and per-node decomposition.
//!
//! ```text
//! query   := SELECT [WHERE conj]
//!          | TREE ident BY ident {"," ident} [WHERE conj]
//!          | PREDICT (treatment | ae_caused | ae_risk | ae_type) [WHERE conj]
//! conj    := term {AND term}
//! term    := ident ("=" | "!=" | "<" | "<=" | ">" | ">=") literal
//! literal := 'single-quoted' | integer | decimal
//! ```
//!
//! Keywords are case-insensitive, identifiers and string literals are not.

mod lexer;
mod parser;
mod plan;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::value::{Comparator, Predicate, Value};

pub use parser::parse;
pub use plan::{plan, Aggregation, QueryPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Pattern {
    Retrieve,
    TreeInsight,
    PredictTreatment,
    AeCausation,
    AeRisk,
    AeType,
}

impl Pattern {
    pub const ALL: [Pattern; 6] = [
        Pattern::Retrieve,
        Pattern::TreeInsight,
        Pattern::PredictTreatment,
        Pattern::AeCausation,
        Pattern::AeRisk,
        Pattern::AeType,
    ];

    pub const PREDICTIONS: [Pattern; 4] = [
        Pattern::PredictTreatment,
        Pattern::AeCausation,
        Pattern::AeRisk,
        Pattern::AeType,
    ];

    pub fn is_prediction(self) -> bool {
        Pattern::PREDICTIONS.contains(&self)
    }

    /// The word following `PREDICT` in the query language.
    pub fn predict_keyword(self) -> Option<&'static str> {
        match self {
            Pattern::PredictTreatment => Some("treatment"),
            Pattern::AeCausation => Some("ae_caused"),
            Pattern::AeRisk => Some("ae_risk"),
            Pattern::AeType => Some("ae_type"),
            _ => None,
        }
    }

    pub fn from_predict_keyword(word: &str) -> Option<Pattern> {
        Pattern::PREDICTIONS
            .into_iter()
            .find(|p| p.predict_keyword() == Some(word))
    }

    /// Short name used in URLs and on the command line.
    pub fn slug(self) -> &'static str {
        match self {
            Pattern::Retrieve => "retrieve",
            Pattern::TreeInsight => "tree",
            Pattern::PredictTreatment => "treatment",
            Pattern::AeCausation => "ae_caused",
            Pattern::AeRisk => "ae_risk",
            Pattern::AeType => "ae_type",
        }
    }

    /// Name used in the serialized IR.
    pub fn ir_name(self) -> &'static str {
        match self {
            Pattern::Retrieve => "RETRIEVE",
            Pattern::TreeInsight => "TREE_INSIGHT",
            Pattern::PredictTreatment => "PREDICT_TREATMENT",
            Pattern::AeCausation => "AE_CAUSATION",
            Pattern::AeRisk => "AE_RISK",
            Pattern::AeType => "AE_TYPE",
        }
    }

    /// Accepts either the slug or the IR name, case-insensitively.
    pub fn from_slug(s: &str) -> Option<Pattern> {
        Pattern::ALL
            .into_iter()
            .find(|p| p.slug().eq_ignore_ascii_case(s) || p.ir_name().eq_ignore_ascii_case(s))
    }

    /// Attribute predicted by a prediction pattern.
    pub fn target_attribute(self) -> Option<&'static str> {
        match self {
            Pattern::PredictTreatment => Some("treatment"),
            Pattern::AeCausation => Some("ae_caused_by_treatment"),
            Pattern::AeRisk => Some("ae_occurred"),
            Pattern::AeType => Some("ae_type"),
            _ => None,
        }
    }

    /// Input attributes of a prediction pattern.
    pub fn feature_attributes(self) -> &'static [&'static str] {
        const PATIENT: &[&str] = &["sex", "age", "cancer_type", "tnm_stage"];
        const AE: &[&str] = &["sex", "age", "cancer_type", "tnm_stage", "treatment", "frequency"];
        match self {
            Pattern::PredictTreatment => PATIENT,
            Pattern::AeCausation => &["treatment", "frequency", "ae_type", "days_since_start"],
            Pattern::AeRisk | Pattern::AeType => AE,
            _ => &[],
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyticalQuery {
    pub pattern: Pattern,
    pub filter: Vec<Predicate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub group_by: Vec<String>,
}

impl AnalyticalQuery {
    /// Every attribute the query touches, in first-mention order.
    pub fn referenced_attributes(&self) -> Vec<&str> {
        let mentioned = self
            .filter
            .iter()
            .map(|p| p.attribute.as_str())
            .chain(self.target.as_deref())
            .chain(self.group_by.iter().map(String::as_str));
        let mut out: Vec<&str> = Vec::new();
        for a in mentioned {
            if !out.contains(&a) {
                out.push(a);
            }
        }
        out
    }

    /// Canonical single-line text; `parse(render(q)) == q`.
    pub fn render(&self) -> String {
        let mut out = match self.pattern {
            Pattern::Retrieve => "SELECT".to_string(),
            Pattern::TreeInsight => format!(
                "TREE {} BY {}",
                self.target.as_deref().unwrap_or(""),
                self.group_by.join(", ")
            ),
            p => format!("PREDICT {}", p.predict_keyword().unwrap_or("")),
        };
        if !self.filter.is_empty() {
            out.push_str(" WHERE ");
            let terms: Vec<String> = self
                .filter
                .iter()
                .map(|p| format!("{} {} {}", p.attribute, p.op, render_literal(&p.value)))
                .collect();
            out.push_str(&terms.join(" AND "));
        }
        out
    }
}

impl fmt::Display for AnalyticalQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

pub fn render(query: &AnalyticalQuery) -> String {
    query.render()
}

fn render_literal(v: &Value) -> String {
    match v {
        Value::Text(s) => format!("'{}'", s.replace('\'', "''")),
        Value::Int(i) => i.to_string(),
        // Display never uses exponent notation and is the shortest
        // representation that reparses to the same f64.
        Value::Real(r) => r.to_string(),
    }
}

/// One conjunct of a node-local filter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LocalTerm {
    Compare {
        column: String,
        op: Comparator,
        value: Value,
    },
    /// A value the node cannot hold; matches no row.
    Never,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SubQueryMode {
    SelectRows,
    CountBy { columns: Vec<String> },
}

/// A sub-query in one node's own column names and encodings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalSubQuery {
    pub table: String,
    /// Columns returned by `SELECT_ROWS`; the node's mapped columns.
    #[serde(default)]
    pub columns: Vec<String>,
    pub filter: Vec<LocalTerm>,
    pub mode: SubQueryMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryErrorKind {
    Syntax,
    UnknownAttribute,
    TypeMismatch,
    UnknownPattern,
    Unsupported,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("{kind:?} at line {line}, column {column}: {message}")]
    Parse {
        kind: QueryErrorKind,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("query unanswerable: {0}")]
    Unanswerable(String),
}

impl QueryError {
    pub fn kind(&self) -> Option<QueryErrorKind> {
        match self {
            QueryError::Parse { kind, .. } => Some(*kind),
            QueryError::Unanswerable(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predict_keywords_round_trip() {
        for p in Pattern::PREDICTIONS {
            assert_eq!(Pattern::from_predict_keyword(p.predict_keyword().unwrap()), Some(p));
        }
        assert_eq!(Pattern::from_predict_keyword("retrieve"), None);
    }

    #[test]
    fn slugs_parse_both_forms() {
        assert_eq!(Pattern::from_slug("ae_type"), Some(Pattern::AeType));
        assert_eq!(Pattern::from_slug("AE_TYPE"), Some(Pattern::AeType));
        assert_eq!(Pattern::from_slug("PREDICT_TREATMENT"), Some(Pattern::PredictTreatment));
        assert_eq!(Pattern::from_slug("nope"), None);
    }

    #[test]
    fn render_shapes() {
        let q = AnalyticalQuery {
            pattern: Pattern::Retrieve,
            filter: vec![],
            target: None,
            group_by: vec![],
        };
        assert_eq!(q.render(), "SELECT");
        let q = AnalyticalQuery {
            pattern: Pattern::TreeInsight,
            filter: vec![Predicate::new("age", Comparator::Gt, Value::Int(18))],
            target: Some("treatment".into()),
            group_by: vec!["cancer_type".into(), "tnm_stage".into()],
        };
        assert_eq!(q.render(), "TREE treatment BY cancer_type, tnm_stage WHERE age > 18");
    }

    #[test]
    fn literal_quotes_are_doubled() {
        assert_eq!(render_literal(&Value::text("o'neil")), "'o''neil'");
        assert_eq!(render_literal(&Value::Real(0.1)), "0.1");
        assert_eq!(render_literal(&Value::Real(1e21)), "1000000000000000000000");
    }
}
