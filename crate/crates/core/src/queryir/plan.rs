use serde::{Deserialize, Serialize};

use crate::catalog::{to_local, CatalogStore};

use super::{AnalyticalQuery, LocalSubQuery, Pattern, QueryError, SubQueryMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Aggregation {
    RowUnion,
    CountTreeMerge,
    ModelInference,
}

impl Aggregation {
    pub fn for_pattern(pattern: Pattern) -> Self {
        match pattern {
            Pattern::Retrieve => Aggregation::RowUnion,
            Pattern::TreeInsight => Aggregation::CountTreeMerge,
            _ => Aggregation::ModelInference,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryPlan {
    pub query: AnalyticalQuery,
    /// Nodes covering every referenced attribute, sorted by node id.
    pub participants: Vec<String>,
    /// One sub-query per participant. Empty for model inference, which runs
    /// at the coordinator and never ships the patient profile to nodes.
    pub subqueries: Vec<(String, LocalSubQuery)>,
    pub aggregation: Aggregation,
}

/// Decomposes a query into node-local sub-queries. Pure in `(query, catalog)`.
pub fn plan(query: &AnalyticalQuery, catalog: &CatalogStore) -> Result<QueryPlan, QueryError> {
    let referenced = query.referenced_attributes();
    let mappings = catalog.mappings();
    if mappings.is_empty() {
        return Err(QueryError::Unanswerable("no data nodes are registered".into()));
    }
    if let Some(missing) = referenced
        .iter()
        .find(|a| !mappings.values().any(|m| m.covers(a)))
    {
        return Err(QueryError::Unanswerable(format!(
            "attribute {missing} not available at any node"
        )));
    }

    // BTreeMap iteration gives node_id order.
    let covering: Vec<_> = mappings
        .values()
        .filter(|m| referenced.iter().all(|a| m.covers(a)))
        .collect();
    if covering.is_empty() {
        return Err(QueryError::Unanswerable(format!(
            "no single node covers all of [{}]",
            referenced.join(", ")
        )));
    }

    let aggregation = Aggregation::for_pattern(query.pattern);
    let mut subqueries = Vec::new();
    if aggregation != Aggregation::ModelInference {
        for mapping in &covering {
            let filter = to_local(&query.filter, mapping)
                .map_err(|e| QueryError::Unanswerable(e.to_string()))?;
            let local = |a: &str| mapping.local_column(a).unwrap_or_default().to_string();
            let (columns, mode) = match query.pattern {
                Pattern::TreeInsight => {
                    let mut group: Vec<String> =
                        query.group_by.iter().map(|g| local(g)).collect();
                    group.push(local(query.target.as_deref().unwrap_or_default()));
                    (Vec::new(), SubQueryMode::CountBy { columns: group })
                }
                _ => {
                    let columns = catalog
                        .schema()
                        .attributes
                        .iter()
                        .filter_map(|a| mapping.local_column(&a.name).map(str::to_string))
                        .collect();
                    (columns, SubQueryMode::SelectRows)
                }
            };
            subqueries.push((
                mapping.node_id.clone(),
                LocalSubQuery {
                    table: mapping.table.clone(),
                    columns,
                    filter,
                    mode,
                },
            ));
        }
    }

    Ok(QueryPlan {
        query: query.clone(),
        participants: covering.iter().map(|m| m.node_id.clone()).collect(),
        subqueries,
        aggregation,
    })
}
