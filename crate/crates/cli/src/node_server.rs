//! HTTP front of a single data node. Every route except `/health` requires
//! the shared federation token in `X-Fed-Token` when one is configured.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use fedlake_core::datanode::{
    CacheRequest, CacheSummary, EvaluateRequest, ModelLogEntry, NodeMetadata, RoundRequest, RoundResponse,
    TreeRequest,
};
use fedlake_core::mlcore::{DecisionTree, MetricsReport};
use fedlake_core::queryir::LocalSubQuery;
use fedlake_core::{DataNode, NodeError, Pattern, SubQueryResult};
use serde_json::{json, Value};

use crate::error::{blocking, ApiError};

pub const TOKEN_HEADER: &str = "x-fed-token";

#[derive(Clone)]
pub struct NodeState {
    pub node: Arc<DataNode>,
    pub token: Option<String>,
}

impl NodeState {
    fn check(&self, headers: &HeaderMap) -> Result<(), ApiError> {
        let Some(expected) = &self.token else {
            return Ok(());
        };
        match headers.get(TOKEN_HEADER).and_then(|v| v.to_str().ok()) {
            Some(t) if t == expected => Ok(()),
            _ => Err(ApiError::new(
                StatusCode::UNAUTHORIZED,
                "unauthorized",
                "missing or invalid federation token",
            )),
        }
    }
}

fn pattern(slug: &str) -> Result<Pattern, ApiError> {
    Pattern::from_slug(slug).ok_or_else(|| ApiError::bad_request(format!("unknown pattern {slug}")))
}

pub fn router(state: NodeState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/metadata", get(metadata))
        .route("/subquery", post(subquery))
        .route("/train/cache", post(build_cache))
        .route("/train/round", post(train_round))
        .route("/train/tree", post(train_tree))
        .route("/evaluate", post(evaluate))
        .route("/metrics/{pattern}", get(metrics))
        .route("/modellog/{pattern}", get(model_log))
        .with_state(state)
}

async fn health(State(s): State<NodeState>) -> Json<Value> {
    Json(json!({"status": "ok", "node_id": s.node.node_id()}))
}

async fn metadata(State(s): State<NodeState>, headers: HeaderMap) -> Result<Json<NodeMetadata>, ApiError> {
    s.check(&headers)?;
    let node = s.node.clone();
    blocking(move || node.metadata()).await.map(Json)
}

async fn subquery(
    State(s): State<NodeState>,
    headers: HeaderMap,
    Json(req): Json<LocalSubQuery>,
) -> Result<Json<SubQueryResult>, ApiError> {
    s.check(&headers)?;
    let node = s.node.clone();
    blocking(move || node.execute_subquery(&req)).await.map(Json)
}

async fn build_cache(
    State(s): State<NodeState>,
    headers: HeaderMap,
    Json(req): Json<CacheRequest>,
) -> Result<Json<CacheSummary>, ApiError> {
    s.check(&headers)?;
    let node = s.node.clone();
    blocking(move || node.build_cache(&req)).await.map(Json)
}

async fn train_round(
    State(s): State<NodeState>,
    headers: HeaderMap,
    Json(req): Json<RoundRequest>,
) -> Result<Json<RoundResponse>, ApiError> {
    s.check(&headers)?;
    let node = s.node.clone();
    blocking(move || node.train_round(&req)).await.map(Json)
}

async fn train_tree(
    State(s): State<NodeState>,
    headers: HeaderMap,
    Json(req): Json<TreeRequest>,
) -> Result<Json<DecisionTree>, ApiError> {
    s.check(&headers)?;
    let node = s.node.clone();
    blocking(move || node.train_tree(&req)).await.map(Json)
}

async fn evaluate(
    State(s): State<NodeState>,
    headers: HeaderMap,
    Json(req): Json<EvaluateRequest>,
) -> Result<Json<MetricsReport>, ApiError> {
    s.check(&headers)?;
    let node = s.node.clone();
    blocking(move || node.evaluate(&req)).await.map(Json)
}

async fn metrics(
    State(s): State<NodeState>,
    headers: HeaderMap,
    Path(slug): Path<String>,
) -> Result<Json<MetricsReport>, ApiError> {
    s.check(&headers)?;
    let p = pattern(&slug)?;
    let node = s.node.clone();
    blocking(move || node.latest_metrics(p)).await.map(Json)
}

async fn model_log(
    State(s): State<NodeState>,
    headers: HeaderMap,
    Path(slug): Path<String>,
) -> Result<Json<Vec<ModelLogEntry>>, ApiError> {
    s.check(&headers)?;
    let p = pattern(&slug)?;
    let node = s.node.clone();
    blocking(move || Ok::<_, NodeError>(node.model_log(p))).await.map(Json)
}
