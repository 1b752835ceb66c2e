//! Coordinator HTTP API with bearer-token roles.
//!
//! | route                          | access  |
//! |--------------------------------|---------|
//! | `GET /health`                  | public  |
//! | `GET /schema`                  | doctor  |
//! | `GET /patterns`                | doctor  |
//! | `POST /query`                  | doctor  |
//! | `GET /models/{pattern}/metrics`| doctor  |
//! | `POST /train`                  | admin   |
//! | `GET /nodes`                   | admin   |
//! | `POST /nodes/cache`            | admin   |
//!
//! Admins may call everything. Errors are `{"code", "message"}` with 401 for
//! a missing or unknown token and 403 for a role that lacks access.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use fedlake_core::datanode::CacheSettings;
use fedlake_core::federation::{
    AggregatedMetrics, AggregatedResult, NodeCacheStatus, NodeHealth, RoundRecord, SkippedNode,
};
use fedlake_core::mlcore::{MetricsReport, ModelKind, TrainConfig};
use fedlake_core::{AggregationMode, Coordinator, FederationError, GlobalModel, GlobalSchema, Pattern, TrainingJob};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::auth::{bearer, Access, Role, TokenTable};
use crate::error::{blocking, ApiError};

#[derive(Clone)]
pub struct GatewayState {
    pub coordinator: Arc<Coordinator>,
    pub tokens: Arc<TokenTable>,
}

impl GatewayState {
    pub fn new(coordinator: Coordinator, tokens: TokenTable) -> Self {
        Self {
            coordinator: Arc::new(coordinator),
            tokens: Arc::new(tokens),
        }
    }

    fn authorize(&self, headers: &HeaderMap, access: Access) -> Result<Option<Role>, ApiError> {
        if access == Access::Public {
            return Ok(None);
        }
        let role = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(bearer)
            .and_then(|t| self.tokens.role(t))
            .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or unknown bearer token"))?;
        if !access.permits(role) {
            return Err(ApiError::new(
                StatusCode::FORBIDDEN,
                "forbidden",
                format!("role {role:?} may not call this endpoint"),
            ));
        }
        Ok(Some(role))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRequest {
    pub pattern: String,
    #[serde(default)]
    pub rounds: Option<usize>,
    #[serde(default)]
    pub train_config: Option<TrainConfig>,
    #[serde(default)]
    pub mode: Option<AggregationMode>,
    #[serde(default)]
    pub cache: Option<CacheSettings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheBuildRequest {
    pub pattern: String,
    #[serde(default)]
    pub settings: Option<CacheSettings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternInfo {
    pub pattern: String,
    pub name: String,
    pub kind: String,
    pub example: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    /// Attributes the console must collect before submitting.
    pub required: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub pattern: Pattern,
    pub model: ModelKind,
    pub mode: AggregationMode,
    pub rounds: usize,
    pub labels: Vec<String>,
    pub feature_width: usize,
    pub fingerprint: String,
    pub participants: Vec<String>,
    pub excluded: Vec<SkippedNode>,
    pub aggregated: Option<AggregatedMetrics>,
    pub pooled: Option<MetricsReport>,
    pub stopped_early: bool,
}

impl From<&GlobalModel> for TrainSummary {
    fn from(m: &GlobalModel) -> Self {
        Self {
            pattern: m.pattern,
            model: m.model,
            mode: m.mode,
            rounds: m.round,
            labels: m.labels.clone(),
            feature_width: m.feature_width,
            fingerprint: m.fingerprint.clone(),
            participants: m.node_metrics.keys().cloned().collect(),
            excluded: m.excluded.clone(),
            aggregated: m.aggregated.clone(),
            pooled: m.pooled.clone(),
            stopped_early: m.stopped_early,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub pattern: Pattern,
    pub model: ModelKind,
    pub round: usize,
    pub aggregated: Option<AggregatedMetrics>,
    pub pooled: Option<MetricsReport>,
    pub node_metrics: BTreeMap<String, MetricsReport>,
    pub history: Vec<RoundRecord>,
}

impl From<&GlobalModel> for ModelMetrics {
    fn from(m: &GlobalModel) -> Self {
        Self {
            pattern: m.pattern,
            model: m.model,
            round: m.round,
            aggregated: m.aggregated.clone(),
            pooled: m.pooled.clone(),
            node_metrics: m.node_metrics.clone(),
            history: m.history.clone(),
        }
    }
}

pub fn pattern_catalog() -> Vec<PatternInfo> {
    Pattern::ALL
        .into_iter()
        .map(|p| {
            let (kind, example, required) = match p {
                Pattern::Retrieve => ("retrieval", "SELECT WHERE cancer_type = 'melanoma'".to_string(), vec![]),
                Pattern::TreeInsight => (
                    "insight",
                    "TREE treatment BY cancer_type, tnm_stage".to_string(),
                    vec![],
                ),
                p => {
                    let features = p.feature_attributes();
                    let example = format!(
                        "PREDICT {} WHERE {}",
                        p.predict_keyword().unwrap_or_default(),
                        features.iter().map(|f| format!("{f} = ...")).collect::<Vec<_>>().join(" AND ")
                    );
                    ("prediction", example, features.iter().map(|f| f.to_string()).collect())
                }
            };
            PatternInfo {
                pattern: p.slug().into(),
                name: p.ir_name().into(),
                kind: kind.into(),
                example,
                target: p.target_attribute().map(str::to_string),
                required,
            }
        })
        .collect()
}

fn json_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

fn pattern(slug: &str) -> Result<Pattern, ApiError> {
    Pattern::from_slug(slug).ok_or_else(|| ApiError::bad_request(format!("unknown pattern {slug}")))
}

pub fn router(state: GatewayState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/schema", get(schema))
        .route("/patterns", get(patterns))
        .route("/query", post(query))
        .route("/train", post(train))
        .route("/models/{pattern}/metrics", get(model_metrics))
        .route("/nodes", get(nodes))
        .route("/nodes/cache", post(build_caches))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(state)
}

async fn health(State(s): State<GatewayState>) -> Json<serde_json::Value> {
    Json(serde_json::json!({
        "status": "ok",
        "nodes": s.coordinator.catalog().mappings().len(),
    }))
}

async fn schema(State(s): State<GatewayState>, headers: HeaderMap) -> Result<Json<GlobalSchema>, ApiError> {
    s.authorize(&headers, Access::Clinical)?;
    Ok(Json(s.coordinator.catalog().schema().clone()))
}

async fn patterns(State(s): State<GatewayState>, headers: HeaderMap) -> Result<Json<Vec<PatternInfo>>, ApiError> {
    s.authorize(&headers, Access::Clinical)?;
    Ok(Json(pattern_catalog()))
}

async fn query(
    State(s): State<GatewayState>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<AggregatedResult>, ApiError> {
    s.authorize(&headers, Access::Clinical)?;
    let req: QueryRequest = json_body(&body)?;
    let coord = s.coordinator.clone();
    blocking(move || coord.run_federated_query(&req.text)).await.map(Json)
}

async fn train(
    State(s): State<GatewayState>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<TrainSummary>, ApiError> {
    s.authorize(&headers, Access::AdminOnly)?;
    let req: TrainRequest = json_body(&body)?;
    let p = pattern(&req.pattern)?;
    let job = TrainingJob {
        rounds: req.rounds,
        mode: req.mode,
        train_config: req.train_config.unwrap_or_default(),
        cache: req.cache.unwrap_or_default(),
    };
    let coord = s.coordinator.clone();
    let model = blocking(move || coord.run_federated_training(p, &job)).await?;
    Ok(Json(TrainSummary::from(model.as_ref())))
}

async fn model_metrics(
    State(s): State<GatewayState>,
    headers: HeaderMap,
    Path(slug): Path<String>,
) -> Result<Json<ModelMetrics>, ApiError> {
    s.authorize(&headers, Access::Clinical)?;
    let p = pattern(&slug)?;
    let model = s.coordinator.model(p).ok_or(FederationError::NoModel(p))?;
    Ok(Json(ModelMetrics::from(model.as_ref())))
}

async fn nodes(State(s): State<GatewayState>, headers: HeaderMap) -> Result<Json<Vec<NodeHealth>>, ApiError> {
    s.authorize(&headers, Access::AdminOnly)?;
    let coord = s.coordinator.clone();
    blocking(move || Ok::<_, FederationError>(coord.node_health())).await.map(Json)
}

async fn build_caches(
    State(s): State<GatewayState>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<Vec<NodeCacheStatus>>, ApiError> {
    s.authorize(&headers, Access::AdminOnly)?;
    let req: CacheBuildRequest = json_body(&body)?;
    let p = pattern(&req.pattern)?;
    let settings = req.settings.unwrap_or_default();
    let coord = s.coordinator.clone();
    blocking(move || coord.build_caches(p, &settings)).await.map(Json)
}
