//! [`NodeClient`] over HTTP, talking to a [`node_server`](crate::node_server).

use std::time::Duration;

use fedlake_core::datanode::{
    CacheRequest, CacheSummary, EvaluateRequest, ModelLogEntry, NodeMetadata, RoundRequest, RoundResponse,
    TreeRequest,
};
use fedlake_core::mlcore::{DecisionTree, MetricsReport};
use fedlake_core::queryir::LocalSubQuery;
use fedlake_core::{NodeClient, NodeError, Pattern, SubQueryResult};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::ErrorBody;
use crate::node_server::TOKEN_HEADER;

const MAX_BODY: u64 = 512 * 1024 * 1024;

pub struct HttpNode {
    node_id: String,
    base_url: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpNode {
    pub fn new(node_id: &str, base_url: &str, token: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            node_id: node_id.to_string(),
            base_url: base_url.trim_end_matches('/').to_string(),
            token,
            agent,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base_url)
    }

    fn finish<T: DeserializeOwned>(&self, result: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<T, NodeError> {
        let mut resp = result.map_err(|e| match e {
            ureq::Error::Timeout(_) => NodeError::Timeout,
            other => NodeError::Transport(format!("{}: {other}", self.node_id)),
        })?;
        let status = resp.status();
        let body = resp.body_mut().with_config().limit(MAX_BODY);
        if status.is_success() {
            body.read_json::<T>()
                .map_err(|e| NodeError::Transport(format!("{}: bad response body: {e}", self.node_id)))
        } else {
            let err = body.read_json::<ErrorBody>().unwrap_or_else(|_| ErrorBody {
                code: "http".into(),
                message: format!("HTTP {status}"),
            });
            Err(NodeError::Remote {
                code: err.code,
                message: err.message,
            })
        }
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, NodeError> {
        let mut req = self.agent.get(self.url(path));
        if let Some(t) = &self.token {
            req = req.header(TOKEN_HEADER, t);
        }
        self.finish(req.call())
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, NodeError> {
        let mut req = self.agent.post(self.url(path));
        if let Some(t) = &self.token {
            req = req.header(TOKEN_HEADER, t);
        }
        self.finish(req.send_json(body))
    }
}

impl NodeClient for HttpNode {
    fn node_id(&self) -> &str {
        &self.node_id
    }
    fn metadata(&self) -> Result<NodeMetadata, NodeError> {
        self.get("/metadata")
    }
    fn subquery(&self, sq: &LocalSubQuery) -> Result<SubQueryResult, NodeError> {
        self.post("/subquery", sq)
    }
    fn build_cache(&self, req: &CacheRequest) -> Result<CacheSummary, NodeError> {
        self.post("/train/cache", req)
    }
    fn train_round(&self, req: &RoundRequest) -> Result<RoundResponse, NodeError> {
        self.post("/train/round", req)
    }
    fn evaluate(&self, req: &EvaluateRequest) -> Result<MetricsReport, NodeError> {
        self.post("/evaluate", req)
    }
    fn train_tree(&self, req: &TreeRequest) -> Result<DecisionTree, NodeError> {
        self.post("/train/tree", req)
    }
    fn metrics(&self, pattern: Pattern) -> Result<MetricsReport, NodeError> {
        self.get(&format!("/metrics/{}", pattern.slug()))
    }
    fn model_log(&self, pattern: Pattern) -> Result<Vec<ModelLogEntry>, NodeError> {
        self.get(&format!("/modellog/{}", pattern.slug()))
    }
}
