//! The `{code, message}` error body shared by the gateway and node server.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use fedlake_core::{FederationError, NodeError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.into(),
                message: message.into(),
            },
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<FederationError> for ApiError {
    fn from(e: FederationError) -> Self {
        let status = match &e {
            FederationError::NoModel(_) => StatusCode::NOT_FOUND,
            FederationError::Busy(_) => StatusCode::CONFLICT,
            FederationError::Unavailable(_) | FederationError::TooFewParticipants { .. } => {
                StatusCode::SERVICE_UNAVAILABLE
            }
            e if e.is_user_error() => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl From<NodeError> for ApiError {
    fn from(e: NodeError) -> Self {
        let status = match &e {
            NodeError::NotIngested => StatusCode::SERVICE_UNAVAILABLE,
            NodeError::Busy(_) | NodeError::NoCache(_) | NodeError::FingerprintMismatch { .. } => StatusCode::CONFLICT,
            NodeError::NoMetrics(_) => StatusCode::NOT_FOUND,
            NodeError::UnknownTable(_)
            | NodeError::UnknownColumn(_)
            | NodeError::KindMismatch { .. }
            | NodeError::NotPredictive(_)
            | NodeError::Unmapped(_)
            | NodeError::TooFewClasses { .. }
            | NodeError::EmptySplit(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

/// Runs blocking coordinator or node work off the async executor.
pub async fn blocking<T, E, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, E> + Send + 'static,
    T: Send + 'static,
    E: Into<ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker panicked: {e}")))?
        .map_err(Into::into)
}
