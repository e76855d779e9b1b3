//! Typed client for the trial-session HTTP API.

use crm_api::{
    ApiError, AuditEntry, CloseRequest, EstimatesView, OutcomeInput, OutcomeResponse, PartitionView,
    RecommendationView, SessionSummary, SessionView, WhatIfRequest, WhatIfResponse,
};
use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use uuid::Uuid;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    /// The service answered with an error body.
    #[error("{status}: {}{}", .body.message, .body.field.as_deref().map(|f| format!(" (field {f})")).unwrap_or_default())]
    Api { status: StatusCode, body: ApiError },
    #[error("unexpected {status} response: {text}")]
    Unexpected { status: StatusCode, text: String },
}

impl ClientError {
    /// Machine-readable error code from the service, if any.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { body, .. } => Some(&body.error),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct CrmClient {
    base: String,
    http: reqwest::Client,
}

impl CrmClient {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self::with_client(base, reqwest::Client::new())
    }

    pub fn with_client(base: impl Into<String>, http: reqwest::Client) -> Self {
        let base = base.into().trim_end_matches('/').to_string();
        CrmClient { base, http }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub async fn health(&self) -> Result<()> {
        let resp = self.http.get(format!("{}/health", self.base)).send().await?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(error_from(resp).await)
        }
    }

    /// Creates a session from a design document.
    pub async fn create_session<D: Serialize + ?Sized>(&self, design: &D) -> Result<SessionView> {
        self.call(Method::POST, "/sessions", Some(design)).await
    }

    pub async fn list_sessions(&self) -> Result<Vec<SessionSummary>> {
        self.call::<(), _>(Method::GET, "/sessions", None).await
    }

    pub async fn session(&self, id: Uuid) -> Result<SessionView> {
        self.call::<(), _>(Method::GET, &format!("/sessions/{id}"), None).await
    }

    pub async fn record_outcome(&self, id: Uuid, outcome: &OutcomeInput) -> Result<OutcomeResponse> {
        self.call(Method::POST, &format!("/sessions/{id}/outcomes"), Some(outcome)).await
    }

    pub async fn what_if(&self, id: Uuid, req: &WhatIfRequest) -> Result<WhatIfResponse> {
        self.call(Method::POST, &format!("/sessions/{id}/what-if"), Some(req)).await
    }

    pub async fn estimates(&self, id: Uuid) -> Result<EstimatesView> {
        self.call::<(), _>(Method::GET, &format!("/sessions/{id}/estimates"), None).await
    }

    /// Standing recommendation, or the one for a patient of `group` in
    /// two-group designs.
    pub async fn recommendation(&self, id: Uuid, group: Option<u8>) -> Result<RecommendationView> {
        let path = match group {
            Some(g) => format!("/sessions/{id}/recommendation?group={g}"),
            None => format!("/sessions/{id}/recommendation"),
        };
        self.call::<(), _>(Method::GET, &path, None).await
    }

    pub async fn partition(&self, id: Uuid) -> Result<PartitionView> {
        self.call::<(), _>(Method::GET, &format!("/sessions/{id}/partition"), None).await
    }

    pub async fn audit(&self, id: Uuid) -> Result<Vec<AuditEntry>> {
        self.call::<(), _>(Method::GET, &format!("/sessions/{id}/audit"), None).await
    }

    pub async fn close(&self, id: Uuid, reason: Option<String>) -> Result<SessionView> {
        let body = CloseRequest { reason };
        self.call(Method::POST, &format!("/sessions/{id}/close"), Some(&body)).await
    }

    async fn call<B, T>(&self, method: Method, path: &str, body: Option<&B>) -> Result<T>
    where
        B: Serialize + ?Sized,
        T: DeserializeOwned,
    {
        let mut req = self.http.request(method, format!("{}{path}", self.base));
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req.send().await?;
        if !resp.status().is_success() {
            return Err(error_from(resp).await);
        }
        let status = resp.status();
        let bytes = resp.bytes().await?;
        serde_json::from_slice(&bytes).map_err(|e| ClientError::Unexpected {
            status,
            text: format!("{e}: {}", String::from_utf8_lossy(&bytes)),
        })
    }
}

async fn error_from(resp: reqwest::Response) -> ClientError {
    let status = resp.status();
    match resp.bytes().await {
        Ok(bytes) => match serde_json::from_slice::<ApiError>(&bytes) {
            Ok(body) => ClientError::Api { status, body },
            Err(_) => ClientError::Unexpected { status, text: String::from_utf8_lossy(&bytes).into_owned() },
        },
        Err(e) => ClientError::Transport(e),
    }
}
