#![allow(dead_code)]

use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use crm_service::{router, SessionStore};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

pub const ALPHA: [f64; 6] = [0.04, 0.07, 0.20, 0.35, 0.55, 0.70];

/// Two-stage likelihood design in cohorts of three on the power-direct model.
pub fn two_stage_doc() -> Value {
    json!({
        "name": "two-stage",
        "skeleton": { "alpha": ALPHA },
        "model": { "kind": "power_direct" },
        "design": {
            "target": 0.2,
            "inference": { "mode": "likelihood_two_stage", "escalation": { "cohort_size": 3 } }
        }
    })
}

pub fn partition_doc() -> Value {
    json!({
        "skeleton": { "alpha": ALPHA },
        "model": { "kind": "power_exp" },
        "design": {
            "target": 0.2,
            "inference": {
                "mode": "bayes",
                "prior": { "kind": "partition", "mass": [0.05, 0.19, 0.19, 0.19, 0.19, 0.19], "target": 0.2 },
                "estimate": "interval_mass"
            }
        }
    })
}

/// The first nine outcomes of the worked two-stage trial, as `(level, toxicity)`.
pub const FIRST_NINE: [(usize, bool); 9] = [
    (1, false),
    (1, false),
    (1, false),
    (2, false),
    (2, false),
    (2, false),
    (3, true),
    (3, true),
    (3, false),
];

/// Patients 10 to 16, all at level 2. Toxicities at patients 11 and 15 keep
/// every recommendation at level 2.
pub const LAST_SEVEN: [(usize, bool); 7] =
    [(2, false), (2, true), (2, false), (2, false), (2, false), (2, true), (2, false)];

pub fn outcome(level: usize, toxicity: bool) -> Value {
    json!({ "level": level, "toxicity": toxicity })
}

pub fn app(store: SessionStore) -> Router {
    router(Arc::new(store))
}

pub struct Reply {
    pub status: StatusCode,
    pub bytes: Bytes,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes)
            .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.bytes)))
    }
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(serde_json::to_vec(&v).unwrap())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    Reply { status, bytes }
}

pub async fn get(app: &Router, uri: &str) -> Reply {
    call(app, Method::GET, uri, None).await
}

pub async fn post(app: &Router, uri: &str, body: Value) -> Reply {
    call(app, Method::POST, uri, Some(body)).await
}

pub async fn create(app: &Router, doc: Value) -> String {
    let r = post(app, "/sessions", doc).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&r.bytes));
    r.json()["id"].as_str().unwrap().to_string()
}

/// Posts outcomes in order, asserting each is accepted.
pub async fn enter(app: &Router, id: &str, outcomes: &[(usize, bool)]) -> Vec<Value> {
    let mut out = Vec::new();
    for &(level, tox) in outcomes {
        let r = post(app, &format!("/sessions/{id}/outcomes"), outcome(level, tox)).await;
        assert_eq!(r.status, StatusCode::OK, "{}", String::from_utf8_lossy(&r.bytes));
        out.push(r.json());
    }
    out
}
