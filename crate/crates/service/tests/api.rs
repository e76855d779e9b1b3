mod common;

use axum::http::{Method, StatusCode};
use common::*;
use crm_service::SessionStore;
use serde_json::{json, Value};

fn close_to(v: &Value, expected: f64, tol: f64) -> bool {
    (v.as_f64().unwrap() - expected).abs() <= tol
}

#[tokio::test]
async fn two_stage_session_starts_at_the_lowest_level() {
    let app = app(SessionStore::in_memory());
    let r = post(&app, "/sessions", two_stage_doc()).await;
    assert_eq!(r.status, StatusCode::CREATED);
    let v = r.json();
    assert_eq!(v["stage"], "stage_one");
    assert_eq!(v["recommendation"]["level"], 1);
    assert_eq!(v["patients"], 0);
    assert_eq!(v["labels"][5], "6");
}

#[tokio::test]
async fn partition_prior_starts_at_the_modal_interval() {
    let app = app(SessionStore::in_memory());
    let v = post(&app, "/sessions", partition_doc()).await.json();
    assert_eq!(v["stage"], "model_based");
    let rec = &v["recommendation"];
    assert_eq!(rec["level"], 2);
    let mass: Vec<f64> =
        rec["interval_mass"].as_array().unwrap().iter().map(|m| m.as_f64().unwrap()).collect();
    let expected = [0.05, 0.19, 0.19, 0.19, 0.19, 0.19];
    for (m, e) in mass.iter().zip(expected) {
        assert!((m - e).abs() < 1e-8, "{mass:?}");
    }
}

#[tokio::test]
async fn invalid_designs_name_the_field() {
    let app = app(SessionStore::in_memory());
    let mut doc = two_stage_doc();
    doc["skeleton"]["alpha"] = json!([0.1, 0.3, 0.2]);
    let r = post(&app, "/sessions", doc).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    let e = r.json();
    assert_eq!(e["error"], "invalid_design");
    assert_eq!(e["field"], "skeleton");
    assert!(e["message"].as_str().unwrap().contains("increasing"));

    let mut doc = two_stage_doc();
    doc["design"]["target"] = json!(1.5);
    let e = post(&app, "/sessions", doc).await.json();
    assert_eq!(e["field"], "design.target");

    let mut doc = two_stage_doc();
    doc["design"]["inference"]["escalation"]["cohort"] = json!(3);
    let e = post(&app, "/sessions", doc).await.json();
    assert_eq!(e["field"], "design.inference");

    let r = call(&app, Method::POST, "/sessions", None).await;
    assert!(r.status.is_client_error());
    assert_eq!(r.json()["error"], "malformed_body");
    assert_eq!(get(&app, "/sessions").await.json(), json!([]));
}

#[tokio::test]
async fn worked_trial_through_the_api() {
    let app = app(SessionStore::in_memory());
    let id = create(&app, two_stage_doc()).await;
    let replies = enter(&app, &id, &FIRST_NINE).await;
    let path: Vec<u64> = replies.iter().map(|r| r["recommendation"]["level"].as_u64().unwrap()).collect();
    assert_eq!(path, [1, 1, 2, 2, 2, 3, 3, 3, 2]);
    assert_eq!(replies[5]["stage"], "stage_one");
    assert_eq!(replies[7]["stage"], "stage_one");
    let rec = &replies[8]["recommendation"];
    assert_eq!(replies[8]["stage"], "model_based");
    assert!(close_to(&rec["parameter"], 0.715, 1e-3));
    let expected = [0.101, 0.149, 0.316, 0.472, 0.652, 0.775];
    for (e, x) in rec["estimates"].as_array().unwrap().iter().zip(expected) {
        assert!(close_to(e, x, 1e-3), "{e} vs {x}");
    }

    let replies = enter(&app, &id, &LAST_SEVEN).await;
    assert!(close_to(&replies[0]["recommendation"]["parameter"], 0.759, 1e-3));
    assert!(replies.iter().all(|r| r["recommendation"]["level"] == 2));

    let est = get(&app, &format!("/sessions/{id}/estimates")).await.json();
    assert_eq!(est["patients"], 16);
    assert_eq!(est["recommended_level"], 2);
    assert!(close_to(&est["doses"][1]["estimate"], 0.212, 1e-3), "{}", est["doses"][1]);
    assert_eq!(est["doses"][1]["treated"], 10);
    assert_eq!(est["doses"][1]["toxicities"], 2);
    let ci = &est["interval"];
    assert_eq!(ci["level"], 2);
    assert_eq!(ci["confidence"], 0.9);
    assert!(ci["lower"].as_f64().unwrap() < 0.212 && ci["upper"].as_f64().unwrap() > 0.212);
}

#[tokio::test]
async fn off_recommendation_outcomes_need_an_override() {
    let app = app(SessionStore::in_memory());
    let id = create(&app, two_stage_doc()).await;
    let uri = format!("/sessions/{id}/outcomes");
    let r = post(&app, &uri, outcome(3, false)).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    let e = r.json();
    assert_eq!(e["error"], "level_mismatch");
    assert_eq!(e["field"], "level");
    assert_eq!(get(&app, &format!("/sessions/{id}")).await.json()["patients"], 0);

    let r = post(&app, &uri, json!({ "level": 3, "toxicity": false, "override": true })).await;
    assert_eq!(r.status, StatusCode::OK);
    let session = get(&app, &format!("/sessions/{id}")).await.json();
    assert_eq!(session["history"][0]["overridden"], true);
    let audit = get(&app, &format!("/sessions/{id}/audit")).await.json();
    let ov = audit.as_array().unwrap().iter().find(|e| e["type"] == "override_recorded").unwrap();
    assert_eq!(ov["recommended_level"], 1);
    assert_eq!(ov["given_level"], 3);
}

#[tokio::test]
async fn malformed_outcomes_are_rejected() {
    let app = app(SessionStore::in_memory());
    let id = create(&app, two_stage_doc()).await;
    let uri = format!("/sessions/{id}/outcomes");
    for (body, field) in [
        (json!({ "level": 0, "toxicity": false }), "level"),
        (json!({ "level": 7, "toxicity": false, "override": true }), "level"),
        (json!({ "level": 1, "toxicity": false, "grade": 4 }), "grade"),
        (json!({ "level": 1, "toxicity": true, "grade": 9 }), "grade"),
        (json!({ "level": 1, "toxicity": false, "group": 1 }), "group"),
    ] {
        let r = post(&app, &uri, body.clone()).await;
        assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
        assert_eq!(r.json()["field"], field, "{body}");
    }
    let r = post(&app, &uri, json!({ "level": 1 })).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.json()["error"], "malformed_body");
    let r = post(&app, &uri, json!({ "level": 1, "toxicity": false, "dose": 1 })).await;
    assert_eq!(r.json()["error"], "malformed_body");
    assert_eq!(get(&app, &format!("/sessions/{id}")).await.json()["patients"], 0);
}

#[tokio::test]
async fn what_if_is_pure_and_agrees_with_recording() {
    let app = app(SessionStore::in_memory());
    let id = create(&app, two_stage_doc()).await;
    enter(&app, &id, &FIRST_NINE).await;
    let uri = format!("/sessions/{id}/what-if");
    let before = get(&app, &format!("/sessions/{id}")).await.bytes;

    let q = json!({ "outcomes": [{ "toxicity": false }] });
    let first = post(&app, &uri, q.clone()).await;
    assert_eq!(first.status, StatusCode::OK);
    let second = post(&app, &uri, q).await;
    assert_eq!(first.bytes, second.bytes);
    let v = first.json();
    assert_eq!(v["patients"], 10);
    assert_eq!(v["history"][9]["level"], 2);
    assert!(close_to(&v["recommendation"]["parameter"], 0.759, 1e-3));
    assert_eq!(get(&app, &format!("/sessions/{id}")).await.bytes, before);

    let tox = post(&app, &uri, json!({ "outcomes": [{ "level": 2, "toxicity": true }] })).await.json();
    let recorded = enter(&app, &id, &[(2, true)]).await.remove(0);
    assert_eq!(tox["recommendation"], recorded["recommendation"]);
    assert_eq!(tox["estimates"], get(&app, &format!("/sessions/{id}/estimates")).await.json());

    let cohort = json!({ "outcomes": [{ "toxicity": false }, { "toxicity": false }, { "toxicity": false }] });
    let v = post(&app, &uri, cohort).await.json();
    assert_eq!(v["patients"], 13);

    let e = post(&app, &uri, json!({ "outcomes": [{ "toxicity": false, "grade": 4 }] })).await;
    assert_eq!(e.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(e.json()["field"], "outcomes[0].grade");
    assert_eq!(post(&app, &uri, json!({ "outcomes": [] })).await.status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn closed_sessions_refuse_outcomes() {
    let app = app(SessionStore::in_memory());
    let id = create(&app, two_stage_doc()).await;
    enter(&app, &id, &[(1, false)]).await;
    let r = post(&app, &format!("/sessions/{id}/close"), json!({ "reason": "stopped early" })).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["stage"], "closed");
    let r = post(&app, &format!("/sessions/{id}/outcomes"), outcome(1, false)).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(r.json()["error"], "session_closed");
    let r =
        post(&app, &format!("/sessions/{id}/what-if"), json!({ "outcomes": [{ "toxicity": true }] })).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(
        call(&app, Method::POST, &format!("/sessions/{id}/close"), None).await.status,
        StatusCode::CONFLICT
    );
    let audit = get(&app, &format!("/sessions/{id}/audit")).await.json();
    assert_eq!(audit.as_array().unwrap().last().unwrap()["reason"], "stopped early");
    // the last recommendation stays readable
    assert_eq!(get(&app, &format!("/sessions/{id}/recommendation")).await.status, StatusCode::OK);
}

#[tokio::test]
async fn sessions_close_at_the_planned_size() {
    let app = app(SessionStore::in_memory());
    let mut doc = two_stage_doc();
    doc["max_patients"] = json!(3);
    let id = create(&app, doc).await;
    let replies = enter(&app, &id, &[(1, false), (1, false), (1, false)]).await;
    assert_eq!(replies[1]["stage"], "stage_one");
    assert_eq!(replies[2]["stage"], "closed");
    assert_eq!(replies[2]["recommendation"]["level"], 2);
}

#[tokio::test]
async fn audit_log_is_sequential() {
    let app = app(SessionStore::in_memory());
    let id = create(&app, two_stage_doc()).await;
    enter(&app, &id, &FIRST_NINE).await;
    let audit = get(&app, &format!("/sessions/{id}/audit")).await.json();
    let entries = audit.as_array().unwrap();
    for (i, e) in entries.iter().enumerate() {
        assert_eq!(e["seq"], i as u64 + 1);
    }
    assert_eq!(entries[0]["type"], "session_created");
    let kinds: Vec<&str> = entries.iter().map(|e| e["type"].as_str().unwrap()).collect();
    assert_eq!(kinds.iter().filter(|k| **k == "outcome_entered").count(), 9);
    assert_eq!(kinds.iter().filter(|k| **k == "recommendation_issued").count(), 10);
}

#[tokio::test]
async fn unknown_sessions_are_not_found() {
    let app = app(SessionStore::in_memory());
    let id = uuid::Uuid::new_v4();
    let r = get(&app, &format!("/sessions/{id}")).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    assert_eq!(r.json()["error"], "not_found");
    assert_eq!(get(&app, &format!("/sessions/{id}/estimates")).await.status, StatusCode::NOT_FOUND);
    assert_eq!(
        post(&app, &format!("/sessions/{id}/outcomes"), outcome(1, false)).await.status,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn randomized_draws_are_fixed_by_session_state() {
    let mut doc = two_stage_doc();
    doc["design"]["randomize"] = json!({ "delta_prob": 0.5 });
    doc["seed"] = json!(17);
    let app_a = app(SessionStore::in_memory());
    let app_b = app(SessionStore::in_memory());
    let a = create(&app_a, doc.clone()).await;
    let b = create(&app_b, doc).await;
    let mut levels = Vec::new();
    for _ in 0..20 {
        let level = get(&app_a, &format!("/sessions/{a}/recommendation")).await.json()["level"]
            .as_u64()
            .unwrap() as usize;
        let tox = levels.len() % 4 == 3;
        let probe =
            post(&app_a, &format!("/sessions/{a}/what-if"), json!({ "outcomes": [{ "toxicity": tox }] }))
                .await
                .json();
        let ra = enter(&app_a, &a, &[(level, tox)]).await.remove(0);
        let rb = enter(&app_b, &b, &[(level, tox)]).await.remove(0);
        assert_eq!(ra["recommendation"], rb["recommendation"]);
        assert_eq!(probe["recommendation"], ra["recommendation"]);
        levels.push(level);
    }
    let audit = get(&app_a, &format!("/sessions/{a}/audit")).await.json();
    assert!(audit.as_array().unwrap().iter().any(|e| !e["recommendation"]["randomization"].is_null()));
}

#[tokio::test]
async fn grouped_designs_recommend_per_group() {
    let doc = json!({
        "skeleton": { "alpha": ALPHA },
        "model": { "kind": "power_exp" },
        "design": {
            "target": 0.2,
            "inference": { "mode": "bayes", "prior": { "kind": "normal", "mean": 0.0, "variance": 1.34 } },
            "grouping": "two_group"
        }
    });
    let app = app(SessionStore::in_memory());
    let id = create(&app, doc).await;
    let uri = format!("/sessions/{id}/outcomes");
    let r = post(&app, &uri, outcome(2, false)).await;
    assert_eq!(r.json()["field"], "group");
    let rec0 = get(&app, &format!("/sessions/{id}/recommendation")).await.json();
    let level = rec0["level"].as_u64().unwrap();
    let r = post(&app, &uri, json!({ "level": level, "toxicity": false, "group": 0, "next_group": 1 })).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.json());
    let g1 = get(&app, &format!("/sessions/{id}/recommendation?group=1")).await.json();
    assert_eq!(g1, r.json()["recommendation"]);
    let g0 = get(&app, &format!("/sessions/{id}/recommendation?group=0")).await.json();
    assert!(g0["level"].as_u64() >= g1["level"].as_u64());
    assert_eq!(g0["model_weights"].as_array().unwrap().len(), 2);
    assert_eq!(
        get(&app, &format!("/sessions/{id}/recommendation?group=2")).await.status,
        StatusCode::UNPROCESSABLE_ENTITY
    );
}

#[tokio::test]
async fn msd_sessions_need_responses() {
    let doc = json!({
        "skeleton": { "alpha": ALPHA },
        "model": { "kind": "power_exp" },
        "design": {
            "target": 0.2,
            "inference": { "mode": "bayes", "prior": { "kind": "normal", "mean": 0.0, "variance": 1.34 } },
            "msd": { "beta": [0.1, 0.2, 0.35, 0.5, 0.6, 0.7] }
        }
    });
    let app = app(SessionStore::in_memory());
    let id = create(&app, doc).await;
    let level = get(&app, &format!("/sessions/{id}/recommendation")).await.json()["level"].clone();
    let uri = format!("/sessions/{id}/outcomes");
    let r = post(&app, &uri, json!({ "level": level, "toxicity": false })).await;
    assert_eq!(r.json()["field"], "response");
    let r = post(&app, &uri, json!({ "level": level, "toxicity": false, "response": true })).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.json());
    let est = get(&app, &format!("/sessions/{id}/estimates")).await.json();
    assert!(est["doses"][0]["success"].is_number());
}

#[tokio::test]
async fn partition_locates_the_current_estimate() {
    let app = app(SessionStore::in_memory());
    let id = create(&app, two_stage_doc()).await;
    let before = get(&app, &format!("/sessions/{id}/partition")).await.json();
    assert_eq!(before["intervals"].as_array().unwrap().len(), 6);
    assert!(before.get("parameter").is_none());
    enter(&app, &id, &FIRST_NINE).await;
    let p = get(&app, &format!("/sessions/{id}/partition")).await.json();
    assert_eq!(p["target"], 0.2);
    let intervals = p["intervals"].as_array().unwrap();
    // 0.04^a + 0.07^a = 0.4 between the first two levels
    let k1 = intervals[1]["lower"].as_f64().unwrap();
    assert!((k1 - 0.552).abs() < 1e-3, "{k1}");
    assert_eq!(intervals[0]["upper"], intervals[1]["lower"]);
    assert_eq!(p["parameter_level"], 2);
    assert!((p["parameter"].as_f64().unwrap() - 0.715).abs() < 1e-3);
}
