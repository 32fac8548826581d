//! Review service routes, driven in-process.

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use lipogate::agents::{Agents, BackendConfig};
use lipogate::app::Store;
use lipogate::dataset::load_library;
use lipogate::orchestrator::{screen_library, OrchestratorConfig, ScreeningSettings};
use lipogate_cli::service::router;
use serde_json::{json, Value};
use std::path::Path;
use std::sync::Arc;
use tower::ServiceExt;

fn scripted_store(dir: &Path) -> (Arc<Store>, String) {
    let f = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let backend = BackendConfig::Scripted {
        fixture: f.join("script10.jsonl"),
    };
    let agents = Agents::from_config(&backend, &backend).unwrap();
    let lib = load_library(f.join("library10.jsonl")).unwrap();
    let cfg = OrchestratorConfig::default();
    let store = Store::open(dir).unwrap();
    let settings = ScreeningSettings {
        tau: cfg.tau,
        max_loops: cfg.max_loops,
        top_fraction: cfg.top_fraction,
    };
    let run = store.begin_run(settings, lib.len()).unwrap();
    let res = screen_library(&lib, &cfg, &agents, &store.port(Some(&run))).unwrap();
    store.finish_run(&run, &res).unwrap();
    (Arc::new(store), run)
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>, token: Option<&str>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::test]
async fn empty_system_lists_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(Arc::new(Store::open(dir.path()).unwrap()), None);
    assert_eq!(call(&app, "GET", "/api/escalations", None, None).await, (StatusCode::OK, json!([])));
    assert_eq!(call(&app, "GET", "/api/runs", None, None).await, (StatusCode::OK, json!([])));
    let (s, body) = call(&app, "GET", "/api/runs/R0001", None, None).await;
    assert_eq!((s, body["code"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_run")));
    let (s, _) = call(&app, "GET", "/api/escalations?status=open", None, None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn escalation_review_flow() {
    let dir = tempfile::tempdir().unwrap();
    let (store, run) = scripted_store(dir.path());
    let app = router(store, None);

    let (s, pending) = call(&app, "GET", "/api/escalations?status=pending", None, None).await;
    assert_eq!(s, StatusCode::OK);
    let pending = pending.as_array().unwrap();
    assert_eq!(pending.len(), 1);
    assert_eq!(pending[0]["candidate_id"], "C05");
    assert_eq!(pending[0]["transcript"].as_array().unwrap().len(), 3);
    let tid = pending[0]["ticket_id"].as_str().unwrap().to_string();

    let (_, ticket) = call(&app, "GET", &format!("/api/escalations/{tid}"), None, None).await;
    assert_eq!(ticket["transcript"][2]["verdict"]["r_corr"], "score moves without new evidence");

    let (_, snap) = call(&app, "GET", &format!("/api/runs/{run}"), None, None).await;
    assert_eq!(snap["phase"], "awaiting_review");
    assert_eq!(snap["counts"]["escalated"], 1);
    assert_eq!(snap["completion"], 0.9);
    let v0 = snap["version"].as_u64().unwrap();

    let bad = json!({"toxic": true, "efficiency": 7, "reviewer": "ana"});
    let (s, body) = call(&app, "POST", &format!("/api/escalations/{tid}/verdict"), Some(bad), None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "efficiency must be absent when toxic is true");

    let ok = json!({"toxic": false, "efficiency": 8, "reviewer": "ana", "note": "amine pKa fits"});
    let (s, out) = call(&app, "POST", &format!("/api/escalations/{tid}/verdict"), Some(ok), None).await;
    assert_eq!(s, StatusCode::OK, "{out}");
    assert_eq!(out["state"]["status"], "resolved_by_human");
    assert_eq!(out["state"]["final"]["efficiency"], 8);
    assert_eq!(out["state"]["final"]["decided_by"], "human");

    let dup = json!({"toxic": true, "reviewer": "bo"});
    let (s, body) = call(&app, "POST", &format!("/api/escalations/{tid}/verdict"), Some(dup), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(body["existing"]["reviewer"], "ana");
    assert_eq!(body["existing"]["efficiency"], 8);

    let (_, resolved) = call(&app, "GET", "/api/escalations?status=resolved", None, None).await;
    assert_eq!(resolved[0]["verdict"]["efficiency"], 8);
    let (_, snap) = call(&app, "GET", &format!("/api/runs/{run}"), None, None).await;
    assert_eq!(snap["phase"], "finalized");
    assert_eq!(snap["counts"]["resolved_by_human"], 1);
    assert!(snap["version"].as_u64().unwrap() > v0);

    let (s, report) = call(&app, "GET", &format!("/api/runs/{run}/report"), None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(report["result"]["finalized"], true);
    assert_eq!(report["digest"].as_str().unwrap().len(), 64);

    let (s, _) = call(&app, "GET", "/api/escalations/T999999", None, None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn concurrent_duplicate_posts_apply_once() {
    let dir = tempfile::tempdir().unwrap();
    let (store, _) = scripted_store(dir.path());
    let app = router(store, None);
    let uri = "/api/escalations/T000001/verdict";
    let a = call(&app, "POST", uri, Some(json!({"toxic": false, "efficiency": 3, "reviewer": "tab1"})), None);
    let b = call(&app, "POST", uri, Some(json!({"toxic": true, "reviewer": "tab2"})), None);
    let ((sa, ba), (sb, bb)) = tokio::join!(a, b);
    let mut statuses = [sa, sb];
    statuses.sort();
    assert_eq!(statuses, [StatusCode::OK, StatusCode::CONFLICT]);
    let winner = if sa == StatusCode::OK { "tab1" } else { "tab2" };
    let conflict = if sa == StatusCode::OK { bb } else { ba };
    assert_eq!(conflict["existing"]["reviewer"], winner);
}

#[tokio::test]
async fn token_guards_the_write_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (store, _) = scripted_store(dir.path());
    let app = router(store, Some("s3cret".into()));
    let v = json!({"toxic": true, "reviewer": "ana"});
    let uri = "/api/escalations/T000001/verdict";
    assert_eq!(call(&app, "POST", uri, Some(v.clone()), None).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(call(&app, "POST", uri, Some(v.clone()), Some("wrong")).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(call(&app, "GET", "/api/escalations", None, None).await.0, StatusCode::OK);
    assert_eq!(call(&app, "POST", uri, Some(v), Some("s3cret")).await.0, StatusCode::OK);
}
