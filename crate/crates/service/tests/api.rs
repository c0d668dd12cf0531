use std::path::PathBuf;
use std::sync::Arc;

use annotator_core::config::load_config;
use annotator_core::knowledge_base::{ingest_catalog, load_training};
use annotator_core::pipeline::BatchManager;
use annotator_core::provider::{MockBehavior, MockFault};
use annotator_core::{AgentId, Engine, MockProvider};
use annotator_service::{router, AppState, ReviewQueue, ServiceOptions};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn data(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel)
}

async fn engine_with(provider: MockProvider) -> Engine {
    let config = load_config(data("banking_faq/config.json")).unwrap();
    let catalog = ingest_catalog(config.catalog_path.as_ref().unwrap(), &config).unwrap();
    let training = load_training(config.training_path.as_ref().unwrap(), &catalog).unwrap();
    Engine::builder(config, catalog, Arc::new(provider))
        .training(training)
        .build()
        .await
        .unwrap()
}

async fn app_with(provider: MockProvider, options: ServiceOptions) -> (Router, AppState) {
    let engine = engine_with(provider).await;
    let batches = BatchManager::new(engine.clone(), None);
    let state = AppState::new(engine, ReviewQueue::in_memory(), batches);
    (router(state.clone(), &options), state)
}

async fn app() -> (Router, AppState) {
    app_with(MockProvider::new(7), ServiceOptions::default()).await
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

#[tokio::test]
async fn fresh_service_is_healthy_with_zero_counters() {
    let (app, _) = app().await;
    let (s, body) = call(&app, "GET", "/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["provider_kind"], "mock");
    let (s, m) = call(&app, "GET", "/v1/metrics", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(m["total_requests"], 0);
    assert_eq!(m["empty"], true);
    assert_eq!(m["review"]["pending"], 0);
}

#[tokio::test]
async fn annotate_happy_path() {
    let (app, _) = app().await;
    let (s, body) = call(&app, "POST", "/v1/annotate", Some(json!({"utterance": "lost deb"}))).await;
    assert_eq!(s, StatusCode::OK, "{body}");
    let top = body["top"].as_array().unwrap();
    assert!(!top.is_empty() && top.len() <= 5);
    assert_eq!(top[0]["annotation_id"], "0002");
    assert_eq!(top[0]["title"], "Lock and unlock your credit and debit cards");
    assert!(body["band"].is_string());
    assert_eq!(body["agent_statuses"].as_object().unwrap().len(), 4);
}

#[tokio::test]
async fn invalid_bodies_are_400() {
    let (app, _) = app().await;
    let (s, body) = call(&app, "POST", "/v1/annotate", Some(json!({"utterance": "   "}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "invalid_request");
    assert!(body["detail"].is_string());
    let (s, _) = call(&app, "POST", "/v1/annotate", Some(json!({"text": "x"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let req = Request::post("/v1/annotate")
        .header("content-type", "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn all_agents_failing_is_503_with_statuses() {
    let provider = MockProvider::new(7).with_behavior(MockBehavior::default().fault("ranker:*", MockFault::Fatal));
    let (app, _) = app_with(provider, ServiceOptions::default()).await;
    let (s, body) = call(&app, "POST", "/v1/annotate", Some(json!({"utterance": "lost deb"}))).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["error"], "all_agents_failed");
    let statuses = body["detail"].as_array().unwrap();
    assert_eq!(statuses.len(), 4);
    assert!(statuses.iter().all(|s| s["status"] == "provider_error"));
}

#[tokio::test]
async fn only_low_band_results_enqueue_review_items() {
    let (app, _) = app().await;
    let (_, high) = call(&app, "POST", "/v1/annotate", Some(json!({"utterance": "cash back"}))).await;
    assert_eq!(high["band"], "HIGH");
    assert!(high.get("review_item_id").is_none());
    let (_, medium) = call(&app, "POST", "/v1/annotate", Some(json!({"utterance": "fees"}))).await;
    assert_eq!(medium["band"], "MEDIUM");
    let (_, queue) = call(&app, "GET", "/v1/review/queue", None).await;
    assert_eq!(queue.as_array().unwrap().len(), 0);

    let (_, low) = call(&app, "POST", "/v1/annotate", Some(json!({"utterance": "pizza"}))).await;
    assert_eq!(low["band"], "LOW");
    let item_id = low["review_item_id"].as_str().unwrap().to_string();
    let (_, queue) = call(&app, "GET", "/v1/review/queue?limit=10", None).await;
    let queue = queue.as_array().unwrap();
    assert_eq!(queue.len(), 1);
    assert_eq!(queue[0]["item_id"], item_id.as_str());
    assert_eq!(queue[0]["status"], "pending");
}

#[tokio::test]
async fn review_loop_updates_agreement_weights_and_metrics() {
    let (app, state) = app().await;
    let (_, low) = call(&app, "POST", "/v1/annotate", Some(json!({"utterance": "zzqx blorp"}))).await;
    assert_eq!(low["band"], "LOW");
    let item_id = low["review_item_id"].as_str().unwrap().to_string();
    let top1 = low["top"][0]["annotation_id"].as_str().unwrap().to_string();
    let item = state.review().get(&item_id).unwrap();
    let expected_correct: Vec<AgentId> = item
        .agent_top_ids
        .iter()
        .filter(|(_, t)| **t == top1)
        .map(|(a, _)| *a)
        .collect();

    let uri = format!("/v1/review/{item_id}/decision");
    let (s, out) = call(&app, "POST", &uri, Some(json!({"chosen_id": top1, "reviewer": "ana"}))).await;
    assert_eq!(s, StatusCode::OK, "{out}");
    assert_eq!(out["agreement"], true);
    assert_eq!(out["item"]["status"], "decided");

    let (_, queue) = call(&app, "GET", "/v1/review/queue", None).await;
    assert!(queue.as_array().unwrap().is_empty());
    let (_, m) = call(&app, "GET", "/v1/metrics", None).await;
    assert_eq!(m["review"]["decided"], 1);
    assert_eq!(m["review"]["agreements"], 1);
    assert_eq!(m["review"]["agreement_rate"], 1.0);

    let weights = state.engine().weights().read();
    for agent in item.agent_top_ids.keys() {
        let (correct, total) = weights.counts(*agent);
        assert_eq!(total, 1);
        assert_eq!(correct, usize::from(expected_correct.contains(agent)));
    }

    let (s, body) = call(&app, "POST", &uri, Some(json!({"chosen_id": top1, "reviewer": "ana"}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(body["error"], "already_decided");
    let weights = state.engine().weights().read();
    for agent in item.agent_top_ids.keys() {
        assert_eq!(weights.counts(*agent).1, 1, "double submit must not double count");
    }
}

#[tokio::test]
async fn decision_validation() {
    let (app, _) = app().await;
    let (_, low) = call(&app, "POST", "/v1/annotate", Some(json!({"utterance": "pizza"}))).await;
    let uri = format!("/v1/review/{}/decision", low["review_item_id"].as_str().unwrap());
    let (s, _) = call(&app, "POST", &uri, Some(json!({"override_id": "9999", "reviewer": "ana"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", &uri, Some(json!({"chosen_id": "0040", "override_id": "0001", "reviewer": "ana"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", &uri, Some(json!({"reviewer": "ana"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", "/v1/review/r-999999/decision", Some(json!({"reject_all": true, "reviewer": "ana"}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, out) = call(&app, "POST", &uri, Some(json!({"override_id": "0001", "reviewer": "ana"}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(out["item"]["decision"]["choice"]["kind"], "override");
}

#[tokio::test]
async fn metrics_count_requests() {
    let (app, _) = app().await;
    let utterances = ["cash back", "fees", "pizza", "lost deb"];
    for i in 0..100 {
        let (s, _) = call(&app, "POST", "/v1/annotate", Some(json!({"utterance": utterances[i % 4]}))).await;
        assert_eq!(s, StatusCode::OK);
    }
    let (_, m) = call(&app, "GET", "/v1/metrics", None).await;
    assert_eq!(m["total_requests"], 100);
    assert_eq!(m["requests"], 100);
    assert_eq!(m["review"]["pending"], 25);
    let dist = &m["band_distribution"];
    let sum = dist["high"].as_f64().unwrap() + dist["medium"].as_f64().unwrap() + dist["low"].as_f64().unwrap();
    assert!((sum - 1.0).abs() < 1e-12);
}

#[tokio::test]
async fn batch_endpoints() {
    let (app, _) = app().await;
    let items = json!({"items": [
        {"id": "a", "utterance": "lost deb"},
        {"id": "b", "utterance": "cash back"},
        {"id": "c", "utterance": ""}
    ]});
    let (s, job) = call(&app, "POST", "/v1/batch", Some(items)).await;
    assert_eq!(s, StatusCode::ACCEPTED, "{job}");
    let uri = format!("/v1/batch/{}", job["job_id"].as_str().unwrap());
    let mut view = Value::Null;
    for _ in 0..200 {
        let (s, v) = call(&app, "GET", &uri, None).await;
        assert_eq!(s, StatusCode::OK);
        view = v;
        if view["job"]["status"] == "complete" {
            break;
        }
        tokio::time::sleep(std::time::Duration::from_millis(10)).await;
    }
    assert_eq!(view["job"]["status"], "complete");
    let results = view["results"].as_array().unwrap();
    assert_eq!(results.len(), 3);
    let c = results.iter().find(|r| r["id"] == "c").unwrap();
    assert_eq!(c["band"], "LOW");
    assert!(c["error"].is_string());

    let (s, body) = call(&app, "GET", "/v1/batch/job-424242", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "not_found");
    let dup = json!({"items": [{"id": "a", "utterance": "x"}, {"id": "a", "utterance": "y"}]});
    assert_eq!(call(&app, "POST", "/v1/batch", Some(dup)).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn catalog_search_is_bm25() {
    let (app, _) = app().await;
    let (s, hits) = call(&app, "GET", "/v1/catalog?query=lock%20unlock%20card&limit=3", None).await;
    assert_eq!(s, StatusCode::OK);
    let hits = hits.as_array().unwrap();
    assert!(!hits.is_empty() && hits.len() <= 3);
    assert_eq!(hits[0]["id"], "0002");
    let (_, none) = call(&app, "GET", "/v1/catalog?query=zzzz", None).await;
    assert!(none.as_array().unwrap().is_empty());
    let (_, all) = call(&app, "GET", "/v1/catalog?limit=5", None).await;
    assert_eq!(all.as_array().unwrap().len(), 5);
}

#[tokio::test]
async fn bearer_token_guards_v1_only() {
    let options = ServiceOptions {
        bearer_token: Some("s3cret".into()),
        cors_origin: None,
    };
    let (app, _) = app_with(MockProvider::new(7), options).await;
    let (s, body) = call(&app, "GET", "/v1/metrics", None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    assert_eq!(body["error"], "unauthorized");
    assert_eq!(call(&app, "GET", "/health", None).await.0, StatusCode::OK);
    let req = Request::get("/v1/metrics")
        .header("authorization", "Bearer s3cret")
        .body(Body::empty())
        .unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::OK);
}

#[tokio::test]
async fn review_queue_survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("review.jsonl");
    let engine = engine_with(MockProvider::new(7)).await;
    let r1 = engine.annotate("pizza", None).await.unwrap();
    let r2 = engine.annotate("zzqx blorp", None).await.unwrap();
    let policy = annotator_core::audit::PiiPolicy::default();
    let first_id;
    {
        let q = ReviewQueue::open(&path).unwrap();
        first_id = q.enqueue(&r1, engine.catalog(), &policy, 1).unwrap().item_id;
        q.enqueue(&r2, engine.catalog(), &policy, 2).unwrap();
        let req = annotator_service::DecisionRequest {
            reject_all: true,
            reviewer: "ana".into(),
            ..Default::default()
        };
        q.decide(&first_id, &req, engine.catalog(), 3).unwrap();
    }
    let q = ReviewQueue::open(&path).unwrap();
    assert_eq!(q.pending(10).len(), 1);
    assert!(q.get(&first_id).unwrap().decision.is_some());
    let third = q.enqueue(&r1, engine.catalog(), &policy, 4).unwrap();
    assert_eq!(third.item_id, "r-000003");
    assert_eq!(q.stats().decided, 1);
}

#[tokio::test]
async fn review_items_mask_pii() {
    let (app, state) = app().await;
    let (_, low) = call(&app, "POST", "/v1/annotate", Some(json!({"utterance": "pizza for jo@example.com"}))).await;
    if let Some(id) = low["review_item_id"].as_str() {
        let item = state.review().get(id).unwrap();
        assert!(!item.utterance.contains("jo@example.com"));
        assert!(item.utterance.contains("⟨EMAIL⟩"));
    } else {
        panic!("expected a LOW band result: {low}");
    }
}
