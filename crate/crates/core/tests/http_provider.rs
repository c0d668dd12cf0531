use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use annotator_core::provider::{
    with_retry, ChatRequest, EmbeddingRequest, HttpProvider, HttpProviderSettings, ModelProvider, ProviderError,
    RetryPolicy,
};
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

#[derive(Clone, Default)]
struct Server {
    chat_calls: Arc<AtomicUsize>,
    /// Number of leading chat calls answered with 429.
    throttle: usize,
}

async fn spawn(server: Server) -> String {
    let chat_state = server.clone();
    let app = Router::new()
        .route(
            "/v1/chat/completions",
            post(move |headers: HeaderMap, Json(body): Json<Value>| {
                let s = chat_state.clone();
                async move {
                    let n = s.chat_calls.fetch_add(1, Ordering::SeqCst);
                    if n < s.throttle {
                        return (StatusCode::TOO_MANY_REQUESTS, Json(json!({"error": "slow down"})));
                    }
                    if body["messages"][1]["content"] == "bad" {
                        return (StatusCode::BAD_REQUEST, Json(json!({"error": "bad"})));
                    }
                    let auth = headers.get("authorization").and_then(|v| v.to_str().ok()).unwrap_or("");
                    (
                        StatusCode::OK,
                        Json(json!({
                            "model": body["model"],
                            "choices": [{"message": {"content": format!("echo {auth}")}}]
                        })),
                    )
                }
            }),
        )
        .route(
            "/v1/embeddings",
            post(|Json(body): Json<Value>| async move {
                let n = body["input"].as_array().unwrap().len();
                let data: Vec<Value> = (0..n)
                    .rev()
                    .map(|i| json!({"index": i, "embedding": [3.0, 4.0, i as f64, 0.0]}))
                    .collect();
                Json(json!({"data": data}))
            }),
        );
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}/v1")
}

fn provider(base_url: String) -> HttpProvider {
    HttpProvider::new(HttpProviderSettings {
        base_url,
        api_key: Some("sekret".into()),
        chat_model: "chat-x".into(),
        embedding_model: "embed-x".into(),
        native_dims: 4,
    })
    .unwrap()
}

fn request(user: &str) -> ChatRequest {
    let mut r = ChatRequest::new("system", user);
    r.deadline_ms = 5_000;
    r
}

#[tokio::test]
async fn rate_limited_calls_are_retried() {
    let server = Server { throttle: 2, ..Default::default() };
    let calls = server.chat_calls.clone();
    let p = provider(spawn(server).await);
    let req = request("hello");
    let report = with_retry(RetryPolicy { max_retries: 3, base_delay_ms: 1 }, || p.complete(&req)).await;
    let resp = report.result.unwrap();
    assert_eq!(report.attempts, 3);
    assert_eq!(report.delays_ms, [1, 2]);
    assert_eq!(calls.load(Ordering::SeqCst), 3);
    assert_eq!(resp.text, "echo Bearer sekret");
    assert_eq!(resp.provider_meta["model"], "chat-x");
}

#[tokio::test]
async fn retries_are_bounded() {
    let server = Server { throttle: 100, ..Default::default() };
    let p = provider(spawn(server).await);
    let req = request("hello");
    let report = with_retry(RetryPolicy { max_retries: 2, base_delay_ms: 1 }, || p.complete(&req)).await;
    assert_eq!(report.attempts, 3);
    assert!(matches!(report.result, Err(ProviderError::Transient { status: Some(429), .. })));
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    let server = Server::default();
    let calls = server.chat_calls.clone();
    let p = provider(spawn(server).await);
    let req = request("bad");
    let report = with_retry(RetryPolicy { max_retries: 3, base_delay_ms: 1 }, || p.complete(&req)).await;
    assert_eq!(report.attempts, 1);
    assert_eq!(calls.load(Ordering::SeqCst), 1);
    assert!(matches!(report.result, Err(ProviderError::Fatal { status: Some(400), .. })));
}

#[tokio::test]
async fn embeddings_are_reordered_and_normalized() {
    let p = provider(spawn(Server::default()).await);
    let vs = p
        .embed(&EmbeddingRequest {
            texts: vec!["a".into(), "b".into()],
            target_dims: 2,
        })
        .await
        .unwrap();
    assert_eq!(vs, vec![vec![0.6, 0.8], vec![0.6, 0.8]]);
    let full = p
        .embed(&EmbeddingRequest {
            texts: vec!["a".into(), "b".into()],
            target_dims: 4,
        })
        .await
        .unwrap();
    assert_eq!(full[0], vec![0.6, 0.8, 0.0, 0.0]);
    assert!((full[1][2] - 1.0 / 26f64.sqrt()).abs() < 1e-12);
}

#[tokio::test]
async fn unreachable_endpoint_is_transient() {
    let p = provider("http://127.0.0.1:9/v1".into());
    let err = p.complete(&request("hello")).await.unwrap_err();
    assert!(err.is_retryable(), "{err:?}");
}
