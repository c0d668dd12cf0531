//! HTTP front end for the annotation engine.
//!
//! Routes:
//!
//! | method | path                          |
//! |--------|-------------------------------|
//! | POST   | `/v1/annotate`                |
//! | GET    | `/v1/review/queue?limit=`     |
//! | POST   | `/v1/review/{id}/decision`    |
//! | GET    | `/v1/metrics`                 |
//! | POST   | `/v1/batch`                   |
//! | GET    | `/v1/batch/{id}`              |
//! | GET    | `/v1/catalog?query=&limit=`   |
//! | GET    | `/health`                     |
//!
//! Errors are JSON `{error, detail}`.

pub mod review;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Instant;

use annotator_core::agents::{AgentId, AgentStatus};
use annotator_core::audit::PiiPolicy;
use annotator_core::config::ProviderKind;
use annotator_core::judge::{ConsensusStrength, JudgeSource};
use annotator_core::pipeline::{
    BatchError, BatchItem, BatchJob, BatchManager, BatchOutputLine, MonitoringSnapshot, PipelineError, RoutingAction,
};
use annotator_core::prompting::Confidence;
use annotator_core::{AnnotationResult, Engine};
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub use review::{DecisionRequest, ReviewItem, ReviewQueue, ReviewStats};

/// Uniform error body.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub error: &'static str,
    pub detail: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, error: &'static str, detail: impl Into<serde_json::Value>) -> Self {
        Self {
            status,
            error,
            detail: detail.into(),
        }
    }

    fn bad_request(detail: impl ToString) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", detail.to_string())
    }

    fn not_found(detail: impl ToString) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", detail.to_string())
    }

    fn internal(detail: impl ToString) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", detail.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.error, "detail": self.detail}))).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::bad_request(r.body_text())
    }
}

impl From<review::ReviewError> for ApiError {
    fn from(e: review::ReviewError) -> Self {
        use review::ReviewError as E;
        match e {
            E::UnknownItem(_) => Self::not_found(e),
            E::AlreadyDecided(_) => Self::new(StatusCode::CONFLICT, "already_decided", e.to_string()),
            E::InvalidDecision(_) => Self::bad_request(e),
            E::Storage(_) => Self::internal(e),
        }
    }
}

impl From<BatchError> for ApiError {
    fn from(e: BatchError) -> Self {
        match e {
            BatchError::UnknownJob(_) => Self::not_found(e),
            BatchError::Parse { .. } | BatchError::DuplicateId(_) => Self::bad_request(e),
            BatchError::Io(_) => Self::internal(e),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServiceOptions {
    /// Static bearer token required on `/v1` routes when set.
    pub bearer_token: Option<String>,
    /// Allowed CORS origin; any origin when unset.
    pub cors_origin: Option<String>,
}

/// Shared handler state.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    engine: Engine,
    review: ReviewQueue,
    batches: Arc<BatchManager>,
    policy: PiiPolicy,
    started: Instant,
    provider_kind: ProviderKind,
}

impl AppState {
    pub fn new(engine: Engine, review: ReviewQueue, batches: BatchManager) -> Self {
        let provider_kind = engine.config().runtime.provider_kind;
        Self {
            inner: Arc::new(Inner {
                engine,
                review,
                batches: Arc::new(batches),
                policy: PiiPolicy::default(),
                started: Instant::now(),
                provider_kind,
            }),
        }
    }

    pub fn engine(&self) -> &Engine {
        &self.inner.engine
    }

    pub fn review(&self) -> &ReviewQueue {
        &self.inner.review
    }

    pub fn batches(&self) -> &Arc<BatchManager> {
        &self.inner.batches
    }
}

pub fn router(state: AppState, options: &ServiceOptions) -> Router {
    let cors = match &options.cors_origin {
        Some(o) => match HeaderValue::from_str(o) {
            Ok(v) => CorsLayer::new().allow_origin(AllowOrigin::exact(v)),
            Err(_) => CorsLayer::new(),
        },
        None => CorsLayer::new().allow_origin(Any),
    }
    .allow_methods(Any)
    .allow_headers(Any);

    let token = options.bearer_token.clone().map(Arc::new);
    let v1 = Router::new()
        .route("/annotate", post(annotate))
        .route("/review/queue", get(review_queue))
        .route("/review/:id/decision", post(decide))
        .route("/metrics", get(metrics))
        .route("/batch", post(submit_batch))
        .route("/batch/:id", get(poll_batch))
        .route("/catalog", get(catalog_search))
        .layer(middleware::from_fn(move |req: Request, next: Next| {
            let token = token.clone();
            async move { check_token(token.as_deref().map(String::as_str), req, next).await }
        }));

    Router::new()
        .route("/health", get(health))
        .nest("/v1", v1)
        .layer(cors)
        .with_state(state)
}

async fn check_token(token: Option<&str>, req: Request, next: Next) -> Response {
    if let Some(expected) = token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == expected);
        if !ok {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token").into_response();
        }
    }
    next.run(req).await
}

/// Bind and serve until the process is stopped.
pub async fn serve(addr: SocketAddr, state: AppState, options: ServiceOptions) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state, &options)).await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotateRequest {
    pub utterance: String,
    #[serde(default)]
    pub context: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCandidate {
    pub annotation_id: String,
    pub title: String,
    pub final_score: u8,
    pub support: usize,
    pub reasoning: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub intent: String,
    pub needs_expansion: bool,
    pub expanded_query: String,
    pub cache_hit: bool,
}

/// Response body of `POST /v1/annotate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSummary {
    pub utterance_id: String,
    pub top: Vec<SummaryCandidate>,
    pub band: Confidence,
    pub action: RoutingAction,
    pub consensus_strength: ConsensusStrength,
    pub source: JudgeSource,
    pub degraded: bool,
    pub agent_statuses: BTreeMap<AgentId, AgentStatus>,
    pub plan: PlanSummary,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review_item_id: Option<String>,
}

impl AnnotationSummary {
    pub fn from_result(r: &AnnotationResult, engine: &Engine, review_item_id: Option<String>) -> Self {
        Self {
            utterance_id: r.utterance_id.clone(),
            top: r
                .judge
                .ranked
                .iter()
                .map(|c| SummaryCandidate {
                    annotation_id: c.annotation_id.clone(),
                    title: engine
                        .catalog()
                        .get(&c.annotation_id)
                        .map(|e| e.primary_text.clone())
                        .unwrap_or_default(),
                    final_score: c.final_score,
                    support: c.support,
                    reasoning: c.reasoning.clone(),
                })
                .collect(),
            band: r.routing.band,
            action: r.routing.action,
            consensus_strength: r.judge.consensus_strength,
            source: r.judge.source,
            degraded: r.degraded,
            agent_statuses: r.agent_statuses(),
            plan: PlanSummary {
                intent: r.plan.intent.clone(),
                needs_expansion: r.plan.needs_expansion,
                expanded_query: r.plan.expanded_query.clone(),
                cache_hit: r.plan.cache_hit,
            },
            latency_ms: r.total_latency_ms,
            review_item_id,
        }
    }
}

async fn annotate(
    State(state): State<AppState>,
    body: Result<Json<AnnotateRequest>, JsonRejection>,
) -> Result<Json<AnnotationSummary>, ApiError> {
    let Json(req) = body?;
    let engine = state.engine();
    match engine.annotate(&req.utterance, req.context.as_deref()).await {
        Ok(r) => {
            let review_item_id = if r.routing.band == Confidence::Low {
                let now = engine.clock().now_ms();
                let item = state.review().enqueue(&r, engine.catalog(), &state.inner.policy, now)?;
                Some(item.item_id)
            } else {
                None
            };
            Ok(Json(AnnotationSummary::from_result(&r, engine, review_item_id)))
        }
        Err(PipelineError::EmptyUtterance) => Err(ApiError::bad_request("utterance is empty")),
        Err(PipelineError::AllAgentsFailed { statuses }) => Err(ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "all_agents_failed",
            serde_json::to_value(statuses).unwrap_or_default(),
        )),
    }
}

#[derive(Debug, Deserialize)]
struct QueueParams {
    limit: Option<usize>,
}

async fn review_queue(State(state): State<AppState>, Query(p): Query<QueueParams>) -> Json<Vec<ReviewItem>> {
    Json(state.review().pending(p.limit.unwrap_or(50)))
}

async fn decide(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<DecisionRequest>, JsonRejection>,
) -> Result<Json<review::DecisionOutcome>, ApiError> {
    let Json(req) = body?;
    let engine = state.engine();
    let outcome = state
        .review()
        .decide(&id, &req, engine.catalog(), engine.clock().now_ms())?;
    let outcomes: Vec<(AgentId, bool)> = outcome.agent_outcomes.iter().map(|(a, c)| (*a, *c)).collect();
    engine.weights().record_outcomes(&outcomes);
    engine.maybe_recompute_weights();
    Ok(Json(outcome))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBody {
    #[serde(flatten)]
    pub monitoring: MonitoringSnapshot,
    pub review: ReviewStats,
    pub agent_weights: BTreeMap<AgentId, f64>,
}

async fn metrics(State(state): State<AppState>) -> Json<MetricsBody> {
    let engine = state.engine();
    let weights = engine.weights().read();
    Json(MetricsBody {
        monitoring: engine.stats(),
        review: state.review().stats(),
        agent_weights: AgentId::ALL.iter().map(|a| (*a, weights.weight(*a))).collect(),
    })
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "uptime_s": state.inner.started.elapsed().as_secs(),
        "provider_kind": state.inner.provider_kind,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchRequest {
    pub items: Vec<BatchItem>,
}

async fn submit_batch(
    State(state): State<AppState>,
    body: Result<Json<BatchRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<BatchJob>), ApiError> {
    let Json(req) = body?;
    let mut seen = std::collections::HashSet::new();
    for item in &req.items {
        if !seen.insert(item.id.as_str()) {
            return Err(BatchError::DuplicateId(item.id.clone()).into());
        }
    }
    let manager = state.batches().clone();
    let job = manager.submit(req.items)?;
    let job_id = job.job_id.clone();
    tokio::spawn(async move {
        if let Err(e) = manager.run(&job_id).await {
            tracing::error!(error = %e, job_id, "batch job failed");
        }
    });
    Ok((StatusCode::ACCEPTED, Json(job)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchView {
    pub job: BatchJob,
    pub results: Vec<BatchOutputLine>,
}

async fn poll_batch(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<BatchView>, ApiError> {
    let job = state.batches().poll(&id)?;
    let results = state.batches().results(&id)?;
    Ok(Json(BatchView { job, results }))
}

#[derive(Debug, Deserialize)]
struct CatalogParams {
    #[serde(default)]
    query: String,
    limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogHit {
    pub id: String,
    pub primary_text: String,
    pub secondary_text: Option<String>,
    pub score: f64,
}

async fn catalog_search(State(state): State<AppState>, Query(p): Query<CatalogParams>) -> Json<Vec<CatalogHit>> {
    let engine = state.engine();
    let limit = p.limit.unwrap_or(20);
    let hits: Vec<(String, f64)> = if p.query.trim().is_empty() {
        engine.catalog().entries().iter().take(limit).map(|e| (e.id.clone(), 0.0)).collect()
    } else {
        engine
            .indices()
            .bm25
            .topk(&p.query, limit)
            .into_iter()
            .filter(|(_, s)| *s > 0.0)
            .collect()
    };
    Json(
        hits.into_iter()
            .filter_map(|(id, score)| {
                engine.catalog().get(&id).map(|e| CatalogHit {
                    id,
                    primary_text: e.primary_text.clone(),
                    secondary_text: e.secondary_text.clone(),
                    score,
                })
            })
            .collect(),
    )
}
