//! End-to-end annotation: plan, fan out the rankers, judge, route.

mod batch;
mod monitor;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use futures::future::join_all;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::agents::{plan_query, run_ranker, AgentId, AgentRun, AgentSpec, AgentStatus, Indices, PlanCache, QueryPlan};
use crate::audit::{AuditCandidate, AuditStore, ResultSummary};
use crate::clock::{Clock, SystemClock};
use crate::config::{AnnotationConfig, ConfidenceThresholds};
use crate::judge::{aggregate, fallback_rank, judge_rerank, JudgeResult, JudgeSource, RerankRule, SharedWeights};
use crate::knowledge_base::{Catalog, EmbeddingMode, TrainingExample};
use crate::prompting::{allocate_few_shots, allocate_shared_few_shots, Confidence, FewShotAllocation};
use crate::provider::ModelProvider;
use crate::retrieval::{build_embedding_index, EmbeddingIndex, RetrievalError};
use crate::text::sha256_hex;

pub use batch::{BatchError, BatchGroup, BatchItem, BatchJob, BatchManager, BatchOutputLine, BatchStatus, GroupState};
pub use monitor::{percentile, propose_thresholds, BandDistribution, MonitoringSnapshot, Monitor, RequestSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingAction {
    AutoAccept,
    AutoAcceptFlagged,
    HumanReview,
}

impl RoutingAction {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::AutoAccept => "auto_accept",
            Self::AutoAcceptFlagged => "auto_accept_flagged",
            Self::HumanReview => "human_review",
        }
    }

    pub fn for_band(band: Confidence) -> Self {
        match band {
            Confidence::High => Self::AutoAccept,
            Confidence::Medium => Self::AutoAcceptFlagged,
            Confidence::Low => Self::HumanReview,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub band: Confidence,
    pub action: RoutingAction,
}

impl RoutingDecision {
    pub fn from_band(band: Confidence) -> Self {
        Self {
            band,
            action: RoutingAction::for_band(band),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot route an empty ranking")]
pub struct EmptyRanking;

/// HIGH needs the score threshold and agreement of at least two agents;
/// MEDIUM needs the medium threshold; everything else is LOW.
pub fn route_score(top_score: u8, support: usize, thresholds: &ConfidenceThresholds) -> RoutingDecision {
    let band = if top_score >= thresholds.high && support >= 2 {
        Confidence::High
    } else if top_score >= thresholds.medium {
        Confidence::Medium
    } else {
        Confidence::Low
    };
    RoutingDecision::from_band(band)
}

pub fn route(judge: &JudgeResult, thresholds: &ConfidenceThresholds) -> Result<RoutingDecision, EmptyRanking> {
    let top = judge.top().ok_or(EmptyRanking)?;
    Ok(route_score(top.final_score, top.support, thresholds))
}

/// Stage toggles; the default runs everything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineOptions {
    pub use_planner: bool,
    pub use_judge: bool,
    pub agents: Vec<AgentId>,
    /// Give every agent the same few-shot sample instead of disjoint slices.
    pub shared_few_shots: bool,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            use_planner: true,
            use_judge: true,
            agents: AgentId::ALL.to_vec(),
            shared_few_shots: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentFailure {
    pub agent_id: AgentId,
    pub status: AgentStatus,
    pub error: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("utterance is empty")]
    EmptyUtterance,
    #[error("all agents failed")]
    AllAgentsFailed { statuses: Vec<AgentFailure> },
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("few-shot allocation failed: {0}")]
    FewShot(String),
    #[error("catalog is empty")]
    EmptyCatalog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationResult {
    pub utterance_id: String,
    pub utterance: String,
    pub plan: QueryPlan,
    pub runs: Vec<AgentRun>,
    pub judge: JudgeResult,
    pub routing: RoutingDecision,
    pub total_latency_ms: u64,
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopCandidate {
    pub annotation_id: String,
    pub final_score: u8,
}

impl AnnotationResult {
    pub fn top(&self) -> Vec<TopCandidate> {
        self.judge
            .ranked
            .iter()
            .map(|r| TopCandidate {
                annotation_id: r.annotation_id.clone(),
                final_score: r.final_score,
            })
            .collect()
    }

    pub fn predicted_ids(&self) -> Vec<String> {
        self.judge.ids()
    }

    pub fn agent_statuses(&self) -> BTreeMap<AgentId, AgentStatus> {
        self.runs.iter().map(|r| (r.agent_id, r.status)).collect()
    }

    pub fn audit_summary(&self) -> ResultSummary {
        ResultSummary {
            top: self
                .top()
                .into_iter()
                .map(|t| AuditCandidate {
                    annotation_id: t.annotation_id,
                    final_score: t.final_score,
                })
                .collect(),
            band: self.routing.band.as_str().to_string(),
            action: self.routing.action.as_str().to_string(),
            source: match self.judge.source {
                JudgeSource::Judge => "judge".into(),
                JudgeSource::FallbackAggregation => "fallback_aggregation".into(),
            },
        }
    }
}

/// Deterministic id for an utterance without one.
pub fn utterance_id(utterance: &str) -> String {
    format!("u-{}", &sha256_hex(utterance)[..12])
}

struct EngineInner {
    config: Arc<AnnotationConfig>,
    catalog: Arc<Catalog>,
    indices: Indices,
    provider: Arc<dyn ModelProvider>,
    allocation: Option<FewShotAllocation>,
    weights: SharedWeights,
    plan_cache: PlanCache,
    clock: Arc<dyn Clock>,
    monitor: Monitor,
    workers: Semaphore,
    options: EngineOptions,
    rules: Vec<Arc<dyn RerankRule>>,
    audit: Option<Arc<AuditStore>>,
}

/// A ready-to-serve annotation engine. Cheap to clone.
#[derive(Clone)]
pub struct Engine {
    inner: Arc<EngineInner>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("catalog_len", &self.inner.catalog.len())
            .field("options", &self.inner.options)
            .finish()
    }
}

pub struct EngineBuilder {
    config: AnnotationConfig,
    catalog: Catalog,
    provider: Arc<dyn ModelProvider>,
    training: Vec<TrainingExample>,
    clock: Arc<dyn Clock>,
    options: EngineOptions,
    weights: Option<SharedWeights>,
    plan_cache: Option<PlanCache>,
    index_dir: Option<PathBuf>,
    rules: Vec<Arc<dyn RerankRule>>,
    audit: Option<Arc<AuditStore>>,
}

impl EngineBuilder {
    pub fn training(mut self, pool: Vec<TrainingExample>) -> Self {
        self.training = pool;
        self
    }

    pub fn clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn options(mut self, options: EngineOptions) -> Self {
        self.options = options;
        self
    }

    pub fn weights(mut self, weights: SharedWeights) -> Self {
        self.weights = Some(weights);
        self
    }

    pub fn plan_cache(mut self, cache: PlanCache) -> Self {
        self.plan_cache = Some(cache);
        self
    }

    /// Reuse embedding sidecars in `dir` when they match the catalog.
    pub fn index_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.index_dir = Some(dir.into());
        self
    }

    pub fn rule(mut self, rule: Arc<dyn RerankRule>) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn audit(mut self, store: Arc<AuditStore>) -> Self {
        self.audit = Some(store);
        self
    }

    pub async fn build(self) -> Result<Engine, EngineError> {
        if self.catalog.is_empty() {
            return Err(EngineError::EmptyCatalog);
        }
        let config = self.config;
        let mut indices = Indices::lexical_only(&self.catalog, config.embedding_cache_capacity);
        let wants_embeddings = config.enable_embeddings && self.options.agents.iter().any(|a| a.uses_embeddings());
        if wants_embeddings {
            for mode in [EmbeddingMode::PrimaryOnly, EmbeddingMode::FullContext] {
                if !self.options.agents.iter().any(|a| a.uses_embeddings() && a.embedding_mode() == mode) {
                    continue;
                }
                let index = load_or_build_index(
                    &self.catalog,
                    mode,
                    &config,
                    self.provider.as_ref(),
                    self.index_dir.as_deref(),
                )
                .await?;
                match mode {
                    EmbeddingMode::PrimaryOnly => indices.primary = Some(index),
                    EmbeddingMode::FullContext => indices.full = Some(index),
                }
            }
        }
        let mut options = self.options;
        if !config.enable_embeddings {
            options.agents.retain(|a| !a.uses_embeddings());
        }
        let allocation = if self.training.is_empty() {
            None
        } else {
            let alloc = if options.shared_few_shots {
                allocate_shared_few_shots(&self.training, &options.agents, config.few_shot_count_per_agent, config.seed)
            } else {
                allocate_few_shots(&self.training, &options.agents, config.few_shot_count_per_agent, config.seed)
            };
            Some(alloc.map_err(|e| EngineError::FewShot(e.to_string()))?)
        };
        let weights = self.weights.unwrap_or_else(|| {
            SharedWeights::new(crate::judge::AgentWeights::new(config.weight_window_size, config.weight_alpha))
        });
        let plan_cache = self
            .plan_cache
            .unwrap_or_else(|| PlanCache::new(config.planner_cache_ttl_s, self.clock.clone()));
        let workers = Semaphore::new(config.worker_count.max(1));
        Ok(Engine {
            inner: Arc::new(EngineInner {
                config: Arc::new(config),
                catalog: Arc::new(self.catalog),
                indices,
                provider: self.provider,
                allocation,
                weights,
                plan_cache,
                clock: self.clock,
                monitor: Monitor::default(),
                workers,
                options,
                rules: self.rules,
                audit: self.audit,
            }),
        })
    }
}

/// Sidecar file name for an embedding index.
pub fn index_file_name(mode: EmbeddingMode, dims: usize) -> String {
    format!("index_{}_{dims}.jsonl", mode.as_str())
}

/// Load a current sidecar from `dir` or embed the catalog (and save it).
pub async fn load_or_build_index(
    catalog: &Catalog,
    mode: EmbeddingMode,
    config: &AnnotationConfig,
    provider: &dyn ModelProvider,
    dir: Option<&std::path::Path>,
) -> Result<EmbeddingIndex, RetrievalError> {
    let dims = config.embedding_dims;
    if let Some(dir) = dir {
        let path = dir.join(index_file_name(mode, dims));
        if let Some(idx) = EmbeddingIndex::load_if_current(&path, catalog.source_digest(), mode, dims)? {
            return Ok(idx);
        }
        let idx = build_embedding_index(catalog, mode, dims, provider, config).await?;
        std::fs::create_dir_all(dir)?;
        idx.save(&path, catalog.source_digest())?;
        return Ok(idx);
    }
    build_embedding_index(catalog, mode, dims, provider, config).await
}

impl Engine {
    pub fn builder(config: AnnotationConfig, catalog: Catalog, provider: Arc<dyn ModelProvider>) -> EngineBuilder {
        EngineBuilder {
            config,
            catalog,
            provider,
            training: Vec::new(),
            clock: Arc::new(SystemClock),
            options: EngineOptions::default(),
            weights: None,
            plan_cache: None,
            index_dir: None,
            rules: Vec::new(),
            audit: None,
        }
    }

    pub fn config(&self) -> &AnnotationConfig {
        &self.inner.config
    }

    pub fn catalog(&self) -> &Catalog {
        &self.inner.catalog
    }

    pub fn indices(&self) -> &Indices {
        &self.inner.indices
    }

    pub fn provider(&self) -> &Arc<dyn ModelProvider> {
        &self.inner.provider
    }

    pub fn weights(&self) -> &SharedWeights {
        &self.inner.weights
    }

    pub fn plan_cache(&self) -> &PlanCache {
        &self.inner.plan_cache
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.inner.clock
    }

    pub fn monitor(&self) -> &Monitor {
        &self.inner.monitor
    }

    pub fn options(&self) -> &EngineOptions {
        &self.inner.options
    }

    pub fn allocation(&self) -> Option<&FewShotAllocation> {
        self.inner.allocation.as_ref()
    }

    pub fn audit(&self) -> Option<&Arc<AuditStore>> {
        self.inner.audit.as_ref()
    }

    /// Current monitoring snapshot including cache hit rates.
    pub fn stats(&self) -> MonitoringSnapshot {
        self.inner
            .monitor
            .snapshot(self.inner.indices.cache.stats().hit_rate())
    }

    /// Annotate one utterance. `context` overrides the configured domain
    /// context for planning.
    pub async fn annotate(&self, utterance: &str, context: Option<&str>) -> Result<AnnotationResult, PipelineError> {
        self.annotate_with_id(None, utterance, context).await
    }

    pub async fn annotate_with_id(
        &self,
        id: Option<&str>,
        utterance: &str,
        context: Option<&str>,
    ) -> Result<AnnotationResult, PipelineError> {
        let inner = &self.inner;
        let utterance = utterance.trim();
        if utterance.is_empty() {
            return Err(PipelineError::EmptyUtterance);
        }
        let started = tokio::time::Instant::now();
        let config = inner.config.as_ref();
        let domain_context = context.unwrap_or(&config.domain_context);
        let plan = if inner.options.use_planner {
            plan_query(utterance, domain_context, config, inner.provider.as_ref(), &inner.plan_cache)
                .await
                .map_err(|_| PipelineError::EmptyUtterance)?
        } else {
            QueryPlan::passthrough(utterance, "planning disabled")
        };

        let specs: Vec<AgentSpec> = inner.options.agents.iter().map(|a| AgentSpec::for_agent(*a)).collect();
        let runs: Vec<AgentRun> = join_all(specs.iter().map(|spec| {
            let few_shots = inner
                .allocation
                .as_ref()
                .map(|a| a.for_agent(spec.agent_id))
                .unwrap_or(&[]);
            let plan = &plan;
            async move {
                let _permit = inner.workers.acquire().await.expect("worker pool open");
                run_ranker(
                    spec,
                    plan,
                    &inner.catalog,
                    &inner.indices,
                    few_shots,
                    config,
                    inner.provider.as_ref(),
                )
                .await
            }
        }))
        .await;

        let aggs = match aggregate(&runs) {
            Ok(a) => a,
            Err(_) => {
                let statuses = runs
                    .iter()
                    .map(|r| AgentFailure {
                        agent_id: r.agent_id,
                        status: r.status,
                        error: r.error.clone(),
                    })
                    .collect();
                inner.monitor.record_failure(started.elapsed().as_millis() as u64);
                if let Some(store) = &inner.audit {
                    let statuses = runs.iter().map(|r| (r.agent_id, r.status)).collect();
                    if let Err(e) = store.append(utterance, None, statuses) {
                        tracing::error!(error = %e, "audit append failed");
                    }
                }
                return Err(PipelineError::AllAgentsFailed { statuses });
            }
        };
        let weights = inner.weights.read();
        let judge = if inner.options.use_judge {
            judge_rerank(
                &plan,
                &aggs,
                &runs,
                &inner.catalog,
                config,
                inner.provider.as_ref(),
                &weights,
                &inner.rules,
            )
            .await
        } else {
            let mut r = fallback_rank(&aggs, &weights, config.top_n_results, config.support_bonus);
            for rule in &inner.rules {
                rule.apply(&plan, &mut r.ranked);
            }
            r
        };
        let routing = route(&judge, &config.confidence_thresholds)
            .unwrap_or_else(|_| RoutingDecision::from_band(Confidence::Low));
        let degraded = runs.iter().any(|r| r.status != AgentStatus::Ok);
        let result = AnnotationResult {
            utterance_id: id.map(str::to_string).unwrap_or_else(|| utterance_id(utterance)),
            utterance: utterance.to_string(),
            plan,
            runs,
            judge,
            routing,
            total_latency_ms: started.elapsed().as_millis() as u64,
            degraded,
        };
        inner.monitor.record(RequestSample::from_result(&result));
        if let Some(store) = &inner.audit {
            if let Err(e) = store.append(utterance, Some(result.audit_summary()), result.agent_statuses()) {
                tracing::error!(error = %e, "audit append failed");
            }
        }
        Ok(result)
    }

    /// Recompute agent weights if the configured period has elapsed.
    pub fn maybe_recompute_weights(&self) -> bool {
        let period = i64::try_from(self.inner.config.weight_recompute_period_s.saturating_mul(1000)).unwrap_or(i64::MAX);
        self.inner.weights.maybe_recompute(self.inner.clock.now_ms(), period)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn routing_examples() {
        let t = ConfidenceThresholds::default();
        assert_eq!(route_score(94, 3, &t), RoutingDecision::from_band(Confidence::High));
        assert_eq!(route_score(94, 3, &t).action, RoutingAction::AutoAccept);
        assert_eq!(route_score(90, 1, &t).action, RoutingAction::AutoAcceptFlagged);
        assert_eq!(route_score(40, 1, &t).action, RoutingAction::HumanReview);
    }
}
