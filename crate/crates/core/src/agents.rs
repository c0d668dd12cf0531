//! The query planner and the four ranker agents.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::clock::Clock;
use crate::config::AnnotationConfig;
use crate::knowledge_base::{Catalog, EmbeddingMode, TrainingExample};
use crate::prompting::{
    build_planner_prompt, build_ranker_prompt, parse_structured_with_limit, parse_with, recovery, resolve_candidates,
    ParseError, ParseStage, PromptCandidate, ResolvedCandidate, StructuredVerdict,
};
use crate::provider::{complete_with_deadline, with_retry, ChatRequest, ModelProvider, ProviderError, RetryPolicy};
use crate::retrieval::{Bm25Index, EmbeddingCache, EmbeddingIndex};
use crate::text::{md5_hex, tokenize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentId {
    PrimaryNoEmb,
    FullNoEmb,
    PrimaryEmb,
    FullEmb,
}

impl AgentId {
    pub const ALL: [AgentId; 4] = [Self::PrimaryNoEmb, Self::FullNoEmb, Self::PrimaryEmb, Self::FullEmb];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::PrimaryNoEmb => "primary_no_emb",
            Self::FullNoEmb => "full_no_emb",
            Self::PrimaryEmb => "primary_emb",
            Self::FullEmb => "full_emb",
        }
    }

    pub fn uses_embeddings(self) -> bool {
        matches!(self, Self::PrimaryEmb | Self::FullEmb)
    }

    pub fn uses_secondary(self) -> bool {
        matches!(self, Self::FullNoEmb | Self::FullEmb)
    }

    pub fn embedding_mode(self) -> EmbeddingMode {
        if self.uses_secondary() {
            EmbeddingMode::FullContext
        } else {
            EmbeddingMode::PrimaryOnly
        }
    }
}

impl std::fmt::Display for AgentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AgentId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown agent `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emphasis {
    ExactMatch,
    SemanticSimilarity,
    ContextUnderstanding,
    Combined,
}

impl Emphasis {
    /// Agent-specific instruction appended to the ranker task.
    pub fn instruction(self) -> &'static str {
        match self {
            Self::ExactMatch => {
                "Prefer {ANNOTATION_TYPE_PLURAL} whose wording directly matches the key terms of the {USER_INPUT_LABEL}."
            }
            Self::SemanticSimilarity => {
                "Prefer {ANNOTATION_TYPE_PLURAL} that mean the same thing as the {USER_INPUT_LABEL}, even when worded differently."
            }
            Self::ContextUnderstanding => {
                "Use the full content of each {ANNOTATION_LOWER} to judge whether it actually answers the {USER_INPUT_LABEL}."
            }
            Self::Combined => {
                "Weigh wording, meaning and full {ANNOTATION_LOWER} content together when ranking."
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub agent_id: AgentId,
    pub uses_embeddings: bool,
    pub uses_secondary: bool,
    pub temperature: f64,
    pub emphasis: Emphasis,
}

impl AgentSpec {
    pub fn for_agent(agent_id: AgentId) -> Self {
        let (temperature, emphasis) = match agent_id {
            AgentId::PrimaryNoEmb => (0.10, Emphasis::ExactMatch),
            AgentId::PrimaryEmb => (0.12, Emphasis::SemanticSimilarity),
            AgentId::FullNoEmb => (0.13, Emphasis::ContextUnderstanding),
            AgentId::FullEmb => (0.15, Emphasis::Combined),
        };
        Self {
            agent_id,
            uses_embeddings: agent_id.uses_embeddings(),
            uses_secondary: agent_id.uses_secondary(),
            temperature,
            emphasis,
        }
    }

    pub fn all() -> Vec<Self> {
        AgentId::ALL.into_iter().map(Self::for_agent).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryPlan {
    pub original_query: String,
    pub intent: String,
    pub needs_expansion: bool,
    pub expanded_query: String,
    pub reasoning: String,
    pub cache_hit: bool,
    /// The planner failed and the raw query is used unchanged.
    #[serde(default)]
    pub fallback: bool,
}

impl QueryPlan {
    /// A plan that leaves the query as-is.
    pub fn passthrough(query: &str, reasoning: impl Into<String>) -> Self {
        Self {
            original_query: query.to_string(),
            intent: String::new(),
            needs_expansion: false,
            expanded_query: query.to_string(),
            reasoning: reasoning.into(),
            cache_hit: false,
            fallback: false,
        }
    }

    /// Text used for lexical retrieval: original plus expansion.
    pub fn retrieval_text(&self) -> String {
        if self.needs_expansion && self.expanded_query != self.original_query {
            format!("{} {}", self.original_query, self.expanded_query)
        } else {
            self.original_query.clone()
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error("query is empty")]
    EmptyQuery,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PlanCacheRow {
    key: String,
    plan: QueryPlan,
    expires_at: i64,
}

/// TTL cache of query plans keyed by MD5 of (query, domain context).
pub struct PlanCache {
    ttl_ms: i64,
    clock: Arc<dyn Clock>,
    entries: Mutex<HashMap<String, (QueryPlan, i64)>>,
    persist: Option<Mutex<File>>,
}

impl std::fmt::Debug for PlanCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PlanCache")
            .field("ttl_ms", &self.ttl_ms)
            .field("len", &self.len())
            .finish()
    }
}

impl PlanCache {
    pub fn new(ttl_s: u64, clock: Arc<dyn Clock>) -> Self {
        Self {
            ttl_ms: i64::try_from(ttl_s.saturating_mul(1000)).unwrap_or(i64::MAX),
            clock,
            entries: Mutex::new(HashMap::new()),
            persist: None,
        }
    }

    /// Load unexpired rows from `path` and append new entries to it.
    pub fn persistent(ttl_s: u64, clock: Arc<dyn Clock>, path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref();
        let mut cache = Self::new(ttl_s, clock);
        if path.exists() {
            let now = cache.clock.now_ms();
            let mut entries = cache.entries.lock();
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                if let Ok(row) = serde_json::from_str::<PlanCacheRow>(&line) {
                    if row.expires_at > now {
                        entries.insert(row.key, (row.plan, row.expires_at));
                    }
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        cache.persist = Some(Mutex::new(file));
        Ok(cache)
    }

    pub fn key(query: &str, domain_context: &str) -> String {
        md5_hex(format!("{query}\x1f{domain_context}"))
    }

    pub fn get(&self, key: &str) -> Option<QueryPlan> {
        let now = self.clock.now_ms();
        let mut entries = self.entries.lock();
        match entries.get(key) {
            Some((plan, expires)) if *expires > now => Some(plan.clone()),
            Some(_) => {
                entries.remove(key);
                None
            }
            None => None,
        }
    }

    pub fn insert(&self, key: String, plan: QueryPlan) {
        let expires_at = self.clock.now_ms().saturating_add(self.ttl_ms);
        if let Some(file) = &self.persist {
            let row = PlanCacheRow {
                key: key.clone(),
                plan: plan.clone(),
                expires_at,
            };
            if let Ok(line) = serde_json::to_string(&row) {
                if let Err(e) = writeln!(file.lock(), "{line}") {
                    tracing::warn!(error = %e, "could not persist plan cache entry");
                }
            }
        }
        self.entries.lock().insert(key, (plan, expires_at));
    }

    pub fn len(&self) -> usize {
        self.entries.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn validate_plan(v: &Value) -> Result<(String, bool, String, String), ParseError> {
    let m = recovery::obj(v, "$")?;
    let intent = recovery::opt_str(m, "intent")?;
    let needs = match m.get("needs_expansion") {
        Some(Value::Bool(b)) => *b,
        Some(Value::String(s)) if s.eq_ignore_ascii_case("true") => true,
        Some(Value::String(s)) if s.eq_ignore_ascii_case("false") => false,
        Some(_) => return Err(ParseError::violation("needs_expansion", "expected a boolean")),
        None => return Err(ParseError::violation("needs_expansion", "missing")),
    };
    let expanded = recovery::opt_str(m, "expanded_query")?;
    let reasoning = recovery::opt_str(m, "reasoning")?;
    Ok((intent, needs, expanded, reasoning))
}

/// True when the expansion keeps at least one content token of the original,
/// by exact match, shared prefix of three or more characters, or acronym
/// ("cc" for "credit card").
pub fn expansion_is_grounded(original: &str, expanded: &str) -> bool {
    let orig = tokenize(original);
    let exp = tokenize(expanded);
    if orig.is_empty() {
        return true;
    }
    orig.iter().any(|o| {
        let direct = exp.iter().any(|e| {
            e == o || (o.len().min(e.len()) >= 3 && (e.starts_with(o.as_str()) || o.starts_with(e.as_str())))
        });
        let n = o.chars().count();
        let acronym = n >= 2
            && o.chars().all(char::is_alphabetic)
            && exp.windows(n).any(|w| {
                w.iter()
                    .filter_map(|t| t.chars().next())
                    .eq(o.chars())
            });
        direct || acronym
    })
}

fn retry_policy(config: &AnnotationConfig) -> RetryPolicy {
    RetryPolicy {
        max_retries: config.max_retries,
        base_delay_ms: config.retry_base_delay_ms,
    }
}

/// Call `provider` with retries, the whole exchange bounded by `deadline_ms`.
pub(crate) async fn call_with_budget(
    provider: &dyn ModelProvider,
    req: &ChatRequest,
    config: &AnnotationConfig,
) -> (Result<String, ProviderError>, u32) {
    let attempts = std::sync::atomic::AtomicU32::new(0);
    let run = with_retry(retry_policy(config), || {
        attempts.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        complete_with_deadline(provider, req)
    });
    match tokio::time::timeout(Duration::from_millis(req.deadline_ms), run).await {
        Ok(report) => (report.result.map(|r| r.text), report.attempts),
        Err(_) => (
            Err(ProviderError::Timeout {
                deadline_ms: req.deadline_ms,
            }),
            attempts.load(std::sync::atomic::Ordering::SeqCst),
        ),
    }
}

/// Analyse and possibly expand `query`. Provider or parse failures degrade to
/// a pass-through plan, which is not cached.
pub async fn plan_query(
    query: &str,
    domain_context: &str,
    config: &AnnotationConfig,
    provider: &dyn ModelProvider,
    cache: &PlanCache,
) -> Result<QueryPlan, PlanError> {
    let query = query.trim();
    if query.is_empty() {
        return Err(PlanError::EmptyQuery);
    }
    let key = PlanCache::key(query, domain_context);
    if let Some(mut plan) = cache.get(&key) {
        plan.cache_hit = true;
        return Ok(plan);
    }
    let fallback = |why: String| {
        tracing::warn!(reason = %why, "query planning fell back to the raw query");
        QueryPlan {
            fallback: true,
            ..QueryPlan::passthrough(query, format!("planner fallback: {why}; using raw query"))
        }
    };
    let (system, user) = match build_planner_prompt(config, query, domain_context) {
        Ok(p) => p,
        Err(e) => return Ok(fallback(e.to_string())),
    };
    let mut req = ChatRequest::new(system, user);
    req.temperature = crate::provider::RANKER_TEMPERATURE;
    req.max_output_chars = config.max_output_chars;
    req.deadline_ms = config.planner_timeout_ms;
    req.label = "planner".into();
    let text = match call_with_budget(provider, &req, config).await.0 {
        Ok(t) => t,
        Err(e) => return Ok(fallback(e.to_string())),
    };
    let (intent, needs, expanded, reasoning) = match parse_with(&text, validate_plan) {
        Ok(p) => p.value,
        Err(e) => return Ok(fallback(e.to_string())),
    };
    let expanded = expanded.trim().to_string();
    let plan = if needs && !expanded.is_empty() && expanded != query {
        if !expansion_is_grounded(query, &expanded) {
            return Ok(fallback(format!("expansion `{expanded}` shares no terms with the query")));
        }
        QueryPlan {
            original_query: query.to_string(),
            intent,
            needs_expansion: true,
            expanded_query: expanded,
            reasoning,
            cache_hit: false,
            fallback: false,
        }
    } else {
        QueryPlan {
            intent,
            ..QueryPlan::passthrough(query, reasoning)
        }
    };
    cache.insert(key, plan.clone());
    Ok(plan)
}

/// Retrieval structures shared by the ranker agents.
#[derive(Debug)]
pub struct Indices {
    pub bm25: Bm25Index,
    pub primary: Option<EmbeddingIndex>,
    pub full: Option<EmbeddingIndex>,
    pub cache: EmbeddingCache,
}

impl Indices {
    pub fn lexical_only(catalog: &Catalog, cache_capacity: usize) -> Self {
        Self {
            bm25: Bm25Index::from_catalog(catalog),
            primary: None,
            full: None,
            cache: EmbeddingCache::new(cache_capacity),
        }
    }

    pub fn embedding(&self, mode: EmbeddingMode) -> Option<&EmbeddingIndex> {
        match mode {
            EmbeddingMode::PrimaryOnly => self.primary.as_ref(),
            EmbeddingMode::FullContext => self.full.as_ref(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentStatus {
    Ok,
    Timeout,
    ProviderError,
    ParseError,
}

impl AgentStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ok => "ok",
            Self::Timeout => "timeout",
            Self::ProviderError => "provider_error",
            Self::ParseError => "parse_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRun {
    pub agent_id: AgentId,
    pub verdict: Option<StructuredVerdict>,
    pub resolved: Vec<ResolvedCandidate>,
    #[serde(default)]
    pub unmatched: Vec<String>,
    pub status: AgentStatus,
    pub latency_ms: u64,
    pub parse_stage: Option<ParseStage>,
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub attempts: u32,
    /// Catalog ids offered to the model, in retrieval order.
    #[serde(default)]
    pub candidate_pool: Vec<String>,
    #[serde(default)]
    pub dropped_candidates: usize,
}

impl AgentRun {
    fn failed(agent_id: AgentId, status: AgentStatus, error: String, started: tokio::time::Instant) -> Self {
        Self {
            agent_id,
            verdict: None,
            resolved: Vec::new(),
            unmatched: Vec::new(),
            status,
            latency_ms: started.elapsed().as_millis() as u64,
            parse_stage: None,
            error: Some(error),
            attempts: 0,
            candidate_pool: Vec::new(),
            dropped_candidates: 0,
        }
    }

    /// Contributes at least one resolved candidate.
    pub fn is_usable(&self) -> bool {
        self.status == AgentStatus::Ok && !self.resolved.is_empty()
    }

    pub fn top_id(&self) -> Option<&str> {
        self.resolved.first().map(|r| r.id.as_str())
    }
}

fn status_for(err: &ProviderError) -> AgentStatus {
    match err {
        ProviderError::Timeout { .. } => AgentStatus::Timeout,
        _ => AgentStatus::ProviderError,
    }
}

/// Candidate pool for `spec`: kNN over the matching embedding index for
/// embedding agents, otherwise the whole catalog (small catalogs) or the BM25
/// top-k, both in BM25 order.
pub async fn candidate_pool(
    spec: &AgentSpec,
    plan: &QueryPlan,
    catalog: &Catalog,
    indices: &Indices,
    config: &AnnotationConfig,
    provider: &dyn ModelProvider,
) -> Result<Vec<(String, f64)>, ProviderError> {
    if spec.uses_embeddings {
        let mode = spec.agent_id.embedding_mode();
        let index = indices
            .embedding(mode)
            .ok_or_else(|| ProviderError::Validation(format!("no {} embedding index loaded", mode.as_str())))?;
        let query_vec = indices
            .cache
            .get_or_embed(&plan.expanded_query, mode.as_str(), index.dims(), provider)
            .await
            .map_err(|e| match e {
                crate::retrieval::RetrievalError::Provider(p) => p,
                other => ProviderError::Validation(other.to_string()),
            })?;
        return index
            .knn(&query_vec, config.retrieval_top_k)
            .map_err(|e| ProviderError::Validation(e.to_string()));
    }
    let k = if catalog.len() <= config.full_catalog_threshold {
        catalog.len()
    } else {
        config.retrieval_top_k
    };
    Ok(indices.bm25.topk(&plan.retrieval_text(), k))
}

/// Run one ranker agent end to end. Never fails: every problem is encoded in
/// the returned status.
#[allow(clippy::too_many_arguments)]
pub async fn run_ranker(
    spec: &AgentSpec,
    plan: &QueryPlan,
    catalog: &Catalog,
    indices: &Indices,
    few_shots: &[TrainingExample],
    config: &AnnotationConfig,
    provider: &dyn ModelProvider,
) -> AgentRun {
    let started = tokio::time::Instant::now();
    let budget = Duration::from_millis(config.agent_timeout_ms);
    let work = run_ranker_inner(spec, plan, catalog, indices, few_shots, config, provider, started);
    match tokio::time::timeout(budget, work).await {
        Ok(run) => run,
        Err(_) => AgentRun::failed(
            spec.agent_id,
            AgentStatus::Timeout,
            format!("no answer within {}ms", config.agent_timeout_ms),
            started,
        ),
    }
}

#[allow(clippy::too_many_arguments)]
async fn run_ranker_inner(
    spec: &AgentSpec,
    plan: &QueryPlan,
    catalog: &Catalog,
    indices: &Indices,
    few_shots: &[TrainingExample],
    config: &AnnotationConfig,
    provider: &dyn ModelProvider,
    started: tokio::time::Instant,
) -> AgentRun {
    let id = spec.agent_id;
    let pool = match candidate_pool(spec, plan, catalog, indices, config, provider).await {
        Ok(p) => p,
        Err(e) => return AgentRun::failed(id, status_for(&e), e.to_string(), started),
    };
    let candidates: Vec<PromptCandidate<'_>> = pool
        .iter()
        .filter_map(|(cid, s)| {
            catalog.get(cid).map(|entry| PromptCandidate {
                entry,
                retrieval_score: *s,
            })
        })
        .collect();
    let bundle = match build_ranker_prompt(config, spec, plan, &candidates, few_shots, catalog) {
        Ok(b) => b,
        Err(e) => return AgentRun::failed(id, AgentStatus::ParseError, e.to_string(), started),
    };
    let mut req = ChatRequest::new(bundle.system_prompt, bundle.user_prompt);
    req.temperature = bundle.temperature;
    req.max_output_chars = config.max_output_chars;
    req.deadline_ms = config.agent_timeout_ms;
    req.label = format!("ranker:{}", id.as_str());
    let (result, attempts) = call_with_budget(provider, &req, config).await;
    let mut run = AgentRun {
        candidate_pool: bundle.shown_ids,
        dropped_candidates: bundle.dropped_candidates,
        attempts,
        ..AgentRun::failed(id, AgentStatus::Ok, String::new(), started)
    };
    run.error = None;
    let text = match result {
        Ok(t) => t,
        Err(e) => {
            run.status = status_for(&e);
            run.error = Some(e.to_string());
            run.latency_ms = started.elapsed().as_millis() as u64;
            return run;
        }
    };
    match parse_structured_with_limit(&text, config.top_n_results) {
        Ok(parsed) => {
            let resolution = resolve_candidates(&parsed.value, catalog, config.fuzzy_match_threshold);
            run.resolved = resolution.resolved;
            run.unmatched = resolution.unmatched;
            run.verdict = Some(parsed.value);
            run.parse_stage = Some(parsed.stage);
        }
        Err(e) => {
            run.status = AgentStatus::ParseError;
            run.error = Some(e.to_string());
        }
    }
    run.latency_ms = started.elapsed().as_millis() as u64;
    run
}

/// Path next to `base` with `suffix` appended to the file name.
pub(crate) fn sibling(base: &Path, suffix: &str) -> PathBuf {
    let mut name = base.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    base.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::provider::MockProvider;

    fn config() -> AnnotationConfig {
        AnnotationConfig::from_json(r#"{"annotation_type":"FAQ","primary_column":"question","secondary_column":"answer"}"#)
            .unwrap()
    }

    #[test]
    fn specs_are_consistent_with_ids() {
        for spec in AgentSpec::all() {
            assert_eq!(spec.uses_embeddings, spec.agent_id.as_str().ends_with("_emb") && !spec.agent_id.as_str().ends_with("no_emb"));
            assert_eq!(spec.uses_secondary, spec.agent_id.as_str().starts_with("full"));
            assert!((0.1..=0.15).contains(&spec.temperature));
        }
    }

    #[test]
    fn grounding_lint() {
        assert!(expansion_is_grounded("cash back", "cash back rewards"));
        assert!(expansion_is_grounded("lost deb", "lost debit card"));
        assert!(expansion_is_grounded("cc", "credit card, charge card"));
        assert!(!expansion_is_grounded("cc", "mortgage rates"));
    }

    #[tokio::test]
    async fn planner_caches_and_expires() {
        let clock = Arc::new(ManualClock::new(0));
        let cache = PlanCache::new(60, clock.clone());
        let provider = MockProvider::new(1);
        let cfg = config();
        let a = plan_query("cash back", "", &cfg, &provider, &cache).await.unwrap();
        assert!(a.needs_expansion && !a.cache_hit);
        let b = plan_query("cash back", "", &cfg, &provider, &cache).await.unwrap();
        assert!(b.cache_hit);
        assert_eq!(provider.calls_for("planner"), 1);
        clock.advance_ms(60_001);
        let c = plan_query("cash back", "", &cfg, &provider, &cache).await.unwrap();
        assert!(!c.cache_hit);
        assert_eq!(provider.calls_for("planner"), 2);
    }

    #[tokio::test]
    async fn numeric_query_is_preserved() {
        let cache = PlanCache::new(60, Arc::new(ManualClock::new(0)));
        let plan = plan_query("10101", "", &config(), &MockProvider::new(0), &cache).await.unwrap();
        assert!(!plan.needs_expansion);
        assert_eq!(plan.expanded_query, "10101");
    }

    #[tokio::test]
    async fn empty_query_rejected() {
        let cache = PlanCache::new(60, Arc::new(ManualClock::new(0)));
        assert!(matches!(
            plan_query("   ", "", &config(), &MockProvider::new(0), &cache).await,
            Err(PlanError::EmptyQuery)
        ));
    }

    #[test]
    fn persisted_cache_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plans.jsonl");
        let clock: Arc<dyn Clock> = Arc::new(ManualClock::new(0));
        let cache = PlanCache::persistent(10, clock.clone(), &path).unwrap();
        cache.insert("k".into(), QueryPlan::passthrough("q", "r"));
        drop(cache);
        let again = PlanCache::persistent(10, clock, &path).unwrap();
        assert_eq!(again.get("k").unwrap().original_query, "q");
    }
}
