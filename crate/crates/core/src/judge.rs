//! Consensus over ranker outputs: candidate aggregation, the judge reranker,
//! weighted score aggregation as its fallback, and per-agent weights learned
//! from a rolling window of review outcomes.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agents::{call_with_budget, AgentId, AgentRun, QueryPlan};
use crate::config::AnnotationConfig;
use crate::knowledge_base::Catalog;
use crate::prompting::{
    build_judge_prompt, parse_confidence, parse_with, recovery, Confidence, JudgeCandidateView, ParseError,
};
use crate::provider::{ChatRequest, ModelProvider, JUDGE_TEMPERATURE};
use crate::text::{jaccard, normalize};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum JudgeError {
    #[error("no agent produced a usable ranking")]
    NoUsableRuns,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WeightSnapshot {
    pub agent_id: AgentId,
    pub correct: usize,
    pub total: usize,
    pub weight: f64,
    pub as_of: i64,
}

/// Per-agent reliability from the most recent `window_size` outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentWeights {
    window_size: usize,
    alpha: f64,
    windows: BTreeMap<AgentId, VecDeque<bool>>,
    weights: BTreeMap<AgentId, f64>,
    as_of: i64,
}

impl Default for AgentWeights {
    fn default() -> Self {
        Self::new(1000, 1.0)
    }
}

impl AgentWeights {
    pub fn new(window_size: usize, alpha: f64) -> Self {
        let mut w = Self {
            window_size: window_size.max(1),
            alpha,
            windows: AgentId::ALL.iter().map(|a| (*a, VecDeque::new())).collect(),
            weights: BTreeMap::new(),
            as_of: 0,
        };
        w.recompute(0);
        w
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn as_of(&self) -> i64 {
        self.as_of
    }

    /// Append an outcome, evicting the oldest beyond the window. Weights
    /// change only on [`recompute`](Self::recompute).
    pub fn record_outcome(&mut self, agent: AgentId, correct: bool) {
        let ring = self.windows.entry(agent).or_default();
        ring.push_back(correct);
        while ring.len() > self.window_size {
            ring.pop_front();
        }
    }

    pub fn counts(&self, agent: AgentId) -> (usize, usize) {
        self.windows
            .get(&agent)
            .map(|r| (r.iter().filter(|c| **c).count(), r.len()))
            .unwrap_or((0, 0))
    }

    /// (correct + alpha) / (total + 2 alpha)
    pub fn formula(&self, correct: usize, total: usize) -> f64 {
        (correct as f64 + self.alpha) / (total as f64 + 2.0 * self.alpha)
    }

    pub fn recompute(&mut self, now_ms: i64) {
        let fresh: BTreeMap<AgentId, f64> = AgentId::ALL
            .iter()
            .chain(self.windows.keys())
            .map(|a| {
                let (c, t) = self.counts(*a);
                (*a, self.formula(c, t))
            })
            .collect();
        self.weights = fresh;
        self.as_of = now_ms;
    }

    pub fn weight(&self, agent: AgentId) -> f64 {
        self.weights
            .get(&agent)
            .copied()
            .unwrap_or_else(|| self.formula(0, 0))
    }

    /// Multiply every weight by `c`; used to check scale invariance.
    pub fn scaled(&self, c: f64) -> Self {
        let mut s = self.clone();
        s.weights.values_mut().for_each(|w| *w *= c);
        s
    }

    /// Set a weight directly (tests and restores).
    pub fn set_weight(&mut self, agent: AgentId, weight: f64) {
        self.weights.insert(agent, weight);
    }

    pub fn snapshot(&self) -> Vec<WeightSnapshot> {
        AgentId::ALL
            .iter()
            .map(|a| {
                let (correct, total) = self.counts(*a);
                WeightSnapshot {
                    agent_id: *a,
                    correct,
                    total,
                    weight: self.weight(*a),
                    as_of: self.as_of,
                }
            })
            .collect()
    }

    /// Append the current weights to a JSONL file.
    pub fn save_snapshot(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        for row in self.snapshot() {
            writeln!(f, "{}", serde_json::to_string(&row)?)?;
        }
        f.sync_all()
    }

    /// Restore from the latest snapshot per agent. Outcome order within a
    /// window is not stored, so windows are rebuilt as `correct` successes
    /// followed by failures.
    pub fn load_snapshot(path: impl AsRef<Path>, window_size: usize, alpha: f64) -> std::io::Result<Self> {
        let mut latest: BTreeMap<AgentId, WeightSnapshot> = BTreeMap::new();
        for line in BufReader::new(std::fs::File::open(path)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: WeightSnapshot = serde_json::from_str(&line)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            latest.insert(row.agent_id, row);
        }
        let mut w = Self::new(window_size, alpha);
        let mut as_of = 0;
        for (agent, row) in latest {
            for i in 0..row.total {
                w.record_outcome(agent, i < row.correct);
            }
            w.weights.insert(agent, row.weight);
            as_of = as_of.max(row.as_of);
        }
        w.as_of = as_of;
        Ok(w)
    }
}

/// Weights shared across requests. Readers take a consistent clone.
#[derive(Debug, Clone, Default)]
pub struct SharedWeights {
    inner: Arc<RwLock<AgentWeights>>,
}

impl SharedWeights {
    pub fn new(weights: AgentWeights) -> Self {
        Self {
            inner: Arc::new(RwLock::new(weights)),
        }
    }

    pub fn read(&self) -> AgentWeights {
        self.inner.read().clone()
    }

    pub fn record_outcome(&self, agent: AgentId, correct: bool) {
        self.inner.write().record_outcome(agent, correct);
    }

    pub fn record_outcomes(&self, outcomes: &[(AgentId, bool)]) {
        let mut w = self.inner.write();
        for (a, c) in outcomes {
            w.record_outcome(*a, *c);
        }
    }

    pub fn recompute(&self, now_ms: i64) {
        self.inner.write().recompute(now_ms);
    }

    /// Recompute when at least `period_ms` has passed since the last one.
    pub fn maybe_recompute(&self, now_ms: i64, period_ms: i64) -> bool {
        let mut w = self.inner.write();
        if now_ms - w.as_of >= period_ms {
            w.recompute(now_ms);
            true
        } else {
            false
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateAggregate {
    pub annotation_id: String,
    pub per_agent_scores: BTreeMap<AgentId, u8>,
    pub support: usize,
    pub reasonings: Vec<(AgentId, String)>,
}

impl CandidateAggregate {
    pub fn max_score(&self) -> u8 {
        self.per_agent_scores.values().copied().max().unwrap_or(0)
    }

    pub fn mean_score(&self) -> f64 {
        if self.per_agent_scores.is_empty() {
            return 0.0;
        }
        self.per_agent_scores.values().map(|s| f64::from(*s)).sum::<f64>() / self.per_agent_scores.len() as f64
    }
}

/// Merge usable runs by annotation id. Ordered by support, then best score,
/// then id.
pub fn aggregate(runs: &[AgentRun]) -> Result<Vec<CandidateAggregate>, JudgeError> {
    let mut by_id: BTreeMap<String, CandidateAggregate> = BTreeMap::new();
    let mut any = false;
    for run in runs.iter().filter(|r| r.is_usable()) {
        any = true;
        for c in &run.resolved {
            let agg = by_id.entry(c.id.clone()).or_insert_with(|| CandidateAggregate {
                annotation_id: c.id.clone(),
                per_agent_scores: BTreeMap::new(),
                support: 0,
                reasonings: Vec::new(),
            });
            if agg.per_agent_scores.insert(run.agent_id, c.score).is_none() {
                agg.reasonings.push((run.agent_id, c.reasoning.clone()));
            }
            agg.support = agg.per_agent_scores.len();
        }
    }
    if !any {
        return Err(JudgeError::NoUsableRuns);
    }
    let mut aggs: Vec<_> = by_id.into_values().collect();
    aggs.sort_by(|a, b| {
        b.support
            .cmp(&a.support)
            .then_with(|| b.max_score().cmp(&a.max_score()))
            .then_with(|| a.annotation_id.cmp(&b.annotation_id))
    });
    Ok(aggs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ConsensusStrength {
    Strong,
    Moderate,
    Weak,
}

impl ConsensusStrength {
    pub fn from_support(max_support: usize) -> Self {
        match max_support {
            s if s >= 3 => Self::Strong,
            2 => Self::Moderate,
            _ => Self::Weak,
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "STRONG" => Some(Self::Strong),
            "MODERATE" => Some(Self::Moderate),
            "WEAK" => Some(Self::Weak),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeSource {
    Judge,
    FallbackAggregation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub annotation_id: String,
    pub final_score: u8,
    pub reasoning: String,
    /// Number of agents that proposed this candidate.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeResult {
    pub ranked: Vec<RankedCandidate>,
    pub consensus_strength: ConsensusStrength,
    pub confidence: Confidence,
    pub source: JudgeSource,
}

impl JudgeResult {
    pub fn top(&self) -> Option<&RankedCandidate> {
        self.ranked.first()
    }

    pub fn ids(&self) -> Vec<String> {
        self.ranked.iter().map(|r| r.annotation_id.clone()).collect()
    }
}

fn sort_ranked(ranked: &mut [RankedCandidate]) {
    ranked.sort_by(|a, b| {
        b.final_score
            .cmp(&a.final_score)
            .then_with(|| a.annotation_id.cmp(&b.annotation_id))
    });
}

fn snap(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

/// Weighted score sum. Weights are normalized to mean 1 over the agents that
/// appear in `aggs`, and the best candidate is scaled to 100.
pub fn fallback_rank(aggs: &[CandidateAggregate], weights: &AgentWeights, top_n: usize, support_bonus: f64) -> JudgeResult {
    let present: BTreeSet<AgentId> = aggs
        .iter()
        .flat_map(|a| a.per_agent_scores.keys().copied())
        .collect();
    let mean_w = if present.is_empty() {
        1.0
    } else {
        present.iter().map(|a| weights.weight(*a)).sum::<f64>() / present.len() as f64
    };
    let norm = |a: AgentId| {
        if mean_w > 0.0 {
            weights.weight(a) / mean_w
        } else {
            1.0
        }
    };
    let raws: Vec<f64> = aggs
        .iter()
        .map(|c| {
            let sum: f64 = c
                .per_agent_scores
                .iter()
                .map(|(a, s)| norm(*a) * f64::from(*s))
                .sum();
            sum + support_bonus * (c.support.saturating_sub(1)) as f64
        })
        .collect();
    let max_raw = raws.iter().copied().fold(0.0_f64, f64::max);
    let mut scored: Vec<(f64, RankedCandidate)> = aggs
        .iter()
        .zip(&raws)
        .map(|(c, raw)| {
            let scaled = if max_raw > 0.0 { snap(100.0 * raw / max_raw) } else { 0.0 };
            let candidate = RankedCandidate {
                annotation_id: c.annotation_id.clone(),
                final_score: scaled.round().clamp(0.0, 100.0) as u8,
                reasoning: format!(
                    "Weighted score aggregation over {} agent(s): {}",
                    c.support,
                    c.per_agent_scores
                        .iter()
                        .map(|(a, s)| format!("{}={s}", a.as_str()))
                        .collect::<Vec<_>>()
                        .join(", ")
                ),
                support: c.support,
            };
            (scaled, candidate)
        })
        .collect();
    // Unrounded score first so that rounding never reorders candidates.
    scored.sort_by(|(sa, a), (sb, b)| sb.total_cmp(sa).then_with(|| a.annotation_id.cmp(&b.annotation_id)));
    let mut ranked: Vec<RankedCandidate> = scored.into_iter().map(|(_, c)| c).collect();
    ranked.truncate(top_n);
    let max_support = aggs.iter().map(|a| a.support).max().unwrap_or(0);
    let confidence = ranked
        .first()
        .and_then(|top| aggs.iter().find(|a| a.annotation_id == top.annotation_id))
        .map(|a| {
            let mean = a.mean_score();
            if mean >= 85.0 && a.support >= 2 {
                Confidence::High
            } else if mean >= 60.0 {
                Confidence::Medium
            } else {
                Confidence::Low
            }
        })
        .unwrap_or(Confidence::Low);
    JudgeResult {
        ranked,
        consensus_strength: ConsensusStrength::from_support(max_support),
        confidence,
        source: JudgeSource::FallbackAggregation,
    }
}

/// Post-ranking business rule. None ship by default.
pub trait RerankRule: Send + Sync {
    fn apply(&self, plan: &QueryPlan, ranked: &mut Vec<RankedCandidate>);
}

struct JudgeItem {
    id: Option<String>,
    title: String,
    score: u8,
    reasoning: String,
}

struct JudgeOutput {
    items: Vec<JudgeItem>,
    consensus: ConsensusStrength,
    confidence: Confidence,
}

fn validate_judge(v: &Value) -> Result<JudgeOutput, ParseError> {
    let m = recovery::obj(v, "$")?;
    let arr = match m.get("reranked_annotations") {
        Some(Value::Array(a)) if !a.is_empty() => a,
        Some(Value::Array(_)) => return Err(ParseError::violation("reranked_annotations", "empty")),
        Some(_) => return Err(ParseError::violation("reranked_annotations", "expected an array")),
        None => return Err(ParseError::violation("reranked_annotations", "missing")),
    };
    let items = arr
        .iter()
        .map(|item| {
            let im = recovery::obj(item, "reranked_annotations")?;
            let id = match im.get("annotation_id") {
                Some(Value::String(s)) => Some(s.clone()),
                Some(Value::Number(n)) => Some(n.to_string()),
                _ => None,
            };
            Ok(JudgeItem {
                id,
                title: recovery::opt_str(im, "annotation")?,
                score: recovery::score(im, "final_score")?,
                reasoning: recovery::opt_str(im, "reasoning")?,
            })
        })
        .collect::<Result<Vec<_>, ParseError>>()?;
    let cs = recovery::req_str(m, "consensus_strength")?;
    let consensus = ConsensusStrength::parse(&cs)
        .ok_or_else(|| ParseError::violation("consensus_strength", format!("`{cs}` is not STRONG, MODERATE or WEAK")))?;
    Ok(JudgeOutput {
        items,
        consensus,
        confidence: parse_confidence(m, "confidence")?,
    })
}

/// Map a judge item to an aggregate id: its explicit id when it is a
/// candidate, else its title matched against candidate texts.
fn match_item(item: &JudgeItem, aggs: &[CandidateAggregate], catalog: &Catalog, threshold: f64) -> Option<String> {
    if let Some(id) = &item.id {
        if aggs.iter().any(|a| &a.annotation_id == id) {
            return Some(id.clone());
        }
    }
    let title = normalize(&item.title);
    if title.is_empty() {
        return None;
    }
    let text = |a: &CandidateAggregate| catalog.get(&a.annotation_id).map(|e| e.primary_text.clone());
    if let Some(a) = aggs.iter().find(|a| text(a).is_some_and(|t| normalize(&t) == title)) {
        return Some(a.annotation_id.clone());
    }
    aggs.iter()
        .filter_map(|a| text(a).map(|t| (jaccard(&item.title, &t), a)))
        .filter(|(s, _)| *s >= threshold)
        .max_by(|x, y| x.0.total_cmp(&y.0).then_with(|| y.1.annotation_id.cmp(&x.1.annotation_id)))
        .map(|(_, a)| a.annotation_id.clone())
}

/// Ask the judge model to rerank `aggs`. Any failure (timeout, provider
/// error, unparseable output, nothing usable named) yields
/// [`fallback_rank`].
#[allow(clippy::too_many_arguments)]
pub async fn judge_rerank(
    plan: &QueryPlan,
    aggs: &[CandidateAggregate],
    runs: &[AgentRun],
    catalog: &Catalog,
    config: &AnnotationConfig,
    provider: &dyn ModelProvider,
    weights: &AgentWeights,
    rules: &[Arc<dyn RerankRule>],
) -> JudgeResult {
    let fallback = || fallback_rank(aggs, weights, config.top_n_results, config.support_bonus);
    let mut result = match judge_call(plan, aggs, runs, catalog, config, provider).await {
        Ok(r) => r,
        Err(reason) => {
            tracing::info!(%reason, "judge unavailable, using score aggregation");
            fallback()
        }
    };
    for rule in rules {
        rule.apply(plan, &mut result.ranked);
    }
    result
}

async fn judge_call(
    plan: &QueryPlan,
    aggs: &[CandidateAggregate],
    runs: &[AgentRun],
    catalog: &Catalog,
    config: &AnnotationConfig,
    provider: &dyn ModelProvider,
) -> Result<JudgeResult, String> {
    let views: Vec<JudgeCandidateView<'_>> = aggs
        .iter()
        .filter_map(|a| {
            catalog.get(&a.annotation_id).map(|entry| JudgeCandidateView {
                entry,
                agent_scores: a.per_agent_scores.iter().map(|(k, v)| (*k, *v)).collect(),
                reasonings: a.reasonings.clone(),
            })
        })
        .collect();
    let reporting: Vec<AgentId> = runs.iter().filter(|r| r.is_usable()).map(|r| r.agent_id).collect();
    let (system, user) = build_judge_prompt(config, plan, &views, &reporting).map_err(|e| e.to_string())?;
    let mut req = ChatRequest::new(system, user);
    req.temperature = JUDGE_TEMPERATURE;
    req.max_output_chars = config.max_output_chars;
    req.deadline_ms = config.judge_timeout_ms;
    req.label = "judge".into();
    let text = call_with_budget(provider, &req, config).await.0.map_err(|e| e.to_string())?;
    let out = parse_with(&text, validate_judge).map_err(|e| e.to_string())?.value;

    let mut seen = BTreeSet::new();
    let mut ranked = Vec::new();
    for item in &out.items {
        let Some(id) = match_item(item, aggs, catalog, config.fuzzy_match_threshold) else {
            tracing::debug!(title = %item.title, "judge named a candidate outside the aggregate; dropped");
            continue;
        };
        if !seen.insert(id.clone()) {
            continue;
        }
        let support = aggs.iter().find(|a| a.annotation_id == id).map_or(0, |a| a.support);
        ranked.push(RankedCandidate {
            annotation_id: id,
            final_score: item.score,
            reasoning: item.reasoning.clone(),
            support,
        });
    }
    if ranked.is_empty() {
        return Err("judge output named no known candidate".into());
    }
    sort_ranked(&mut ranked);
    ranked.truncate(config.top_n_results);
    Ok(JudgeResult {
        ranked,
        consensus_strength: out.consensus,
        confidence: out.confidence,
        source: JudgeSource::Judge,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::AgentStatus;
    use crate::prompting::{MatchKind, ResolvedCandidate};

    fn run(agent: AgentId, cands: &[(&str, u8)]) -> AgentRun {
        AgentRun {
            agent_id: agent,
            verdict: None,
            resolved: cands
                .iter()
                .map(|(id, s)| ResolvedCandidate {
                    id: id.to_string(),
                    score: *s,
                    reasoning: String::new(),
                    match_kind: MatchKind::Exact,
                })
                .collect(),
            unmatched: vec![],
            status: AgentStatus::Ok,
            latency_ms: 0,
            parse_stage: None,
            error: None,
            attempts: 1,
            candidate_pool: vec![],
            dropped_candidates: 0,
        }
    }

    #[test]
    fn weight_examples() {
        let mut w = AgentWeights::new(1000, 1.0);
        assert!(AgentId::ALL.iter().all(|a| w.weight(*a) == 0.5));
        for i in 0..10 {
            w.record_outcome(AgentId::FullEmb, i != 0);
        }
        w.recompute(1);
        assert!((w.weight(AgentId::FullEmb) - 10.0 / 12.0).abs() < 1e-12);

        let mut w = AgentWeights::new(3, 1.0);
        for c in [true, true, false, false] {
            w.record_outcome(AgentId::PrimaryEmb, c);
        }
        w.recompute(1);
        assert_eq!(w.counts(AgentId::PrimaryEmb), (1, 3));
        assert_eq!(w.weight(AgentId::PrimaryEmb), 0.4);
    }

    #[test]
    fn aggregation_merges_by_id() {
        let runs = vec![
            run(AgentId::PrimaryNoEmb, &[("x", 90)]),
            run(AgentId::FullEmb, &[("x", 80), ("y", 95)]),
        ];
        let aggs = aggregate(&runs).unwrap();
        assert_eq!(aggs[0].annotation_id, "x");
        assert_eq!(aggs[0].support, 2);
        assert_eq!(aggregate(&[]), Err(JudgeError::NoUsableRuns));
    }

    #[test]
    fn fallback_examples() {
        let w = AgentWeights::default();
        let runs = vec![
            run(AgentId::PrimaryNoEmb, &[("x", 90)]),
            run(AgentId::FullEmb, &[("x", 80), ("y", 95)]),
        ];
        let r = fallback_rank(&aggregate(&runs).unwrap(), &w, 5, 0.0);
        assert_eq!(r.ids(), vec!["x", "y"]);
        assert_eq!(r.source, JudgeSource::FallbackAggregation);

        let single = vec![run(AgentId::PrimaryEmb, &[("a", 90), ("b", 70), ("c", 50)])];
        let r = fallback_rank(&aggregate(&single).unwrap(), &w, 5, 0.0);
        let scores: Vec<u8> = r.ranked.iter().map(|c| c.final_score).collect();
        assert_eq!(scores, vec![100, 78, 56]);

        let tie = vec![run(AgentId::PrimaryEmb, &[("q", 70), ("p", 70)])];
        assert_eq!(fallback_rank(&aggregate(&tie).unwrap(), &w, 5, 0.0).ids(), vec!["p", "q"]);
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.jsonl");
        let mut w = AgentWeights::new(10, 1.0);
        for c in [true, false, true] {
            w.record_outcome(AgentId::FullNoEmb, c);
        }
        w.recompute(5);
        w.save_snapshot(&path).unwrap();
        let back = AgentWeights::load_snapshot(&path, 10, 1.0).unwrap();
        assert_eq!(back.weight(AgentId::FullNoEmb), w.weight(AgentId::FullNoEmb));
        assert_eq!(back.counts(AgentId::FullNoEmb), (2, 3));
    }
}
