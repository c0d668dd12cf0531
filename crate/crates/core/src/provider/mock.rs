//! Deterministic stand-in for a hosted model.
//!
//! Output text is a pure function of `(system_prompt, user_prompt,
//! temperature, seed)`. The mock reads the structured sections the prompt
//! builders emit (`<candidates>`, `<user_input>`, ...) and answers in the
//! schema each caller expects, so the whole pipeline can run offline:
//!
//! * ranker prompts get a schema-valid verdict whose relevance scores mix
//!   lexical overlap with a seeded hash of (query, candidate id);
//! * judge prompts get a rerank driven by agent agreement;
//! * planner prompts get fixture expansions or the raw query.
//!
//! Latency, failures and malformed output are injected per request label.

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{ChatRequest, ChatResponse, EmbeddingRequest, ModelProvider, ProviderError};
use crate::config::NATIVE_EMBEDDING_DIMS;
use crate::prompting::tags;
use crate::text::{normalize, tokenize};

/// Malformed-output variants for exercising the recovery parser.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Corruption {
    /// Wrap in a ```json fence.
    Fenced,
    /// Surround with chatty prose.
    Prose,
    /// Cut the JSON in half.
    Truncated,
    /// No JSON at all.
    Garbage,
    /// Push the first relevance score out of range.
    ScoreOutOfRange,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockFault {
    /// Sleep far past any deadline.
    Hang,
    /// Fail the first `n` calls for the label with a transient error.
    TransientFirst(u32),
    /// Always fail with a transient error.
    AlwaysTransient,
    /// Always fail with a non-retryable error.
    Fatal,
}

/// Expansion returned for a specific query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanFixture {
    pub intent: String,
    pub expanded_query: String,
}

/// Injection rules keyed by label pattern. A pattern matches a label exactly,
/// or as a prefix when it ends in `*`.
#[derive(Debug, Clone, Default)]
pub struct MockBehavior {
    delays: Vec<(String, u64)>,
    faults: Vec<(String, MockFault)>,
    corruptions: Vec<(String, Corruption)>,
}

fn label_matches(pattern: &str, label: &str) -> bool {
    match pattern.strip_suffix('*') {
        Some(prefix) => label.starts_with(prefix),
        None => pattern == label,
    }
}

fn lookup<'a, T>(rules: &'a [(String, T)], label: &str) -> Option<&'a T> {
    rules
        .iter()
        .find(|(p, _)| label_matches(p, label))
        .map(|(_, v)| v)
}

impl MockBehavior {
    pub fn delay(mut self, pattern: impl Into<String>, ms: u64) -> Self {
        self.delays.push((pattern.into(), ms));
        self
    }

    pub fn fault(mut self, pattern: impl Into<String>, fault: MockFault) -> Self {
        self.faults.push((pattern.into(), fault));
        self
    }

    pub fn corrupt(mut self, pattern: impl Into<String>, corruption: Corruption) -> Self {
        self.corruptions.push((pattern.into(), corruption));
        self
    }
}

#[derive(Debug, Default)]
struct Counters {
    per_label: HashMap<String, u64>,
}

/// Deterministic mock provider.
#[derive(Debug, Clone)]
pub struct MockProvider {
    seed: u64,
    behavior: MockBehavior,
    plan_fixtures: Arc<HashMap<String, PlanFixture>>,
    counters: Arc<Mutex<Counters>>,
    chat_calls: Arc<AtomicU64>,
    embed_calls: Arc<AtomicU64>,
    in_flight: Arc<AtomicU64>,
    max_in_flight: Arc<AtomicU64>,
}

/// Built-in planner fixtures: short or abbreviated queries and their
/// expansions.
pub fn default_plan_fixtures() -> HashMap<String, PlanFixture> {
    let rows = [
        (
            "cash back",
            "Learn about cash back rewards",
            "cash back policies, cash back offers, cash back rewards, how to earn cash back, cash back credit cards",
        ),
        (
            "lost deb",
            "Report or handle lost debit card",
            "lost debit card, stolen card, lock card, report missing card, block card",
        ),
        ("cc", "Credit card inquiry", "credit card, charge card"),
        ("fees", "Ask about fees", "fees, charges, costs, expenses"),
        ("transfer", "Move money", "transfer money, send funds"),
        ("savings", "Savings products", "savings account, high yield savings"),
    ];
    rows.into_iter()
        .map(|(q, intent, exp)| {
            (
                q.to_string(),
                PlanFixture {
                    intent: intent.to_string(),
                    expanded_query: exp.to_string(),
                },
            )
        })
        .collect()
}

struct InFlight<'a>(&'a AtomicU64);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "i", "my", "me", "do", "does", "how", "to", "of", "and", "or", "is", "are", "am",
    "what", "can", "you", "your", "for", "in", "on", "it", "with", "be", "if", "at", "by", "this", "that",
    "from", "about", "we", "our", "will", "when", "there",
];

fn content_tokens(text: &str) -> BTreeSet<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

fn tokens_match(a: &str, b: &str) -> bool {
    if a == b {
        return true;
    }
    let min = a.len().min(b.len());
    min >= 3 && (a.starts_with(b) || b.starts_with(a))
}

/// Uniform value in [0, 1) from a digest of the parts.
fn unit_hash(parts: &[&[u8]]) -> f64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    let v = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
    (v >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Debug, Clone)]
struct PromptCandidate {
    id: String,
    text: String,
    details: Vec<String>,
}

fn section<'a>(prompt: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = prompt.find(open)? + open.len();
    let end = prompt[start..].find(close)? + start;
    Some(&prompt[start..end])
}

fn parse_candidates(block: &str) -> Vec<PromptCandidate> {
    let mut out: Vec<PromptCandidate> = Vec::new();
    for line in block.lines() {
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            if let Some(close) = rest.find("] ") {
                out.push(PromptCandidate {
                    id: rest[..close].to_string(),
                    text: rest[close + 2..].trim().to_string(),
                    details: Vec::new(),
                });
                continue;
            }
        }
        if let Some(last) = out.last_mut() {
            last.details.push(line.trim().to_string());
        }
    }
    out
}

/// Values of `Label: value` lines in the user-input section; the first one is
/// the original utterance.
fn parse_user_input(prompt: &str) -> Vec<String> {
    section(prompt, tags::USER_INPUT_OPEN, tags::USER_INPUT_CLOSE)
        .map(|block| {
            block
                .lines()
                .filter_map(|l| l.split_once(": ").map(|(_, v)| v.trim().to_string()))
                .filter(|v| !v.is_empty())
                .collect()
        })
        .unwrap_or_default()
}

/// `N` from a "top N" instruction in the prompt, else 5.
fn requested_top_n(prompt: &str) -> usize {
    prompt
        .find("Rank the top ")
        .and_then(|i| {
            prompt[i + 13..]
                .split(|c: char| !c.is_ascii_digit())
                .next()
                .and_then(|n| n.parse().ok())
        })
        .filter(|n| *n >= 1)
        .unwrap_or(5)
}

fn band_for(score: i64, agree: bool) -> &'static str {
    if score >= 85 && agree {
        "HIGH"
    } else if score >= 60 {
        "MEDIUM"
    } else {
        "LOW"
    }
}

impl Default for MockProvider {
    fn default() -> Self {
        Self::new(0)
    }
}

impl MockProvider {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            behavior: MockBehavior::default(),
            plan_fixtures: Arc::new(default_plan_fixtures()),
            counters: Arc::default(),
            chat_calls: Arc::default(),
            embed_calls: Arc::default(),
            in_flight: Arc::default(),
            max_in_flight: Arc::default(),
        }
    }

    pub fn with_behavior(mut self, behavior: MockBehavior) -> Self {
        self.behavior = behavior;
        self
    }

    pub fn with_plan_fixture(mut self, query: &str, intent: &str, expanded: &str) -> Self {
        Arc::make_mut(&mut self.plan_fixtures).insert(
            normalize(query),
            PlanFixture {
                intent: intent.into(),
                expanded_query: expanded.into(),
            },
        );
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn chat_calls(&self) -> u64 {
        self.chat_calls.load(Ordering::SeqCst)
    }

    pub fn embed_calls(&self) -> u64 {
        self.embed_calls.load(Ordering::SeqCst)
    }

    /// Chat calls whose label matches `pattern`.
    pub fn calls_for(&self, pattern: &str) -> u64 {
        self.counters
            .lock()
            .per_label
            .iter()
            .filter(|(l, _)| label_matches(pattern, l))
            .map(|(_, n)| *n)
            .sum()
    }

    pub fn in_flight(&self) -> u64 {
        self.in_flight.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> u64 {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    /// The response text for `req`, before any injected corruption.
    pub fn render(&self, req: &ChatRequest) -> String {
        let user = &req.user_prompt;
        if user.contains(tags::JUDGE_CANDIDATES_OPEN) {
            self.judge_response(req)
        } else if user.contains(tags::CANDIDATES_OPEN) {
            self.ranker_response(req)
        } else if user.contains("\"needs_expansion\"") {
            self.planner_response(req)
        } else {
            json!({ "echo": crate::text::sha256_hex(format!("{}\x1f{}", req.system_prompt, user)) }).to_string()
        }
    }

    fn ranker_response(&self, req: &ChatRequest) -> String {
        let user = &req.user_prompt;
        let inputs = parse_user_input(user);
        let original = inputs.first().cloned().unwrap_or_default();
        let query_text = inputs.join(" ");
        let query = content_tokens(&query_text);
        let candidates = section(user, tags::CANDIDATES_OPEN, tags::CANDIDATES_CLOSE)
            .map(parse_candidates)
            .unwrap_or_default();
        let seed = self.seed.to_le_bytes();
        let temp = req.temperature.to_bits().to_le_bytes();
        let qnorm = normalize(&query_text);

        let mut scored: Vec<(i64, &PromptCandidate, usize)> = candidates
            .iter()
            .map(|c| {
                let primary = content_tokens(&c.text);
                let mut all = primary.clone();
                for d in &c.details {
                    all.extend(content_tokens(d));
                }
                let matched_q = query
                    .iter()
                    .filter(|q| all.iter().any(|t| tokens_match(q, t)))
                    .count();
                let matched_c = primary
                    .iter()
                    .filter(|t| query.iter().any(|q| tokens_match(q, t)))
                    .count();
                let q_cov = if query.is_empty() { 0.0 } else { matched_q as f64 / query.len() as f64 };
                let c_cov = if primary.is_empty() { 0.0 } else { matched_c as f64 / primary.len() as f64 };
                let lex = 0.5 * q_cov + 0.5 * c_cov;
                let noise = unit_hash(&[&seed, &temp, qnorm.as_bytes(), c.id.as_bytes()]);
                let score = (20.0 + 80.0 * lex + 12.0 * (noise - 0.5)).round().clamp(0.0, 100.0) as i64;
                (score, c, matched_q)
            })
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.id.cmp(&b.1.id)));
        scored.truncate(requested_top_n(user));

        let top = scored.first().map(|s| s.0).unwrap_or(0);
        let runner_up = scored.get(1).map(|s| s.0).unwrap_or(0);
        let confidence = band_for(top, top - runner_up >= 3 || top >= 95);
        let annotations: Vec<_> = scored
            .iter()
            .map(|(score, c, m)| {
                json!({
                    "annotation": c.text,
                    "relevance_score": score,
                    "reasoning": format!("Shares {m} of {} key terms with the request", query.len()),
                })
            })
            .collect();
        json!({
            "user_utterance": original,
            "intent_analysis": format!("The user is asking about: {original}"),
            "relevant_annotations": annotations,
            "confidence": confidence,
            "explanation_of_confidence": format!("Top score {top}, runner-up {runner_up}"),
        })
        .to_string()
    }

    fn judge_response(&self, req: &ChatRequest) -> String {
        let user = &req.user_prompt;
        let candidates = section(user, tags::JUDGE_CANDIDATES_OPEN, tags::JUDGE_CANDIDATES_CLOSE)
            .map(parse_candidates)
            .unwrap_or_default();
        let mut ranked: Vec<(i64, usize, PromptCandidate)> = candidates
            .into_iter()
            .map(|c| {
                let scores: Vec<f64> = c
                    .details
                    .iter()
                    .find_map(|d| d.strip_prefix(tags::AGENT_SCORES_PREFIX))
                    .map(|s| {
                        s.split(',')
                            .filter_map(|kv| kv.split_once('=').and_then(|(_, v)| v.trim().parse().ok()))
                            .collect()
                    })
                    .unwrap_or_default();
                let support = scores.len().max(1);
                let mean = scores.iter().sum::<f64>() / support as f64;
                let fin = (mean + 4.0 * (support as f64 - 1.0)).round().clamp(0.0, 100.0) as i64;
                (fin, scores.len(), c)
            })
            .collect();
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.2.id.cmp(&b.2.id)));
        let max_support = ranked.iter().map(|r| r.1).max().unwrap_or(0);
        let consensus = match max_support {
            s if s >= 3 => "STRONG",
            2 => "MODERATE",
            _ => "WEAK",
        };
        let (top, top_support) = ranked.first().map(|r| (r.0, r.1)).unwrap_or((0, 0));
        let items: Vec<_> = ranked
            .iter()
            .map(|(score, support, c)| {
                json!({
                    "annotation": c.text,
                    "annotation_id": c.id,
                    "final_score": score,
                    "reasoning": format!("Proposed by {support} agent(s); agreement weighted into the score"),
                })
            })
            .collect();
        json!({
            "reranked_annotations": items,
            "consensus_strength": consensus,
            "confidence": band_for(top, top_support >= 2),
        })
        .to_string()
    }

    fn planner_response(&self, req: &ChatRequest) -> String {
        let query = req
            .user_prompt
            .lines()
            .map(str::trim)
            .find(|l| l.len() >= 2 && l.starts_with('"') && l.ends_with('"'))
            .map(|l| l[1..l.len() - 1].to_string())
            .unwrap_or_default();
        let key = normalize(&query);
        let body = if let Some(f) = self.plan_fixtures.get(&key) {
            json!({
                "intent": f.intent,
                "needs_expansion": true,
                "expanded_query": f.expanded_query,
                "reasoning": "Short or abbreviated query; expanded with closely related terms",
            })
        } else if !query.chars().any(char::is_alphabetic) {
            json!({
                "intent": "Ambiguous code or number",
                "needs_expansion": false,
                "expanded_query": query,
                "reasoning": "Query is ambiguous (numeric or code-like); preserving the raw query",
            })
        } else {
            json!({
                "intent": format!("Inquiry about {query}"),
                "needs_expansion": false,
                "expanded_query": query,
                "reasoning": "Query is specific enough to match directly",
            })
        };
        body.to_string()
    }

    fn corrupt(text: String, corruption: &Corruption) -> String {
        match corruption {
            Corruption::Fenced => format!("```json\n{text}\n```"),
            Corruption::Prose => format!("Here are the results: {text} Hope this helps!"),
            Corruption::Truncated => {
                let cut = text.char_indices().nth(text.chars().count() / 2).map_or(0, |(i, _)| i);
                text[..cut].to_string()
            }
            Corruption::Garbage => "I'm sorry, I can't produce a ranking for that request.".into(),
            Corruption::ScoreOutOfRange => {
                let mut v: serde_json::Value = match serde_json::from_str(&text) {
                    Ok(v) => v,
                    Err(_) => return text,
                };
                if let Some(first) = v
                    .get_mut("relevant_annotations")
                    .and_then(|a| a.get_mut(0))
                    .and_then(|a| a.get_mut("relevance_score"))
                {
                    *first = json!(150);
                }
                v.to_string()
            }
        }
    }

    fn feature_vector(&self, key: &str, dims: usize, weight: f64, acc: &mut [f64]) {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(key.as_bytes());
        let seed: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        for slot in acc.iter_mut().take(dims) {
            *slot += weight * rng.gen_range(-1.0..1.0);
        }
    }

    /// Bag-of-features embedding: each token (and 3-char token prefix)
    /// contributes a seeded pseudo-random direction, so texts sharing words
    /// land near each other. Generating only the first `dims` components of
    /// each stream makes the result a prefix of the full-width vector.
    pub fn embed_one(&self, text: &str, dims: usize) -> Vec<f64> {
        let mut acc = vec![0.0; dims];
        let mut features: Vec<(String, f64)> = Vec::new();
        for tok in tokenize(text) {
            if tok.chars().count() >= 4 {
                features.push((tok.chars().take(3).collect(), 0.5));
            }
            features.push((tok, 1.0));
        }
        features.push((format!("\u{0}{text}"), 0.1));
        for (key, w) in &features {
            self.feature_vector(key, dims, *w, &mut acc);
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            acc.iter_mut().for_each(|x| *x /= norm);
        }
        acc
    }
}

#[async_trait]
impl ModelProvider for MockProvider {
    async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        req.validate()?;
        self.chat_calls.fetch_add(1, Ordering::SeqCst);
        let nth_call = {
            let mut c = self.counters.lock();
            let n = c.per_label.entry(req.label.clone()).or_default();
            *n += 1;
            *n
        };
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        let _guard = InFlight(&self.in_flight);

        let started = tokio::time::Instant::now();
        let delay = lookup(&self.behavior.delays, &req.label).copied().unwrap_or(0);
        let fault = lookup(&self.behavior.faults, &req.label).cloned();
        let work = async {
            if matches!(fault, Some(MockFault::Hang)) {
                tokio::time::sleep(Duration::from_secs(86_400)).await;
            }
            if delay > 0 {
                tokio::time::sleep(Duration::from_millis(delay)).await;
            }
            match fault {
                Some(MockFault::TransientFirst(n)) if nth_call <= u64::from(n) => {
                    return Err(ProviderError::Transient {
                        status: Some(503),
                        message: "injected transient failure".into(),
                    })
                }
                Some(MockFault::AlwaysTransient) => {
                    return Err(ProviderError::Transient {
                        status: Some(429),
                        message: "injected rate limit".into(),
                    })
                }
                Some(MockFault::Fatal) => {
                    return Err(ProviderError::Fatal {
                        status: Some(400),
                        message: "injected fatal failure".into(),
                    })
                }
                _ => {}
            }
            let mut text = self.render(req);
            if let Some(c) = lookup(&self.behavior.corruptions, &req.label) {
                text = Self::corrupt(text, c);
            }
            if text.chars().count() > req.max_output_chars {
                text = text.chars().take(req.max_output_chars).collect();
            }
            Ok(text)
        };
        let text = match tokio::time::timeout(Duration::from_millis(req.deadline_ms), work).await {
            Ok(r) => r?,
            Err(_) => {
                return Err(ProviderError::Timeout {
                    deadline_ms: req.deadline_ms,
                })
            }
        };
        let mut meta = std::collections::BTreeMap::new();
        meta.insert("provider".into(), "mock".into());
        meta.insert("seed".into(), self.seed.to_string());
        Ok(ChatResponse {
            text,
            latency_ms: started.elapsed().as_millis() as u64,
            provider_meta: meta,
        })
    }

    async fn embed(&self, req: &EmbeddingRequest) -> Result<Vec<Vec<f64>>, ProviderError> {
        req.validate(NATIVE_EMBEDDING_DIMS)?;
        self.embed_calls.fetch_add(1, Ordering::SeqCst);
        match lookup(&self.behavior.faults, "embed") {
            Some(MockFault::Fatal) => {
                return Err(ProviderError::Fatal {
                    status: Some(400),
                    message: "injected embedding failure".into(),
                })
            }
            Some(_) => {
                return Err(ProviderError::Transient {
                    status: Some(503),
                    message: "injected embedding failure".into(),
                })
            }
            None => {}
        }
        Ok(req.texts.iter().map(|t| self.embed_one(t, req.target_dims)).collect())
    }

    fn native_dims(&self) -> usize {
        NATIVE_EMBEDDING_DIMS
    }

    fn kind(&self) -> &'static str {
        "mock"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranker_req(utterance: &str) -> ChatRequest {
        let user = format!(
            "Rank these.\n{}\n[1] How do I check my balance?\n[2] Lock and unlock your credit and debit cards\n[3] Update my mailing address\n{}\n{}\nUtterance: {utterance}\n{}\n",
            tags::CANDIDATES_OPEN,
            tags::CANDIDATES_CLOSE,
            tags::USER_INPUT_OPEN,
            tags::USER_INPUT_CLOSE
        );
        let mut r = ChatRequest::new("system", user);
        r.label = "ranker:primary_no_emb".into();
        r
    }

    #[tokio::test]
    async fn identical_requests_give_identical_text() {
        let p = MockProvider::new(7);
        let req = ranker_req("check balance");
        let a = p.complete(&req).await.unwrap();
        let b = p.complete(&req).await.unwrap();
        assert_eq!(a.text, b.text);
        let v: serde_json::Value = serde_json::from_str(&a.text).unwrap();
        assert_eq!(v["relevant_annotations"][0]["annotation"], "How do I check my balance?");
    }

    #[tokio::test]
    async fn seed_and_temperature_change_scores() {
        let req = ranker_req("check balance");
        let a = MockProvider::new(1).render(&req);
        let b = MockProvider::new(2).render(&req);
        assert_ne!(a, b);
        let mut hot = req.clone();
        hot.temperature = 0.15;
        assert_ne!(MockProvider::new(1).render(&hot), a);
    }

    #[tokio::test(start_paused = true)]
    async fn injected_delay_past_deadline_times_out() {
        let p = MockProvider::new(0).with_behavior(MockBehavior::default().delay("*", 5000));
        let mut req = ranker_req("x");
        req.deadline_ms = 2000;
        let start = tokio::time::Instant::now();
        assert_eq!(
            p.complete(&req).await.unwrap_err(),
            ProviderError::Timeout { deadline_ms: 2000 }
        );
        assert_eq!(start.elapsed(), Duration::from_millis(2000));
        assert_eq!(p.in_flight(), 0);
    }

    #[tokio::test]
    async fn transient_first_then_success() {
        let p = MockProvider::new(0)
            .with_behavior(MockBehavior::default().fault("ranker:*", MockFault::TransientFirst(2)));
        let req = ranker_req("x");
        assert!(p.complete(&req).await.unwrap_err().is_retryable());
        assert!(p.complete(&req).await.is_err());
        assert!(p.complete(&req).await.is_ok());
        assert_eq!(p.calls_for("ranker:*"), 3);
    }

    #[tokio::test]
    async fn embeddings_are_deterministic_unit_vectors() {
        let p = MockProvider::new(3);
        let v = p
            .embed(&EmbeddingRequest { texts: vec!["a".into(), "a".into()], target_dims: 8 })
            .await
            .unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v[0], v[1]);
        assert_eq!(v[0].len(), 8);
        let norm: f64 = v[0].iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert!(p
            .embed(&EmbeddingRequest { texts: vec![], target_dims: 8 })
            .await
            .is_err());
    }

    #[test]
    fn short_embedding_is_prefix_of_full_width() {
        let p = MockProvider::new(3);
        let full = p.embed_one("lost debit card", NATIVE_EMBEDDING_DIMS);
        let short = p.embed_one("lost debit card", 16);
        let prefix_norm = full[..16].iter().map(|x| x * x).sum::<f64>().sqrt();
        for (a, b) in full[..16].iter().zip(&short) {
            assert!((a / prefix_norm - b).abs() < 1e-12);
        }
    }

    #[test]
    fn shared_words_are_closer_than_unrelated_text() {
        let p = MockProvider::new(0);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let q = p.embed_one("lost debit card", 256);
        let near = p.embed_one("Lock and unlock your credit and debit cards", 256);
        let far = p.embed_one("Update my mailing address", 256);
        assert!(dot(&q, &near) > dot(&q, &far));
    }

    #[test]
    fn planner_fixture_and_raw_numeric() {
        let p = MockProvider::new(0);
        let mk = |q: &str| {
            ChatRequest::new("plan", format!("Analyze:\n\n\"{q}\"\n\n{{\n  \"needs_expansion\": true/false\n}}"))
        };
        let v: serde_json::Value = serde_json::from_str(&p.render(&mk("cash back"))).unwrap();
        assert_eq!(v["needs_expansion"], true);
        assert!(v["expanded_query"].as_str().unwrap().contains("cash back rewards"));
        let v: serde_json::Value = serde_json::from_str(&p.render(&mk("10101"))).unwrap();
        assert_eq!(v["needs_expansion"], false);
        assert_eq!(v["expanded_query"], "10101");
    }

    #[test]
    fn corruption_variants() {
        let body = r#"{"relevant_annotations":[{"relevance_score":80}]}"#.to_string();
        assert!(MockProvider::corrupt(body.clone(), &Corruption::Fenced).starts_with("```json\n"));
        assert!(MockProvider::corrupt(body.clone(), &Corruption::ScoreOutOfRange).contains("150"));
        assert!(MockProvider::corrupt(body.clone(), &Corruption::Truncated).len() < body.len());
    }
}
