//! Prompt construction, the ranker output schema, few-shot allocation and
//! mapping model-named annotations back to catalog ids.

mod few_shot;
pub mod recovery;
mod resolve;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agents::{AgentId, AgentSpec, QueryPlan};
use crate::config::{interpolate, AnnotationConfig, ConfigError};
use crate::knowledge_base::{field_labels, AnnotationEntry, Catalog, TrainingExample};
use crate::text::capitalize;

pub use few_shot::{allocate_few_shots, allocate_shared_few_shots, FewShotAllocation};
pub use recovery::{parse_with, recover_json, ParseError, ParseStage, Parsed};
pub use resolve::{resolve_candidates, resolve_title, MatchKind, Resolution, ResolvedCandidate};

/// Section markers shared by the prompt builders and the mock provider.
pub mod tags {
    pub const EXAMPLES_OPEN: &str = "<examples>";
    pub const EXAMPLES_CLOSE: &str = "</examples>";
    pub const CANDIDATES_OPEN: &str = "<candidates>";
    pub const CANDIDATES_CLOSE: &str = "</candidates>";
    pub const JUDGE_CANDIDATES_OPEN: &str = "<judge_candidates>";
    pub const JUDGE_CANDIDATES_CLOSE: &str = "</judge_candidates>";
    pub const USER_INPUT_OPEN: &str = "<user_input>";
    pub const USER_INPUT_CLOSE: &str = "</user_input>";
    /// Continuation line in judge candidates listing per-agent scores.
    pub const AGENT_SCORES_PREFIX: &str = "agent scores: ";
}

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("no candidates to rank")]
    EmptyCandidates,
    #[error("few-shot pool is empty")]
    EmptyPool,
    #[error(transparent)]
    Template(#[from] ConfigError),
}

pub const BASE_SYSTEM_TEMPLATE: &str = "\
You are an expert {ANNOTATION_TYPE} annotation system for customer-facing banking applications. \
Your role is to accurately {MATCH_VERB} user {USER_INPUT_LABEL}s to the most relevant \
{ANNOTATION_TYPE_PLURAL} from the knowledge base.

IMPORTANT GUIDELINES:
1. Analyze the user's intent thoroughly
2. Match the intent to the most relevant {ANNOTATION_TYPE_PLURAL}
3. Rank {ANNOTATION_TYPE_PLURAL} by relevance (0-100 scale)
4. Provide clear reasoning for each match
5. Return exactly {top_n} {ANNOTATION_TYPE_PLURAL} unless there are fewer relevant ones
6. Be precise - banking customers need accurate information";

pub const RANKER_TASK_TEMPLATE: &str = "\
You will be given a user {USER_INPUT_LABEL} and a list of available {ANNOTATION_TYPE_PLURAL}. Your task is to:

1. Analyze what the user is truly asking about (identify the core intent)
2. Search through the available {ANNOTATION_TYPE_PLURAL} for relevant matches
3. Rank the top {top_n} most relevant {ANNOTATION_TYPE_PLURAL} based on:
   - Semantic similarity to the user's intent
   - Specificity to the {USER_INPUT_LABEL}
   - Likelihood of being the correct {ANNOTATION_LOWER}
4. Provide a confidence score (0-100) for each match
5. Explain your reasoning process

For banking-related queries, consider:
- Security concerns take priority
- Account access questions require specific authentication-related {ANNOTATION_TYPE_PLURAL}
- Transaction questions should {MATCH_VERB} to relevant transaction {ANNOTATION_TYPE_PLURAL}
- General inquiries should {MATCH_VERB} to general information {ANNOTATION_TYPE_PLURAL}";

pub const RANKER_OUTPUT_TEMPLATE: &str = r#"Respond with JSON only, using exactly this structure:
{
  "user_utterance": "The original user input",
  "intent_analysis": "Detailed analysis of user intent",
  "relevant_annotations": [
    {
      "annotation": "{ANNOTATION_TYPE} title exactly as listed",
      "relevance_score": 85,
      "reasoning": "Explanation of why this {ANNOTATION_LOWER} matches"
    }
  ],
  "confidence": "HIGH/MEDIUM/LOW",
  "explanation_of_confidence": "Justification for confidence level"
}"#;

pub const PLANNER_SYSTEM_PROMPT: &str =
    "You are an expert at analyzing user queries and planning retrieval strategies.";

pub const PLANNER_USER_TEMPLATE: &str = r#"Analyze the following user {USER_INPUT_LABEL} for a banking {ANNOTATION_TYPE} annotation system:

"{query}"

Instructions:
1. Identify main intent strictly from given text
2. Decide if query expansion is necessary
3. If expansion needed, generate expanded version that clarifies query using only information inferred from original query
4. For ambiguous queries (e.g., "10101"), return raw query as-is in "expanded_query" field
5. NEVER introduce topics not present or implied in user query

Example expansion:
Original: "cash back"
Expanded: "cash back policies, cash back offers, cash back rewards, how to earn cash back, cash back credit cards"

{domain_context}

Provide analysis in JSON format:
{
  "intent": "Main intent of query",
  "needs_expansion": true/false,
  "expanded_query": "Expanded version or raw",
  "reasoning": "Explanation for expansion"
}"#;

pub const JUDGE_SYSTEM_TEMPLATE: &str = "\
You are an expert judge for a banking {ANNOTATION_TYPE} annotation system. Your task is to rerank \
candidate {ANNOTATION_TYPE_PLURAL} based on their relevance to a user {USER_INPUT_LABEL}.

Given a user {USER_INPUT_LABEL} and a list of candidate {ANNOTATION_TYPE_PLURAL} (with their original \
relevance scores from different agents), please rerank them based on your expert judgment of their \
relevance to the user's intent.

Consider:
- Semantic similarity
- Specificity
- How well each {ANNOTATION_TYPE} addresses the user's needs for banking-related queries
- Agent consensus (annotations selected by multiple agents)
- Banking context and domain knowledge

CRITICAL: You must return your rankings in proper JSON format with detailed reasoning for each decision.";

pub const JUDGE_OUTPUT_TEMPLATE: &str = r#"Respond with JSON only, using exactly this structure:
{
  "reranked_annotations": [
    {
      "annotation_id": "id shown in brackets",
      "annotation": "{ANNOTATION_TYPE} title exactly as listed",
      "final_score": 94,
      "reasoning": "Why this {ANNOTATION_LOWER} ranks here"
    }
  ],
  "consensus_strength": "STRONG/MODERATE/WEAK",
  "confidence": "HIGH/MEDIUM/LOW"
}"#;

/// Interpolate config placeholders, then substitute runtime values given as
/// lowercase `{name}` tokens.
pub fn render(template: &str, config: &AnnotationConfig, vars: &[(&str, &str)]) -> Result<String, ConfigError> {
    let mut text = interpolate(template, config)?;
    for (name, value) in vars {
        text = text.replace(&format!("{{{name}}}"), value);
    }
    Ok(text)
}

/// Collapse whitespace so a value fits on one prompt line.
pub fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Confidence {
    High,
    Medium,
    Low,
}

impl Confidence {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::High => "HIGH",
            Self::Medium => "MEDIUM",
            Self::Low => "LOW",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "HIGH" => Some(Self::High),
            "MEDIUM" => Some(Self::Medium),
            "LOW" => Some(Self::Low),
            _ => None,
        }
    }
}

impl std::fmt::Display for Confidence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevantAnnotation {
    pub annotation: String,
    pub relevance_score: u8,
    pub reasoning: String,
}

/// A ranker's structured answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredVerdict {
    pub user_utterance: String,
    pub intent_analysis: String,
    pub relevant_annotations: Vec<RelevantAnnotation>,
    pub confidence: Confidence,
    pub explanation_of_confidence: String,
}

pub const DEFAULT_MAX_ANNOTATIONS: usize = 5;

/// JSON-schema document for [`StructuredVerdict`].
pub const VERDICT_SCHEMA: &str = include_str!("../../schemas/structured_verdict.schema.json");

pub(crate) fn parse_confidence(map: &serde_json::Map<String, Value>, field: &str) -> Result<Confidence, ParseError> {
    let s = recovery::req_str(map, field)?;
    Confidence::parse(&s).ok_or_else(|| ParseError::violation(field, format!("`{s}` is not HIGH, MEDIUM or LOW")))
}

/// Check `value` against the verdict schema, allowing up to `max_items`
/// annotations.
pub fn validate_verdict(value: &Value, max_items: usize) -> Result<StructuredVerdict, ParseError> {
    let map = recovery::obj(value, "$")?;
    let user_utterance = recovery::req_str(map, "user_utterance")?;
    let intent_analysis = recovery::req_str(map, "intent_analysis")?;
    let items = match map.get("relevant_annotations") {
        Some(Value::Array(a)) => a,
        Some(_) => return Err(ParseError::violation("relevant_annotations", "expected an array")),
        None => return Err(ParseError::violation("relevant_annotations", "missing")),
    };
    if items.is_empty() || items.len() > max_items {
        return Err(ParseError::violation(
            "relevant_annotations",
            format!("expected 1..={max_items} items, got {}", items.len()),
        ));
    }
    let relevant_annotations = items
        .iter()
        .map(|item| {
            let m = recovery::obj(item, "relevant_annotations")?;
            Ok(RelevantAnnotation {
                annotation: recovery::req_str(m, "annotation")?,
                relevance_score: recovery::score(m, "relevance_score")?,
                reasoning: recovery::opt_str(m, "reasoning")?,
            })
        })
        .collect::<Result<Vec<_>, ParseError>>()?;
    Ok(StructuredVerdict {
        user_utterance,
        intent_analysis,
        relevant_annotations,
        confidence: parse_confidence(map, "confidence")?,
        explanation_of_confidence: recovery::opt_str(map, "explanation_of_confidence")?,
    })
}

/// Recover and validate a ranker verdict (at most five annotations).
pub fn parse_structured(raw: &str) -> Result<Parsed<StructuredVerdict>, ParseError> {
    parse_structured_with_limit(raw, DEFAULT_MAX_ANNOTATIONS)
}

pub fn parse_structured_with_limit(raw: &str, max_items: usize) -> Result<Parsed<StructuredVerdict>, ParseError> {
    parse_with(raw, |v| validate_verdict(v, max_items))
}

/// A retrieval candidate in rank order.
#[derive(Debug, Clone)]
pub struct PromptCandidate<'a> {
    pub entry: &'a AnnotationEntry,
    pub retrieval_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptBundle {
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub agent_id: String,
    /// Candidates that did not fit in the prompt budget.
    pub dropped_candidates: usize,
    /// Ids shown to the model, in order.
    pub shown_ids: Vec<String>,
}

pub fn base_system_prompt(config: &AnnotationConfig) -> Result<String, ConfigError> {
    render(BASE_SYSTEM_TEMPLATE, config, &[("top_n", &config.top_n_results.to_string())])
}

/// Render a few-shot block; example ids are looked up in `catalog`.
pub fn render_few_shots(examples: &[TrainingExample], catalog: &Catalog, config: &AnnotationConfig) -> String {
    let mut out = String::new();
    for (i, ex) in examples.iter().enumerate() {
        out.push_str(&format!("Example {}:\nUser Input: \"{}\"\nTop Annotations:\n", i + 1, one_line(&ex.utterance)));
        let title = |id: &str| catalog.get(id).map(|e| one_line(&e.primary_text)).unwrap_or_else(|| id.to_string());
        match &ex.ranked_alternatives {
            Some(alts) if !alts.is_empty() => {
                for (j, alt) in alts.iter().enumerate() {
                    out.push_str(&format!("{}. \"{}\" - Score: {}\n", j + 1, title(&alt.id), alt.score));
                    if !alt.reasoning.is_empty() {
                        out.push_str(&format!("   Reasoning: {}\n", one_line(&alt.reasoning)));
                    }
                }
            }
            _ => {
                out.push_str(&format!("1. \"{}\" - Score: 95\n", title(&ex.gold_id)));
                out.push_str(&format!(
                    "   Reasoning: Correct {} for this {}\n",
                    config.annotation_lower, config.user_input_label
                ));
            }
        }
        out.push('\n');
    }
    out
}

/// The `<user_input>` block: original utterance, plus the expansion when it
/// differs.
pub fn render_user_input(plan: &QueryPlan, config: &AnnotationConfig) -> String {
    let mut block = format!(
        "{}\n{}: {}\n",
        tags::USER_INPUT_OPEN,
        capitalize(&config.user_input_label),
        one_line(&plan.original_query)
    );
    if plan.needs_expansion && plan.expanded_query != plan.original_query {
        block.push_str(&format!("Expanded query: {}\n", one_line(&plan.expanded_query)));
    }
    block.push_str(tags::USER_INPUT_CLOSE);
    block.push('\n');
    block
}

fn render_candidate(entry: &AnnotationEntry, with_secondary: bool, secondary_label: &str) -> String {
    let mut s = format!("[{}] {}\n", entry.id, one_line(&entry.primary_text));
    if with_secondary {
        if let Some(sec) = &entry.secondary_text {
            s.push_str(&format!("    {secondary_label}: {}\n", one_line(sec)));
        }
    }
    s
}

/// Build the prompt for one ranker agent.
///
/// `candidates` must be in retrieval order; when the prompt would exceed
/// `max_prompt_chars` the tail (lowest retrieval scores) is dropped, keeping
/// at least one candidate.
pub fn build_ranker_prompt(
    config: &AnnotationConfig,
    spec: &AgentSpec,
    plan: &QueryPlan,
    candidates: &[PromptCandidate<'_>],
    few_shots: &[TrainingExample],
    catalog: &Catalog,
) -> Result<PromptBundle, PromptError> {
    if candidates.is_empty() {
        return Err(PromptError::EmptyCandidates);
    }
    let top_n = config.top_n_results.to_string();
    let system_prompt = base_system_prompt(config)?;
    let task = render(RANKER_TASK_TEMPLATE, config, &[("top_n", &top_n)])?;
    let focus = interpolate(spec.emphasis.instruction(), config)?;
    let output = interpolate(RANKER_OUTPUT_TEMPLATE, config)?;

    let mut head = format!("{task}\n\nFocus: {focus}\n\n");
    if !few_shots.is_empty() {
        head.push_str(tags::EXAMPLES_OPEN);
        head.push('\n');
        head.push_str(&render_few_shots(few_shots, catalog, config));
        head.push_str(tags::EXAMPLES_CLOSE);
        head.push_str("\n\n");
    }
    head.push_str(&format!("Available {}:\n{}\n", config.annotation_type_plural, tags::CANDIDATES_OPEN));
    let tail = format!("{}\n\n{}\n{output}", tags::CANDIDATES_CLOSE, render_user_input(plan, config));

    let (_, secondary_label) = field_labels(config);
    let fixed = system_prompt.chars().count() + head.chars().count() + tail.chars().count();
    let mut body = String::new();
    let mut used = fixed;
    let mut shown_ids = Vec::new();
    for c in candidates {
        let block = render_candidate(c.entry, spec.uses_secondary, &secondary_label);
        let len = block.chars().count();
        if !shown_ids.is_empty() && used + len > config.max_prompt_chars {
            break;
        }
        used += len;
        body.push_str(&block);
        shown_ids.push(c.entry.id.clone());
    }
    Ok(PromptBundle {
        system_prompt,
        user_prompt: format!("{head}{body}{tail}"),
        temperature: spec.temperature,
        agent_id: spec.agent_id.as_str().to_string(),
        dropped_candidates: candidates.len() - shown_ids.len(),
        shown_ids,
    })
}

/// One line per agent prediction for the judge.
#[derive(Debug, Clone)]
pub struct JudgeCandidateView<'a> {
    pub entry: &'a AnnotationEntry,
    pub agent_scores: Vec<(AgentId, u8)>,
    pub reasonings: Vec<(AgentId, String)>,
}

/// Build the judge prompt: original and expanded query, every aggregated
/// candidate with its full content, per-agent scores and reasoning.
pub fn build_judge_prompt(
    config: &AnnotationConfig,
    plan: &QueryPlan,
    candidates: &[JudgeCandidateView<'_>],
    agents_reporting: &[AgentId],
) -> Result<(String, String), PromptError> {
    if candidates.is_empty() {
        return Err(PromptError::EmptyCandidates);
    }
    let system = interpolate(JUDGE_SYSTEM_TEMPLATE, config)?;
    let output = interpolate(JUDGE_OUTPUT_TEMPLATE, config)?;
    let (_, secondary_label) = field_labels(config);
    let agents: Vec<&str> = agents_reporting.iter().map(|a| a.as_str()).collect();
    let mut user = format!(
        "Rerank the candidate {} below for the user {}. {} agents reported: {}.\n\n",
        config.annotation_type_plural,
        config.user_input_label,
        agents.len(),
        agents.join(", ")
    );
    user.push_str(&render_user_input(plan, config));
    user.push('\n');
    user.push_str(tags::JUDGE_CANDIDATES_OPEN);
    user.push('\n');
    for c in candidates {
        user.push_str(&render_candidate(c.entry, true, &secondary_label));
        let scores: Vec<String> = c
            .agent_scores
            .iter()
            .map(|(a, s)| format!("{}={s}", a.as_str()))
            .collect();
        user.push_str(&format!("    {}{}\n", tags::AGENT_SCORES_PREFIX, scores.join(", ")));
        for (a, r) in &c.reasonings {
            if !r.is_empty() {
                user.push_str(&format!("    reasoning ({}): {}\n", a.as_str(), one_line(r)));
            }
        }
    }
    user.push_str(tags::JUDGE_CANDIDATES_CLOSE);
    user.push_str(&format!(
        "\n\nReturn at most {} {}, best first.\n{output}",
        config.top_n_results, config.annotation_type_plural
    ));
    Ok((system, user))
}

/// Planner prompt pair for `query`.
pub fn build_planner_prompt(
    config: &AnnotationConfig,
    query: &str,
    domain_context: &str,
) -> Result<(String, String), PromptError> {
    let user = render(
        PLANNER_USER_TEMPLATE,
        config,
        &[("query", &one_line(query)), ("domain_context", domain_context.trim())],
    )?;
    Ok((PLANNER_SYSTEM_PROMPT.to_string(), user))
}
