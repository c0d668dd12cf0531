//! Annotation-task configuration.
//!
//! One JSON document retargets every prompt, column binding, threshold and
//! runtime limit. Keys follow the configuration block the engine was designed
//! around (`annotation_type`, `primary_column`, `confidence_thresholds`, ...);
//! everything except `annotation_type` and `primary_column` has a default.

use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config field `{field}`: {reason}")]
    Validation { field: &'static str, reason: String },
    #[error("unknown template placeholder `{{{0}}}`")]
    UnknownPlaceholder(String),
}

impl ConfigError {
    fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Self::Validation {
            field,
            reason: reason.into(),
        }
    }

    /// Name of the failing field for validation errors.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            Self::Validation { field, .. } => Some(field),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfidenceThresholds {
    pub high: u8,
    pub medium: u8,
    #[serde(default)]
    pub low: u8,
}

impl Default for ConfidenceThresholds {
    fn default() -> Self {
        Self {
            high: 85,
            medium: 60,
            low: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    #[default]
    Realtime,
    Batch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Mock,
    Http,
}

impl std::str::FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock" => Ok(Self::Mock),
            "http" => Ok(Self::Http),
            other => Err(format!("unknown provider `{other}` (expected mock|http)")),
        }
    }
}

impl std::fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Mock => "mock",
            Self::Http => "http",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuntimeProfile {
    pub mode: RunMode,
    pub provider_kind: ProviderKind,
    pub audit_retention_days: u32,
}

impl Default for RuntimeProfile {
    fn default() -> Self {
        Self {
            mode: RunMode::Realtime,
            provider_kind: ProviderKind::Mock,
            audit_retention_days: 90,
        }
    }
}

impl RuntimeProfile {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.audit_retention_days < 1 {
            return Err(ConfigError::invalid(
                "audit_retention_days",
                "must be at least 1",
            ));
        }
        Ok(())
    }
}

/// Validated, immutable task configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotationConfig {
    pub annotation_type: String,
    pub annotation_type_plural: String,
    pub annotation_lower: String,
    pub primary_column: String,
    pub secondary_column: Option<String>,
    pub user_input_label: String,
    pub match_verb: String,
    pub enable_embeddings: bool,
    pub few_shot_count_per_agent: usize,
    pub confidence_thresholds: ConfidenceThresholds,
    pub agent_timeout_ms: u64,
    pub judge_timeout_ms: u64,
    /// Planner deadline; falls back to `agent_timeout_ms`.
    pub planner_timeout_ms: u64,
    pub planner_cache_ttl_s: u64,
    pub batch_size: usize,
    pub batch_window_s: u64,
    pub max_retries: u32,
    pub retry_base_delay_ms: u64,
    pub worker_count: usize,
    pub top_n_results: usize,
    pub embedding_dims: usize,
    pub retrieval_top_k: usize,
    pub max_prompt_chars: usize,
    pub max_output_chars: usize,
    /// Catalogs at or below this size are shown whole to non-embedding agents;
    /// larger ones are narrowed with BM25.
    pub full_catalog_threshold: usize,
    pub fuzzy_match_threshold: f64,
    pub embedding_cache_capacity: usize,
    pub weight_window_size: usize,
    pub weight_alpha: f64,
    pub weight_recompute_period_s: u64,
    /// Extra multiplicative weight per additional proposing agent in fallback
    /// aggregation. Zero keeps the plain weighted sum.
    pub support_bonus: f64,
    pub domain_context: String,
    pub seed: u64,
    pub runtime: RuntimeProfile,
    pub catalog_path: Option<PathBuf>,
    pub training_path: Option<PathBuf>,
    pub audit_path: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    annotation_type: String,
    primary_column: String,
    secondary_column: Option<String>,
    match_verb: Option<String>,
    user_input_label: Option<String>,
    annotation_type_plural: Option<String>,
    annotation_lower: Option<String>,
    enable_embeddings: Option<bool>,
    few_shot_count_per_agent: Option<i64>,
    confidence_thresholds: Option<RawThresholds>,
    agent_timeout_ms: Option<i64>,
    judge_timeout_ms: Option<i64>,
    planner_timeout_ms: Option<i64>,
    planner_cache_ttl_s: Option<i64>,
    batch_size: Option<i64>,
    batch_window_s: Option<i64>,
    max_retries: Option<i64>,
    retry_base_delay_ms: Option<i64>,
    worker_count: Option<i64>,
    top_n_results: Option<i64>,
    embedding_dims: Option<i64>,
    retrieval_top_k: Option<i64>,
    max_prompt_chars: Option<i64>,
    max_output_chars: Option<i64>,
    full_catalog_threshold: Option<i64>,
    fuzzy_match_threshold: Option<f64>,
    embedding_cache_capacity: Option<i64>,
    weight_window_size: Option<i64>,
    weight_alpha: Option<f64>,
    weight_recompute_period_s: Option<i64>,
    support_bonus: Option<f64>,
    domain_context: Option<String>,
    seed: Option<u64>,
    mode: Option<RunMode>,
    provider: Option<ProviderKind>,
    audit_retention_days: Option<i64>,
    catalog_path: Option<PathBuf>,
    training_path: Option<PathBuf>,
    audit_path: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawThresholds {
    high: i64,
    medium: i64,
    #[serde(default)]
    low: i64,
}

/// Native width of the embedding model the engine targets.
pub const NATIVE_EMBEDDING_DIMS: usize = 3072;

fn positive(field: &'static str, value: Option<i64>, default: i64) -> Result<u64, ConfigError> {
    let v = value.unwrap_or(default);
    if v < 1 {
        return Err(ConfigError::invalid(field, format!("must be positive, got {v}")));
    }
    Ok(v as u64)
}

fn nonnegative(field: &'static str, value: Option<i64>, default: i64) -> Result<u64, ConfigError> {
    let v = value.unwrap_or(default);
    if v < 0 {
        return Err(ConfigError::invalid(field, format!("must be nonnegative, got {v}")));
    }
    Ok(v as u64)
}

/// Naive English pluralization, keeping the input's case for the stem.
pub fn pluralize(word: &str) -> String {
    let lower = word.to_lowercase();
    let upper_tail = word.chars().last().is_some_and(|c| c.is_uppercase())
        && word.chars().count() > 1
        && word.chars().all(|c| !c.is_lowercase());
    // Acronyms ("FAQ") take a lowercase "s".
    if upper_tail {
        return format!("{word}s");
    }
    if lower.ends_with('s') || lower.ends_with('x') || lower.ends_with("ch") || lower.ends_with("sh") {
        format!("{word}es")
    } else if lower.ends_with('y')
        && !matches!(lower.chars().rev().nth(1), Some('a' | 'e' | 'i' | 'o' | 'u'))
    {
        format!("{}ies", &word[..word.len() - 1])
    } else {
        format!("{word}s")
    }
}

impl AnnotationConfig {
    /// Parse and validate a JSON config document. Relative paths inside the
    /// document are left as written; [`load_config`] resolves them.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: RawConfig) -> Result<Self, ConfigError> {
        let annotation_type = raw.annotation_type.trim().to_string();
        if annotation_type.is_empty() {
            return Err(ConfigError::invalid("annotation_type", "must be nonempty"));
        }
        let primary_column = raw.primary_column.trim().to_string();
        if primary_column.is_empty() {
            return Err(ConfigError::invalid("primary_column", "must be nonempty"));
        }
        let secondary_column = raw
            .secondary_column
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty());
        if secondary_column.as_deref() == Some(primary_column.as_str()) {
            return Err(ConfigError::invalid(
                "secondary_column",
                "must differ from primary_column",
            ));
        }

        let thresholds = match raw.confidence_thresholds {
            None => ConfidenceThresholds::default(),
            Some(t) => {
                let in_range = |v: i64| (0..=100).contains(&v);
                if !(in_range(t.high) && in_range(t.medium) && in_range(t.low))
                    || t.medium >= t.high
                    || t.low > t.medium
                {
                    return Err(ConfigError::invalid(
                        "confidence_thresholds",
                        format!(
                            "require 0 <= low <= medium < high <= 100, got high={} medium={} low={}",
                            t.high, t.medium, t.low
                        ),
                    ));
                }
                ConfidenceThresholds {
                    high: t.high as u8,
                    medium: t.medium as u8,
                    low: t.low as u8,
                }
            }
        };

        let few_shot = positive("few_shot_count_per_agent", raw.few_shot_count_per_agent, 5)?;
        if few_shot > 15 {
            return Err(ConfigError::invalid(
                "few_shot_count_per_agent",
                format!("must be at most 15, got {few_shot}"),
            ));
        }

        let agent_timeout_ms = positive("agent_timeout_ms", raw.agent_timeout_ms, 2000)?;
        let embedding_dims = positive("embedding_dims", raw.embedding_dims, NATIVE_EMBEDDING_DIMS as i64)? as usize;
        if embedding_dims > NATIVE_EMBEDDING_DIMS {
            return Err(ConfigError::invalid(
                "embedding_dims",
                format!("must not exceed native {NATIVE_EMBEDDING_DIMS}, got {embedding_dims}"),
            ));
        }
        let fuzzy = raw.fuzzy_match_threshold.unwrap_or(0.8);
        if !(0.0..=1.0).contains(&fuzzy) {
            return Err(ConfigError::invalid("fuzzy_match_threshold", "must lie in [0, 1]"));
        }
        let alpha = raw.weight_alpha.unwrap_or(1.0);
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(ConfigError::invalid("weight_alpha", "must be positive"));
        }
        let bonus = raw.support_bonus.unwrap_or(0.0);
        if !(bonus >= 0.0 && bonus.is_finite()) {
            return Err(ConfigError::invalid("support_bonus", "must be nonnegative"));
        }

        let runtime = RuntimeProfile {
            mode: raw.mode.unwrap_or_default(),
            provider_kind: raw.provider.unwrap_or_default(),
            audit_retention_days: positive("audit_retention_days", raw.audit_retention_days, 90)? as u32,
        };
        runtime.validate()?;

        let annotation_type_plural = raw
            .annotation_type_plural
            .filter(|s| !s.trim().is_empty())
            .unwrap_or_else(|| pluralize(&annotation_type));
        let annotation_lower = raw
            .annotation_lower
            .filter(|s| !s.trim().is_empty())
            .unwrap_or_else(|| annotation_type.to_lowercase());

        Ok(Self {
            annotation_type_plural,
            annotation_lower,
            annotation_type,
            primary_column,
            secondary_column,
            user_input_label: raw
                .user_input_label
                .filter(|s| !s.trim().is_empty())
                .unwrap_or_else(|| "utterance".into()),
            match_verb: raw
                .match_verb
                .filter(|s| !s.trim().is_empty())
                .unwrap_or_else(|| "map".into()),
            enable_embeddings: raw.enable_embeddings.unwrap_or(true),
            few_shot_count_per_agent: few_shot as usize,
            confidence_thresholds: thresholds,
            agent_timeout_ms,
            judge_timeout_ms: positive("judge_timeout_ms", raw.judge_timeout_ms, 200)?,
            planner_timeout_ms: positive("planner_timeout_ms", raw.planner_timeout_ms, agent_timeout_ms as i64)?,
            planner_cache_ttl_s: positive("planner_cache_ttl_s", raw.planner_cache_ttl_s, 86_400)?,
            batch_size: positive("batch_size", raw.batch_size, 100)? as usize,
            batch_window_s: positive("batch_window_s", raw.batch_window_s, 86_400)?,
            max_retries: nonnegative("max_retries", raw.max_retries, 3)? as u32,
            retry_base_delay_ms: nonnegative("retry_base_delay_ms", raw.retry_base_delay_ms, 250)?,
            worker_count: positive("worker_count", raw.worker_count, 50)? as usize,
            top_n_results: positive("top_n_results", raw.top_n_results, 5)? as usize,
            embedding_dims,
            retrieval_top_k: positive("retrieval_top_k", raw.retrieval_top_k, 50)? as usize,
            max_prompt_chars: positive("max_prompt_chars", raw.max_prompt_chars, 24_000)? as usize,
            max_output_chars: positive("max_output_chars", raw.max_output_chars, 16_384)? as usize,
            full_catalog_threshold: nonnegative("full_catalog_threshold", raw.full_catalog_threshold, 200)? as usize,
            fuzzy_match_threshold: fuzzy,
            embedding_cache_capacity: positive("embedding_cache_capacity", raw.embedding_cache_capacity, 10_000)? as usize,
            weight_window_size: positive("weight_window_size", raw.weight_window_size, 1000)? as usize,
            weight_alpha: alpha,
            weight_recompute_period_s: positive("weight_recompute_period_s", raw.weight_recompute_period_s, 86_400)?,
            support_bonus: bonus,
            domain_context: raw.domain_context.unwrap_or_default(),
            seed: raw.seed.unwrap_or(0),
            runtime,
            catalog_path: raw.catalog_path,
            training_path: raw.training_path,
            audit_path: raw.audit_path,
        })
    }

    /// True when the task is FAQ mapping, which uses the literal
    /// `Question:` / `Answer:` labels.
    pub fn is_faq(&self) -> bool {
        self.annotation_type.eq_ignore_ascii_case("faq")
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.catalog_path, &mut self.training_path, &mut self.audit_path]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Read, parse and validate a config file. Relative data paths in the
/// document are resolved against the file's directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<AnnotationConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut config = AnnotationConfig::from_json(&text)?;
    if let Some(dir) = path.parent() {
        config.resolve_paths(dir);
    }
    Ok(config)
}

/// Placeholders a template may use.
pub const PLACEHOLDERS: [&str; 5] = [
    "ANNOTATION_TYPE",
    "ANNOTATION_TYPE_PLURAL",
    "ANNOTATION_LOWER",
    "MATCH_VERB",
    "USER_INPUT_LABEL",
];

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Z][A-Z0-9_]*)\}").expect("static regex"))
}

/// Replace every `{PLACEHOLDER}` in `template` with its config value.
///
/// Only uppercase brace tokens are placeholders, so JSON examples embedded in
/// prompt templates pass through untouched.
pub fn interpolate(template: &str, config: &AnnotationConfig) -> Result<String, ConfigError> {
    let re = placeholder_re();
    let mut out = String::with_capacity(template.len() + 64);
    let mut last = 0;
    for caps in re.captures_iter(template) {
        let whole = caps.get(0).expect("group 0");
        let value = match &caps[1] {
            "ANNOTATION_TYPE" => &config.annotation_type,
            "ANNOTATION_TYPE_PLURAL" => &config.annotation_type_plural,
            "ANNOTATION_LOWER" => &config.annotation_lower,
            "MATCH_VERB" => &config.match_verb,
            "USER_INPUT_LABEL" => &config.user_input_label,
            other => return Err(ConfigError::UnknownPlaceholder(other.to_string())),
        };
        out.push_str(&template[last..whole.start()]);
        out.push_str(value);
        last = whole.end();
    }
    out.push_str(&template[last..]);
    Ok(out)
}

/// Whether `text` still contains an uppercase placeholder token.
pub fn has_placeholder(text: &str) -> bool {
    placeholder_re().is_match(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn faq_json() -> &'static str {
        r#"{
            "annotation_type": "FAQ",
            "primary_column": "question",
            "secondary_column": "answer",
            "match_verb": "map",
            "user_input_label": "utterance",
            "confidence_thresholds": {"high": 85, "medium": 60, "low": 0}
        }"#
    }

    #[test]
    fn loads_faq_config_with_defaults() {
        let c = AnnotationConfig::from_json(faq_json()).unwrap();
        assert_eq!(c.annotation_type, "FAQ");
        assert_eq!(c.primary_column, "question");
        assert_eq!(c.secondary_column.as_deref(), Some("answer"));
        assert_eq!(c.match_verb, "map");
        assert_eq!(
            (c.confidence_thresholds.high, c.confidence_thresholds.medium),
            (85, 60)
        );
        assert_eq!(c.annotation_type_plural, "FAQs");
        assert_eq!(c.annotation_lower, "faq");
        assert_eq!(c.agent_timeout_ms, 2000);
        assert_eq!(c.judge_timeout_ms, 200);
        assert_eq!(c.planner_timeout_ms, 2000);
        assert_eq!(c.few_shot_count_per_agent, 5);
        assert_eq!(c.top_n_results, 5);
        assert_eq!(c.retrieval_top_k, 50);
        assert_eq!(c.embedding_dims, 3072);
        assert_eq!(c.max_retries, 3);
        assert_eq!(c.batch_size, 100);
        assert_eq!(c.worker_count, 50);
        assert_eq!(c.runtime.audit_retention_days, 90);
    }

    #[test]
    fn inverted_thresholds_are_rejected() {
        let err = AnnotationConfig::from_json(
            r#"{"annotation_type":"FAQ","primary_column":"question",
                "confidence_thresholds":{"high":50,"medium":60}}"#,
        )
        .unwrap_err();
        assert_eq!(err.field(), Some("confidence_thresholds"));
    }

    #[test]
    fn secondary_equal_to_primary_is_rejected() {
        let err = AnnotationConfig::from_json(
            r#"{"annotation_type":"Intent","primary_column":"name","secondary_column":"name"}"#,
        )
        .unwrap_err();
        assert_eq!(err.field(), Some("secondary_column"));
    }

    #[test]
    fn empty_primary_and_zero_counts_are_rejected() {
        let e = AnnotationConfig::from_json(r#"{"annotation_type":"FAQ","primary_column":" "}"#)
            .unwrap_err();
        assert_eq!(e.field(), Some("primary_column"));
        let e = AnnotationConfig::from_json(
            r#"{"annotation_type":"FAQ","primary_column":"q","few_shot_count_per_agent":0}"#,
        )
        .unwrap_err();
        assert_eq!(e.field(), Some("few_shot_count_per_agent"));
        let e = AnnotationConfig::from_json(
            r#"{"annotation_type":"FAQ","primary_column":"q","top_n_results":0}"#,
        )
        .unwrap_err();
        assert_eq!(e.field(), Some("top_n_results"));
        let e = AnnotationConfig::from_json(
            r#"{"annotation_type":"FAQ","primary_column":"q","embedding_dims":4096}"#,
        )
        .unwrap_err();
        assert_eq!(e.field(), Some("embedding_dims"));
    }

    #[test]
    fn malformed_and_unknown_keys_are_parse_errors() {
        assert!(matches!(
            AnnotationConfig::from_json("{not json"),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            AnnotationConfig::from_json(
                r#"{"annotation_type":"FAQ","primary_column":"q","bogus":1}"#
            ),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn derived_names_are_overridable() {
        let c = AnnotationConfig::from_json(
            r#"{"annotation_type":"Intent","primary_column":"intent_name",
                "annotation_type_plural":"intents","match_verb":"classify"}"#,
        )
        .unwrap();
        assert_eq!(c.annotation_type_plural, "intents");
        assert_eq!(c.annotation_lower, "intent");
        assert!(!c.is_faq());
    }

    #[test]
    fn pluralization() {
        assert_eq!(pluralize("FAQ"), "FAQs");
        assert_eq!(pluralize("Intent"), "Intents");
        assert_eq!(pluralize("category"), "categories");
        assert_eq!(pluralize("Day"), "Days");
        assert_eq!(pluralize("class"), "classes");
    }

    #[test]
    fn interpolation() {
        let c = AnnotationConfig::from_json(faq_json()).unwrap();
        assert_eq!(
            interpolate("{MATCH_VERB} user {USER_INPUT_LABEL}s", &c).unwrap(),
            "map user utterances"
        );
        assert_eq!(interpolate("no placeholders {x}", &c).unwrap(), "no placeholders {x}");
        assert!(matches!(
            interpolate("{BOGUS}", &c),
            Err(ConfigError::UnknownPlaceholder(p)) if p == "BOGUS"
        ));
    }

    #[test]
    fn load_config_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(
            &path,
            r#"{"annotation_type":"FAQ","primary_column":"question","catalog_path":"faq.jsonl"}"#,
        )
        .unwrap();
        let c = load_config(&path).unwrap();
        assert_eq!(c.catalog_path.unwrap(), dir.path().join("faq.jsonl"));
        assert!(matches!(
            load_config(dir.path().join("missing.json")),
            Err(ConfigError::Io { .. })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn interpolate_is_idempotent(
                parts in proptest::collection::vec(
                    prop_oneof![
                        "[a-z {}\":,]{0,12}",
                        Just("{ANNOTATION_TYPE}".to_string()),
                        Just("{ANNOTATION_TYPE_PLURAL}".to_string()),
                        Just("{ANNOTATION_LOWER}".to_string()),
                        Just("{MATCH_VERB}".to_string()),
                        Just("{USER_INPUT_LABEL}".to_string()),
                    ],
                    0..12,
                )
            ) {
                let c = AnnotationConfig::from_json(faq_json()).unwrap();
                let template: String = parts.concat();
                let once = interpolate(&template, &c).unwrap();
                prop_assert!(!has_placeholder(&once));
                prop_assert_eq!(interpolate(&once, &c).unwrap(), once);
            }

            #[test]
            fn loading_is_deterministic(high in 1u8..=100, medium in 0u8..100) {
                let doc = format!(
                    r#"{{"annotation_type":"FAQ","primary_column":"q","confidence_thresholds":{{"high":{high},"medium":{medium}}}}}"#
                );
                let a = AnnotationConfig::from_json(&doc);
                let b = AnnotationConfig::from_json(&doc);
                match (a, b) {
                    (Ok(a), Ok(b)) => { prop_assert!(medium < high); prop_assert_eq!(a, b); }
                    (Err(a), Err(b)) => {
                        prop_assert!(medium >= high);
                        prop_assert_eq!(a.to_string(), b.to_string());
                    }
                    _ => prop_assert!(false, "nondeterministic load"),
                }
            }
        }
    }
}
