//! Chat-completion and embedding backends.
//!
//! [`ModelProvider`] is the only way the engine talks to a model. Two
//! implementations ship: [`MockProvider`], a deterministic function of its
//! inputs used by every test, and [`HttpProvider`], which speaks a generic
//! chat-completions wire format.

mod http;
mod mock;

use std::collections::BTreeMap;
use std::future::Future;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

pub use http::{HttpProvider, HttpProviderSettings};
pub use mock::{Corruption, MockBehavior, MockFault, MockProvider, PlanFixture};

/// Temperature for ranker agents.
pub const RANKER_TEMPERATURE: f64 = 0.1;
/// Temperature for the judge.
pub const JUDGE_TEMPERATURE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub max_output_chars: usize,
    pub deadline_ms: u64,
    /// Caller tag such as `planner`, `ranker:full_emb` or `judge`. Used for
    /// logging and fault injection; never part of the prompt.
    #[serde(default)]
    pub label: String,
}

impl ChatRequest {
    pub fn new(system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            temperature: RANKER_TEMPERATURE,
            max_output_chars: 16_384,
            deadline_ms: 2000,
            label: String::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ProviderError::Validation(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_output_chars == 0 || self.deadline_ms == 0 {
            return Err(ProviderError::Validation(
                "max_output_chars and deadline_ms must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub latency_ms: u64,
    #[serde(default)]
    pub provider_meta: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRequest {
    pub texts: Vec<String>,
    pub target_dims: usize,
}

impl EmbeddingRequest {
    pub fn validate(&self, native_dims: usize) -> Result<(), ProviderError> {
        if self.texts.is_empty() {
            return Err(ProviderError::Validation("embedding request has no texts".into()));
        }
        if self.target_dims == 0 || self.target_dims > native_dims {
            return Err(ProviderError::Validation(format!(
                "target_dims {} outside 1..={native_dims}",
                self.target_dims
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProviderError {
    #[error("deadline of {deadline_ms}ms exceeded")]
    Timeout { deadline_ms: u64 },
    /// Transient failure (rate limit, 5xx, connection reset). Retryable.
    #[error("transient provider error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Transient { status: Option<u16>, message: String },
    #[error("fatal provider error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Fatal { status: Option<u16>, message: String },
    #[error("invalid request: {0}")]
    Validation(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, Self::Transient { .. })
    }

    /// Map an HTTP status to an error. 408, 429 and 5xx are transient.
    pub fn from_status(status: u16, body: impl Into<String>) -> Self {
        let message = body.into();
        if status == 408 || status == 429 || (500..600).contains(&status) {
            Self::Transient {
                status: Some(status),
                message,
            }
        } else {
            Self::Fatal {
                status: Some(status),
                message,
            }
        }
    }
}

#[async_trait]
pub trait ModelProvider: Send + Sync {
    /// Single chat completion. Implementations must give up at
    /// `req.deadline_ms`.
    async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError>;

    /// One unit-normalized vector of `target_dims` per input text.
    async fn embed(&self, req: &EmbeddingRequest) -> Result<Vec<Vec<f64>>, ProviderError>;

    fn native_dims(&self) -> usize;

    fn kind(&self) -> &'static str;
}

/// Run `req` against `provider` with a hard deadline, whatever the provider
/// does internally.
pub async fn complete_with_deadline(
    provider: &dyn ModelProvider,
    req: &ChatRequest,
) -> Result<ChatResponse, ProviderError> {
    req.validate()?;
    match tokio::time::timeout(Duration::from_millis(req.deadline_ms), provider.complete(req)).await {
        Ok(r) => r,
        Err(_) => Err(ProviderError::Timeout {
            deadline_ms: req.deadline_ms,
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay_ms: 250,
        }
    }
}

#[derive(Debug)]
pub struct RetryReport<T> {
    pub result: Result<T, ProviderError>,
    pub attempts: u32,
    /// Backoff waits taken between attempts.
    pub delays_ms: Vec<u64>,
}

/// Retry `op` on transient errors with exponential backoff (d, 2d, 4d, ...).
/// At most `max_retries + 1` attempts; any other error returns immediately.
pub async fn with_retry<T, F, Fut>(policy: RetryPolicy, mut op: F) -> RetryReport<T>
where
    F: FnMut() -> Fut,
    Fut: Future<Output = Result<T, ProviderError>>,
{
    let mut attempts = 0;
    let mut delays_ms = Vec::new();
    loop {
        attempts += 1;
        match op().await {
            Ok(v) => {
                return RetryReport {
                    result: Ok(v),
                    attempts,
                    delays_ms,
                }
            }
            Err(e) if e.is_retryable() && attempts <= policy.max_retries => {
                let delay = policy
                    .base_delay_ms
                    .saturating_mul(1u64 << (attempts - 1).min(32));
                delays_ms.push(delay);
                tracing::debug!(attempt = attempts, delay, error = %e, "retrying provider call");
                tokio::time::sleep(Duration::from_millis(delay)).await;
            }
            Err(e) => {
                return RetryReport {
                    result: Err(e),
                    attempts,
                    delays_ms,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn transient() -> ProviderError {
        ProviderError::Transient {
            status: Some(503),
            message: "busy".into(),
        }
    }

    #[tokio::test(start_paused = true)]
    async fn retries_until_success() {
        let calls = AtomicU32::new(0);
        let report = with_retry(RetryPolicy { max_retries: 3, base_delay_ms: 100 }, || async {
            if calls.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(transient())
            } else {
                Ok(7)
            }
        })
        .await;
        assert_eq!(report.result.unwrap(), 7);
        assert_eq!(report.attempts, 3);
        assert_eq!(report.delays_ms, vec![100, 200]);
    }

    #[tokio::test(start_paused = true)]
    async fn fatal_errors_are_not_retried() {
        let report: RetryReport<()> = with_retry(RetryPolicy { max_retries: 3, base_delay_ms: 100 }, || async {
            Err(ProviderError::Fatal {
                status: Some(401),
                message: "no".into(),
            })
        })
        .await;
        assert!(matches!(report.result, Err(ProviderError::Fatal { .. })));
        assert_eq!(report.attempts, 1);
    }

    #[tokio::test(start_paused = true)]
    async fn zero_retries_means_one_attempt() {
        let report: RetryReport<()> =
            with_retry(RetryPolicy { max_retries: 0, base_delay_ms: 100 }, || async { Err(transient()) }).await;
        assert!(report.result.is_err());
        assert_eq!(report.attempts, 1);
        assert!(report.delays_ms.is_empty());
    }

    #[tokio::test(start_paused = true)]
    async fn exhaustion_returns_last_error_and_backs_off_exponentially() {
        let start = tokio::time::Instant::now();
        let report: RetryReport<()> =
            with_retry(RetryPolicy { max_retries: 3, base_delay_ms: 250 }, || async { Err(transient()) }).await;
        assert!(matches!(report.result, Err(ProviderError::Transient { .. })));
        assert_eq!(report.attempts, 4);
        assert_eq!(report.delays_ms, vec![250, 500, 1000]);
        assert_eq!(start.elapsed(), Duration::from_millis(1750));
    }

    #[test]
    fn status_mapping() {
        assert!(ProviderError::from_status(429, "").is_retryable());
        assert!(ProviderError::from_status(503, "").is_retryable());
        assert!(!ProviderError::from_status(400, "").is_retryable());
        assert!(!ProviderError::from_status(401, "").is_retryable());
    }

    #[test]
    fn request_validation() {
        let mut req = ChatRequest::new("s", "u");
        assert!(req.validate().is_ok());
        req.temperature = 2.5;
        assert!(req.validate().is_err());
        let e = EmbeddingRequest { texts: vec![], target_dims: 8 };
        assert!(e.validate(3072).is_err());
        let e = EmbeddingRequest { texts: vec!["a".into()], target_dims: 4096 };
        assert!(e.validate(3072).is_err());
    }
}
