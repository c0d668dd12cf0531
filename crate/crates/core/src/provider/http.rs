use std::collections::BTreeMap;
use std::time::Duration;

use async_trait::async_trait;
use serde::Deserialize;
use serde_json::json;

use super::{ChatRequest, ChatResponse, EmbeddingRequest, ModelProvider, ProviderError};
use crate::config::NATIVE_EMBEDDING_DIMS;
use crate::retrieval::mrl_truncate;

/// Connection settings for an OpenAI-compatible endpoint.
#[derive(Debug, Clone)]
pub struct HttpProviderSettings {
    pub base_url: String,
    pub api_key: Option<String>,
    pub chat_model: String,
    pub embedding_model: String,
    pub native_dims: usize,
}

impl HttpProviderSettings {
    /// Read `ANNOTATOR_API_BASE`, `ANNOTATOR_API_KEY`, `ANNOTATOR_CHAT_MODEL`
    /// and `ANNOTATOR_EMBEDDING_MODEL`.
    pub fn from_env() -> Result<Self, ProviderError> {
        let base_url = std::env::var("ANNOTATOR_API_BASE")
            .map_err(|_| ProviderError::Validation("ANNOTATOR_API_BASE is not set".into()))?;
        Ok(Self {
            base_url,
            api_key: std::env::var("ANNOTATOR_API_KEY").ok(),
            chat_model: std::env::var("ANNOTATOR_CHAT_MODEL").unwrap_or_else(|_| "gpt-4o".into()),
            embedding_model: std::env::var("ANNOTATOR_EMBEDDING_MODEL")
                .unwrap_or_else(|_| "text-embedding-3-large".into()),
            native_dims: NATIVE_EMBEDDING_DIMS,
        })
    }
}

#[derive(Debug, Clone)]
pub struct HttpProvider {
    client: reqwest::Client,
    settings: HttpProviderSettings,
}

#[derive(Deserialize)]
struct ChatCompletion {
    choices: Vec<Choice>,
    #[serde(default)]
    model: Option<String>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct EmbeddingList {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

fn map_transport(err: reqwest::Error, deadline_ms: u64) -> ProviderError {
    if err.is_timeout() {
        ProviderError::Timeout { deadline_ms }
    } else if err.is_decode() {
        ProviderError::Fatal {
            status: None,
            message: err.to_string(),
        }
    } else {
        ProviderError::Transient {
            status: err.status().map(|s| s.as_u16()),
            message: err.to_string(),
        }
    }
}

impl HttpProvider {
    pub fn new(settings: HttpProviderSettings) -> Result<Self, ProviderError> {
        let client = reqwest::Client::builder()
            .build()
            .map_err(|e| ProviderError::Fatal {
                status: None,
                message: e.to_string(),
            })?;
        Ok(Self { client, settings })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.settings.base_url.trim_end_matches('/'), path)
    }

    async fn post(
        &self,
        path: &str,
        body: serde_json::Value,
        deadline_ms: u64,
    ) -> Result<reqwest::Response, ProviderError> {
        let mut rb = self
            .client
            .post(self.url(path))
            .timeout(Duration::from_millis(deadline_ms))
            .json(&body);
        if let Some(key) = &self.settings.api_key {
            rb = rb.bearer_auth(key);
        }
        let resp = rb.send().await.map_err(|e| map_transport(e, deadline_ms))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().await.unwrap_or_default();
            return Err(ProviderError::from_status(status.as_u16(), text));
        }
        Ok(resp)
    }
}

#[async_trait]
impl ModelProvider for HttpProvider {
    async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        req.validate()?;
        let started = tokio::time::Instant::now();
        let body = json!({
            "model": self.settings.chat_model,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
            "temperature": req.temperature,
            // Rough chars-per-token budget.
            "max_tokens": (req.max_output_chars / 3).max(1),
        });
        let resp = self.post("chat/completions", body, req.deadline_ms).await?;
        let parsed: ChatCompletion = resp.json().await.map_err(|e| map_transport(e, req.deadline_ms))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::Fatal {
                status: None,
                message: "response has no message content".into(),
            })?;
        let mut provider_meta = BTreeMap::new();
        provider_meta.insert("provider".into(), "http".into());
        if let Some(m) = parsed.model {
            provider_meta.insert("model".into(), m);
        }
        Ok(ChatResponse {
            text,
            latency_ms: started.elapsed().as_millis() as u64,
            provider_meta,
        })
    }

    async fn embed(&self, req: &EmbeddingRequest) -> Result<Vec<Vec<f64>>, ProviderError> {
        req.validate(self.settings.native_dims)?;
        let body = json!({
            "model": self.settings.embedding_model,
            "input": req.texts,
            "dimensions": req.target_dims,
        });
        let deadline_ms = 30_000;
        let resp = self.post("embeddings", body, deadline_ms).await?;
        let mut parsed: EmbeddingList = resp.json().await.map_err(|e| map_transport(e, deadline_ms))?;
        if parsed.data.len() != req.texts.len() {
            return Err(ProviderError::Fatal {
                status: None,
                message: format!("expected {} embeddings, got {}", req.texts.len(), parsed.data.len()),
            });
        }
        parsed.data.sort_by_key(|d| d.index.unwrap_or(0));
        parsed
            .data
            .into_iter()
            .map(|d| {
                let dims = req.target_dims.min(d.embedding.len());
                mrl_truncate(&d.embedding, dims).map_err(|e| ProviderError::Fatal {
                    status: None,
                    message: e.to_string(),
                })
            })
            .collect()
    }

    fn native_dims(&self) -> usize {
        self.settings.native_dims
    }

    fn kind(&self) -> &'static str {
        "http"
    }
}
