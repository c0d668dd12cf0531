//! Configurable multi-agent annotation engine.
//!
//! An utterance flows through a query planner, four ranker agents running
//! concurrently under per-agent deadlines, and a judge that reranks the merged
//! candidates (falling back to weighted score aggregation when the judge is
//! unavailable). The final ranking is routed to auto-accept, flagged accept, or
//! human review by confidence band.
//!
//! ```text
//! utterance → plan_query → ┬ primary_no_emb ┐
//!                          ├ primary_emb    ├→ aggregate → judge_rerank → route
//!                          ├ full_no_emb    │              (fallback_rank)
//!                          └ full_emb       ┘
//! ```
//!
//! Every backend call goes through [`provider::ModelProvider`]; the
//! deterministic [`provider::MockProvider`] is the test substrate.

pub mod agents;
pub mod audit;
pub mod clock;
pub mod config;
pub mod evaluation;
pub mod judge;
pub mod knowledge_base;
pub mod pipeline;
pub mod prompting;
pub mod provider;
pub mod retrieval;
pub mod text;

pub use agents::{AgentId, AgentRun, AgentSpec, AgentStatus, QueryPlan};
pub use clock::{Clock, ManualClock, SystemClock};
pub use config::{AnnotationConfig, ConfidenceThresholds, RuntimeProfile};
pub use judge::{AgentWeights, CandidateAggregate, JudgeResult, SharedWeights};
pub use knowledge_base::{AnnotationEntry, Catalog, TrainingExample};
pub use pipeline::{AnnotationResult, Engine, RoutingDecision};
pub use prompting::StructuredVerdict;
pub use provider::{MockProvider, ModelProvider, ProviderError};
