//! Human-review queue. Items are created for LOW-band results and decided
//! exactly once; decisions are turned into per-agent outcomes.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use annotator_core::agents::AgentId;
use annotator_core::audit::{mask, PiiPolicy};
use annotator_core::{AnnotationResult, Catalog};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error("unknown review item `{0}`")]
    UnknownItem(String),
    #[error("review item `{0}` is already decided")]
    AlreadyDecided(String),
    #[error("invalid decision: {0}")]
    InvalidDecision(String),
    #[error("review store error: {0}")]
    Storage(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    Pending,
    Decided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewCandidate {
    pub annotation_id: String,
    pub title: String,
    pub final_score: u8,
    pub reasoning: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecisionChoice {
    Chosen { annotation_id: String },
    Override { annotation_id: String },
    RejectAll,
}

impl DecisionChoice {
    pub fn selected_id(&self) -> Option<&str> {
        match self {
            Self::Chosen { annotation_id } | Self::Override { annotation_id } => Some(annotation_id),
            Self::RejectAll => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub choice: DecisionChoice,
    pub reviewer: String,
    pub decided_at_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub item_id: String,
    /// Masked for display.
    pub utterance: String,
    pub candidates: Vec<ReviewCandidate>,
    pub created_at_ms: i64,
    pub status: ReviewStatus,
    pub decision: Option<Decision>,
    /// Top candidate of every agent with a usable run.
    pub agent_top_ids: BTreeMap<AgentId, String>,
}

impl ReviewItem {
    pub fn from_result(item_id: String, result: &AnnotationResult, catalog: &Catalog, policy: &PiiPolicy, now_ms: i64) -> Self {
        Self {
            item_id,
            utterance: mask(&result.utterance, policy).text,
            candidates: result
                .judge
                .ranked
                .iter()
                .map(|r| ReviewCandidate {
                    annotation_id: r.annotation_id.clone(),
                    title: catalog
                        .get(&r.annotation_id)
                        .map(|e| e.primary_text.clone())
                        .unwrap_or_default(),
                    final_score: r.final_score,
                    reasoning: r.reasoning.clone(),
                })
                .collect(),
            created_at_ms: now_ms,
            status: ReviewStatus::Pending,
            decision: None,
            agent_top_ids: result
                .runs
                .iter()
                .filter(|r| r.is_usable())
                .filter_map(|r| r.top_id().map(|t| (r.agent_id, t.to_string())))
                .collect(),
        }
    }

    pub fn system_top(&self) -> Option<&str> {
        self.candidates.first().map(|c| c.annotation_id.as_str())
    }
}

/// Decision body as posted by a reviewer. Exactly one of the three choices
/// must be present.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionRequest {
    pub chosen_id: Option<String>,
    pub override_id: Option<String>,
    #[serde(default)]
    pub reject_all: bool,
    pub reviewer: String,
}

/// What a decision did to the bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionOutcome {
    pub item: ReviewItem,
    pub agreement: bool,
    /// Per-agent correctness forwarded to the weight tracker.
    pub agent_outcomes: BTreeMap<AgentId, bool>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ReviewStats {
    pub pending: usize,
    pub decided: usize,
    pub agreements: usize,
    pub agreement_rate: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Enqueued { item: ReviewItem },
    Decided { item_id: String, decision: Decision },
}

#[derive(Debug, Default)]
struct State {
    items: BTreeMap<String, ReviewItem>,
    /// Creation order; FIFO default.
    order: Vec<String>,
    next_seq: u64,
    agreements: usize,
}

/// Orders pending items for display. FIFO by creation unless replaced.
pub type Comparator = fn(&ReviewItem, &ReviewItem) -> std::cmp::Ordering;

pub fn fifo(a: &ReviewItem, b: &ReviewItem) -> std::cmp::Ordering {
    a.created_at_ms.cmp(&b.created_at_ms)
}

pub struct ReviewQueue {
    state: Mutex<State>,
    log: Option<Mutex<File>>,
    path: Option<PathBuf>,
    comparator: Comparator,
}

impl std::fmt::Debug for ReviewQueue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReviewQueue").field("path", &self.path).finish()
    }
}

impl Default for ReviewQueue {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl ReviewQueue {
    pub fn in_memory() -> Self {
        Self {
            state: Mutex::new(State::default()),
            log: None,
            path: None,
            comparator: fifo,
        }
    }

    /// Queue backed by an append-only JSONL event log, replayed on open.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ReviewError> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut state = State::default();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let event: Event = serde_json::from_str(&line).map_err(|e| {
                    std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
                })?;
                apply(&mut state, event);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            state: Mutex::new(state),
            log: Some(Mutex::new(file)),
            path: Some(path),
            comparator: fifo,
        })
    }

    pub fn with_comparator(mut self, comparator: Comparator) -> Self {
        self.comparator = comparator;
        self
    }

    fn persist(&self, event: &Event) -> Result<(), ReviewError> {
        if let Some(log) = &self.log {
            let mut f = log.lock();
            let line = serde_json::to_string(event).map_err(std::io::Error::from)?;
            writeln!(f, "{line}")?;
            f.sync_data()?;
        }
        Ok(())
    }

    pub fn enqueue(
        &self,
        result: &AnnotationResult,
        catalog: &Catalog,
        policy: &PiiPolicy,
        now_ms: i64,
    ) -> Result<ReviewItem, ReviewError> {
        let mut st = self.state.lock();
        st.next_seq += 1;
        let item = ReviewItem::from_result(format!("r-{:06}", st.next_seq), result, catalog, policy, now_ms);
        let event = Event::Enqueued { item: item.clone() };
        self.persist(&event)?;
        apply(&mut st, event);
        Ok(item)
    }

    pub fn get(&self, item_id: &str) -> Option<ReviewItem> {
        self.state.lock().items.get(item_id).cloned()
    }

    pub fn pending(&self, limit: usize) -> Vec<ReviewItem> {
        let st = self.state.lock();
        let mut items: Vec<ReviewItem> = st
            .order
            .iter()
            .filter_map(|id| st.items.get(id))
            .filter(|i| i.status == ReviewStatus::Pending)
            .cloned()
            .collect();
        items.sort_by(self.comparator);
        items.truncate(limit);
        items
    }

    /// Validate and record a decision. The item lock is held across the
    /// check and the write, so a second decision always sees the first.
    pub fn decide(
        &self,
        item_id: &str,
        req: &DecisionRequest,
        catalog: &Catalog,
        now_ms: i64,
    ) -> Result<DecisionOutcome, ReviewError> {
        let mut st = self.state.lock();
        let item = st
            .items
            .get(item_id)
            .ok_or_else(|| ReviewError::UnknownItem(item_id.into()))?;
        if item.status == ReviewStatus::Decided {
            return Err(ReviewError::AlreadyDecided(item_id.into()));
        }
        let choice = parse_choice(req, item, catalog)?;
        if req.reviewer.trim().is_empty() {
            return Err(ReviewError::InvalidDecision("reviewer must be nonempty".into()));
        }
        let selected = choice.selected_id().map(str::to_string);
        let agreement = selected.is_some() && selected.as_deref() == item.system_top();
        let agent_outcomes = item
            .agent_top_ids
            .iter()
            .map(|(a, top)| (*a, selected.as_deref() == Some(top.as_str())))
            .collect();
        let decision = Decision {
            choice,
            reviewer: req.reviewer.trim().to_string(),
            decided_at_ms: now_ms,
        };
        let event = Event::Decided {
            item_id: item_id.to_string(),
            decision,
        };
        self.persist(&event)?;
        apply(&mut st, event);
        Ok(DecisionOutcome {
            item: st.items[item_id].clone(),
            agreement,
            agent_outcomes,
        })
    }

    pub fn stats(&self) -> ReviewStats {
        let st = self.state.lock();
        let decided = st.items.values().filter(|i| i.status == ReviewStatus::Decided).count();
        ReviewStats {
            pending: st.items.len() - decided,
            decided,
            agreements: st.agreements,
            agreement_rate: if decided == 0 {
                0.0
            } else {
                st.agreements as f64 / decided as f64
            },
        }
    }
}

fn parse_choice(req: &DecisionRequest, item: &ReviewItem, catalog: &Catalog) -> Result<DecisionChoice, ReviewError> {
    let given = usize::from(req.chosen_id.is_some()) + usize::from(req.override_id.is_some()) + usize::from(req.reject_all);
    if given != 1 {
        return Err(ReviewError::InvalidDecision(
            "exactly one of chosen_id, override_id or reject_all is required".into(),
        ));
    }
    if let Some(id) = &req.chosen_id {
        if !item.candidates.iter().any(|c| &c.annotation_id == id) {
            return Err(ReviewError::InvalidDecision(format!("`{id}` is not a candidate of this item")));
        }
        return Ok(DecisionChoice::Chosen { annotation_id: id.clone() });
    }
    if let Some(id) = &req.override_id {
        if !catalog.contains(id) {
            return Err(ReviewError::InvalidDecision(format!("`{id}` is not in the catalog")));
        }
        return Ok(DecisionChoice::Override { annotation_id: id.clone() });
    }
    Ok(DecisionChoice::RejectAll)
}

fn apply(st: &mut State, event: Event) {
    match event {
        Event::Enqueued { item } => {
            if let Some(seq) = item.item_id.strip_prefix("r-").and_then(|s| s.parse::<u64>().ok()) {
                st.next_seq = st.next_seq.max(seq);
            }
            st.order.push(item.item_id.clone());
            st.items.insert(item.item_id.clone(), item);
        }
        Event::Decided { item_id, decision } => {
            if let Some(item) = st.items.get_mut(&item_id) {
                if item.decision.is_some() {
                    return;
                }
                if decision.choice.selected_id().is_some() && decision.choice.selected_id() == item.system_top() {
                    st.agreements += 1;
                }
                item.status = ReviewStatus::Decided;
                item.decision = Some(decision);
            }
        }
    }
}
