use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use futures::stream::{self, StreamExt};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{Engine, PipelineError, RoutingAction, TopCandidate};
use crate::prompting::Confidence;

#[derive(Debug, thiserror::Error)]
pub enum BatchError {
    #[error("cannot read batch input: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown batch job `{0}`")]
    UnknownJob(String),
    #[error("duplicate item id `{0}`")]
    DuplicateId(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchItem {
    pub id: String,
    pub utterance: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchStatus {
    Queued,
    Running,
    Complete,
    ExpiredPartial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupState {
    Pending,
    Done,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchGroup {
    pub index: usize,
    pub size: usize,
    pub state: GroupState,
    pub completed: usize,
    pub failed: usize,
}

/// Public view of a job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchJob {
    pub job_id: String,
    pub status: BatchStatus,
    pub total_items: usize,
    pub groups: Vec<BatchGroup>,
    pub created_at_ms: i64,
    pub window_deadline_ms: i64,
    /// Ids never processed because the window closed.
    pub expired_pending: Vec<String>,
    pub output_path: Option<PathBuf>,
}

/// One line of batch output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchOutputLine {
    pub id: String,
    pub top: Vec<TopCandidate>,
    pub band: Confidence,
    pub action: RoutingAction,
    pub degraded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct JobState {
    view: BatchJob,
    items: Vec<Vec<BatchItem>>,
    results: Vec<BatchOutputLine>,
}

/// Groups utterances into jobs of at most `batch_size`, processes groups
/// with bounded parallelism and expires unfinished work at the window
/// deadline.
pub struct BatchManager {
    engine: Engine,
    out_dir: Option<PathBuf>,
    jobs: Mutex<BTreeMap<String, JobState>>,
    next_id: AtomicU64,
    /// Serializes group processing per manager.
    step_lock: tokio::sync::Mutex<()>,
}

impl std::fmt::Debug for BatchManager {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BatchManager").field("out_dir", &self.out_dir).finish()
    }
}

/// Parse `{"id", "utterance"}` JSONL.
pub fn parse_batch_input(text: &str) -> Result<Vec<BatchItem>, BatchError> {
    let mut items = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: BatchItem = serde_json::from_str(line).map_err(|e| BatchError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(item.id.clone()) {
            return Err(BatchError::DuplicateId(item.id));
        }
        items.push(item);
    }
    Ok(items)
}

impl BatchManager {
    pub fn new(engine: Engine, out_dir: Option<PathBuf>) -> Self {
        Self {
            engine,
            out_dir,
            jobs: Mutex::new(BTreeMap::new()),
            next_id: AtomicU64::new(1),
            step_lock: tokio::sync::Mutex::new(()),
        }
    }

    pub fn submit_file(&self, path: impl AsRef<Path>) -> Result<BatchJob, BatchError> {
        let text = std::fs::read_to_string(path)?;
        self.submit(parse_batch_input(&text)?)
    }

    pub fn submit(&self, items: Vec<BatchItem>) -> Result<BatchJob, BatchError> {
        let config = self.engine.config();
        let size = config.batch_size.max(1);
        let now = self.engine.clock().now_ms();
        let window_ms = i64::try_from(config.batch_window_s.saturating_mul(1000)).unwrap_or(i64::MAX);
        let job_id = format!("job-{:06}", self.next_id.fetch_add(1, Ordering::SeqCst));
        let chunks: Vec<Vec<BatchItem>> = items.chunks(size).map(<[BatchItem]>::to_vec).collect();
        let output_path = self.out_dir.as_ref().map(|d| d.join(format!("{job_id}.jsonl")));
        if let Some(p) = &output_path {
            if let Some(dir) = p.parent() {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::File::create(p)?;
        }
        let view = BatchJob {
            job_id: job_id.clone(),
            status: if chunks.is_empty() { BatchStatus::Complete } else { BatchStatus::Queued },
            total_items: items.len(),
            groups: chunks
                .iter()
                .enumerate()
                .map(|(index, c)| BatchGroup {
                    index,
                    size: c.len(),
                    state: GroupState::Pending,
                    completed: 0,
                    failed: 0,
                })
                .collect(),
            created_at_ms: now,
            window_deadline_ms: now.saturating_add(window_ms),
            expired_pending: Vec::new(),
            output_path,
        };
        self.jobs.lock().insert(
            job_id,
            JobState {
                view: view.clone(),
                items: chunks,
                results: Vec::new(),
            },
        );
        Ok(view)
    }

    fn expire_if_due(&self, state: &mut JobState) {
        let v = &mut state.view;
        if matches!(v.status, BatchStatus::Complete | BatchStatus::ExpiredPartial) {
            return;
        }
        if self.engine.clock().now_ms() < v.window_deadline_ms {
            return;
        }
        for g in v.groups.iter_mut().filter(|g| g.state == GroupState::Pending) {
            g.state = GroupState::Expired;
            v.expired_pending.extend(state.items[g.index].iter().map(|i| i.id.clone()));
        }
        v.status = BatchStatus::ExpiredPartial;
    }

    pub fn poll(&self, job_id: &str) -> Result<BatchJob, BatchError> {
        let mut jobs = self.jobs.lock();
        let state = jobs.get_mut(job_id).ok_or_else(|| BatchError::UnknownJob(job_id.into()))?;
        self.expire_if_due(state);
        Ok(state.view.clone())
    }

    pub fn results(&self, job_id: &str) -> Result<Vec<BatchOutputLine>, BatchError> {
        let jobs = self.jobs.lock();
        let state = jobs.get(job_id).ok_or_else(|| BatchError::UnknownJob(job_id.into()))?;
        Ok(state.results.clone())
    }

    pub fn job_ids(&self) -> Vec<String> {
        self.jobs.lock().keys().cloned().collect()
    }

    /// Process the next pending group of `job_id`, or expire the job if its
    /// window has closed. Returns the updated view.
    pub async fn step(&self, job_id: &str) -> Result<BatchJob, BatchError> {
        let _serial = self.step_lock.lock().await;
        let (index, items) = {
            let mut jobs = self.jobs.lock();
            let state = jobs.get_mut(job_id).ok_or_else(|| BatchError::UnknownJob(job_id.into()))?;
            self.expire_if_due(state);
            let next = state.view.groups.iter().find(|g| g.state == GroupState::Pending).map(|g| g.index);
            match next {
                Some(i) => {
                    state.view.status = BatchStatus::Running;
                    (i, state.items[i].clone())
                }
                None => return Ok(state.view.clone()),
            }
        };

        let parallel = self.engine.config().worker_count.max(1);
        let futs: Vec<_> = items
            .into_iter()
            .map(|item| {
                let engine = self.engine.clone();
                async move {
                    match engine.annotate_with_id(Some(&item.id), &item.utterance, None).await {
                        Ok(r) => BatchOutputLine {
                            id: item.id.clone(),
                            top: r.top(),
                            band: r.routing.band,
                            action: r.routing.action,
                            degraded: r.degraded,
                            error: None,
                        },
                        Err(e) => BatchOutputLine {
                            id: item.id.clone(),
                            top: Vec::new(),
                            band: Confidence::Low,
                            action: RoutingAction::HumanReview,
                            degraded: true,
                            error: Some(match e {
                                PipelineError::AllAgentsFailed { .. } => "all agents failed".into(),
                                other => other.to_string(),
                            }),
                        },
                    }
                }
            })
            .collect();
        let lines: Vec<BatchOutputLine> = stream::iter(futs)
            .buffered(parallel)
            .collect()
            .await;

        let mut jobs = self.jobs.lock();
        let state = jobs.get_mut(job_id).ok_or_else(|| BatchError::UnknownJob(job_id.into()))?;
        if let Some(path) = &state.view.output_path {
            let mut f = OpenOptions::new().append(true).create(true).open(path)?;
            for l in &lines {
                writeln!(f, "{}", serde_json::to_string(l).map_err(std::io::Error::from)?)?;
            }
        }
        let group = &mut state.view.groups[index];
        group.state = GroupState::Done;
        group.failed = lines.iter().filter(|l| l.error.is_some()).count();
        group.completed = lines.len() - group.failed;
        state.results.extend(lines);
        if state.view.groups.iter().all(|g| g.state == GroupState::Done) {
            state.view.status = BatchStatus::Complete;
        }
        Ok(state.view.clone())
    }

    /// Step until the job is complete or expired.
    pub async fn run(&self, job_id: &str) -> Result<BatchJob, BatchError> {
        loop {
            let view = self.step(job_id).await?;
            if matches!(view.status, BatchStatus::Complete | BatchStatus::ExpiredPartial) {
                return Ok(view);
            }
        }
    }
}
