//! Privacy-preserving audit log: raw utterances are hashed, stored text is
//! PII-masked, records are append-only JSONL with retention purging.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::Mutex;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::agents::{sibling, AgentId, AgentStatus};
use crate::clock::{Clock, MS_PER_DAY};
use crate::text::sha256_hex;

#[derive(Debug, thiserror::Error)]
pub enum AuditError {
    #[error("audit storage error: {0}")]
    Storage(#[from] std::io::Error),
    #[error("corrupt audit record on line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("invalid PII pattern `{name}`: {message}")]
    Pattern { name: String, message: String },
}

#[derive(Debug, Clone)]
pub struct PiiPattern {
    pub name: String,
    pub regex: Regex,
    pub token: String,
}

/// Ordered masking rules. Each match is replaced by `⟨NAME⟩`.
#[derive(Debug, Clone)]
pub struct PiiPolicy {
    pub patterns: Vec<PiiPattern>,
}

impl PiiPolicy {
    pub fn new(rules: &[(&str, &str)]) -> Result<Self, AuditError> {
        let patterns = rules
            .iter()
            .map(|(name, re)| {
                Ok(PiiPattern {
                    name: name.to_string(),
                    regex: Regex::new(re).map_err(|e| AuditError::Pattern {
                        name: name.to_string(),
                        message: e.to_string(),
                    })?,
                    token: format!("⟨{name}⟩"),
                })
            })
            .collect::<Result<_, AuditError>>()?;
        Ok(Self { patterns })
    }
}

pub const DEFAULT_PII_RULES: [(&str, &str); 4] = [
    ("EMAIL", r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}"),
    ("SSN", r"\b\d{3}-\d{2}-\d{4}\b"),
    ("CARD", r"\b(?:\d{4}[ -]){3}\d{4}\b|\b\d{13,19}\b"),
    ("ACCT", r"\b\d{8,12}\b"),
];

impl Default for PiiPolicy {
    fn default() -> Self {
        Self::new(&DEFAULT_PII_RULES).expect("default patterns compile")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Masked {
    pub text: String,
    pub matches: usize,
}

pub fn mask(text: &str, policy: &PiiPolicy) -> Masked {
    let mut out = text.to_string();
    let mut matches = 0;
    for p in &policy.patterns {
        let n = p.regex.find_iter(&out).count();
        if n > 0 {
            matches += n;
            out = p.regex.replace_all(&out, p.token.as_str()).into_owned();
        }
    }
    Masked { text: out, matches }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCandidate {
    pub annotation_id: String,
    pub final_score: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultSummary {
    pub top: Vec<AuditCandidate>,
    pub band: String,
    pub action: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub record_id: u64,
    pub timestamp_ms: i64,
    /// SHA-256 of the raw utterance.
    pub query_hash: String,
    pub masked_utterance: String,
    pub pii_matches: usize,
    /// Absent when no result was produced.
    pub result_summary: Option<ResultSummary>,
    pub agent_statuses: BTreeMap<AgentId, AgentStatus>,
}

struct Writer {
    file: File,
    next_id: u64,
}

/// Append-only JSONL audit store. A `.seq` sidecar keeps ids increasing
/// across purges.
pub struct AuditStore {
    path: PathBuf,
    policy: PiiPolicy,
    clock: Arc<dyn Clock>,
    writer: Mutex<Writer>,
}

impl std::fmt::Debug for AuditStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AuditStore").field("path", &self.path).finish()
    }
}

fn read_records(path: &Path) -> Result<Vec<AuditRecord>, AuditError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| AuditError::Corrupt {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

impl AuditStore {
    pub fn open(path: impl AsRef<Path>, clock: Arc<dyn Clock>) -> Result<Self, AuditError> {
        Self::with_policy(path, clock, PiiPolicy::default())
    }

    pub fn with_policy(path: impl AsRef<Path>, clock: Arc<dyn Clock>, policy: PiiPolicy) -> Result<Self, AuditError> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let last_in_file = read_records(&path)?.iter().map(|r| r.record_id).max().unwrap_or(0);
        let last_seq = std::fs::read_to_string(sibling(&path, ".seq"))
            .ok()
            .and_then(|s| s.trim().parse::<u64>().ok())
            .unwrap_or(0);
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            policy,
            clock,
            writer: Mutex::new(Writer {
                file,
                next_id: last_in_file.max(last_seq) + 1,
            }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn cold_path(&self) -> PathBuf {
        sibling(&self.path, ".cold")
    }

    /// Hash and mask `utterance`, then append. The raw text is never written.
    pub fn append(
        &self,
        utterance: &str,
        result_summary: Option<ResultSummary>,
        agent_statuses: BTreeMap<AgentId, AgentStatus>,
    ) -> Result<u64, AuditError> {
        let masked = mask(utterance, &self.policy);
        let mut w = self.writer.lock();
        let record = AuditRecord {
            record_id: w.next_id,
            timestamp_ms: self.clock.now_ms(),
            query_hash: sha256_hex(utterance),
            masked_utterance: masked.text,
            pii_matches: masked.matches,
            result_summary,
            agent_statuses,
        };
        let line = serde_json::to_string(&record).map_err(std::io::Error::from)?;
        writeln!(w.file, "{line}")?;
        w.file.sync_data()?;
        std::fs::write(sibling(&self.path, ".seq"), record.record_id.to_string())?;
        w.next_id += 1;
        Ok(record.record_id)
    }

    pub fn read_all(&self) -> Result<Vec<AuditRecord>, AuditError> {
        let _w = self.writer.lock();
        read_records(&self.path)
    }

    /// Remove records older than `retention_days` as of `now_ms`, moving them
    /// to the `.cold` file when `archive` is set.
    pub fn purge(&self, now_ms: i64, retention_days: u32, archive: bool) -> Result<usize, AuditError> {
        let mut w = self.writer.lock();
        let cutoff = i64::from(retention_days) * MS_PER_DAY;
        let (old, keep): (Vec<_>, Vec<_>) = read_records(&self.path)?
            .into_iter()
            .partition(|r| now_ms - r.timestamp_ms > cutoff);
        if old.is_empty() {
            return Ok(0);
        }
        if archive {
            let mut cold = OpenOptions::new().create(true).append(true).open(self.cold_path())?;
            for r in &old {
                writeln!(cold, "{}", serde_json::to_string(r).map_err(std::io::Error::from)?)?;
            }
            cold.sync_all()?;
        }
        let tmp = sibling(&self.path, ".tmp");
        {
            let mut f = File::create(&tmp)?;
            for r in &keep {
                writeln!(f, "{}", serde_json::to_string(r).map_err(std::io::Error::from)?)?;
            }
            f.sync_all()?;
        }
        std::fs::rename(&tmp, &self.path)?;
        w.file = OpenOptions::new().append(true).open(&self.path)?;
        Ok(old.len())
    }

    pub fn now_ms(&self) -> i64 {
        self.clock.now_ms()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;

    #[test]
    fn mask_examples() {
        let p = PiiPolicy::default();
        assert_eq!(
            mask("my card 4111111111111111 is lost", &p),
            Masked {
                text: "my card ⟨CARD⟩ is lost".into(),
                matches: 1
            }
        );
        assert_eq!(mask("lost deb", &p).matches, 0);
        let m = mask("mail me at a@b.com re acct 12345678", &p);
        assert_eq!(m.text, "mail me at ⟨EMAIL⟩ re acct ⟨ACCT⟩");
        assert_eq!(m.matches, 2);
    }

    #[test]
    fn append_purge_cycle() {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(ManualClock::new(0));
        let store = AuditStore::open(dir.path().join("audit.jsonl"), clock.clone()).unwrap();
        let ids: Vec<u64> = (0..3)
            .map(|i| store.append(&format!("query {i}"), None, BTreeMap::new()).unwrap())
            .collect();
        assert_eq!(ids, vec![1, 2, 3]);
        assert_eq!(store.purge(89 * MS_PER_DAY, 90, true).unwrap(), 0);
        assert_eq!(store.purge(91 * MS_PER_DAY, 90, true).unwrap(), 3);
        assert_eq!(read_records(&store.cold_path()).unwrap().len(), 3);
        assert_eq!(store.append("again", None, BTreeMap::new()).unwrap(), 4);
    }
}
