//! Annotation catalog and training-pool ingestion.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::AnnotationConfig;
use crate::text::{capitalize, sha256_hex};

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("rows missing a value for `{column}`: {rows:?}")]
    MissingValues { column: String, rows: Vec<usize> },
    #[error("training examples reference unknown ids: {0:?}")]
    DanglingReferences(Vec<(usize, String)>),
    #[error("unsupported catalog format `{0}` (expected .jsonl, .json or .csv)")]
    UnsupportedFormat(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationEntry {
    pub id: String,
    pub primary_text: String,
    pub secondary_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_primary: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_full: Option<Vec<f64>>,
}

impl AnnotationEntry {
    pub fn new(id: impl Into<String>, primary: impl Into<String>, secondary: Option<String>) -> Self {
        Self {
            id: id.into(),
            primary_text: primary.into(),
            secondary_text: secondary,
            embedding_primary: None,
            embedding_full: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedAlternative {
    pub id: String,
    pub score: u8,
    #[serde(default)]
    pub reasoning: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub utterance: String,
    pub gold_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranked_alternatives: Option<Vec<RankedAlternative>>,
}

/// Immutable, ingested label set.
#[derive(Debug, Clone)]
pub struct Catalog {
    entries: Vec<AnnotationEntry>,
    by_id: HashMap<String, usize>,
    source_digest: String,
}

impl Catalog {
    /// Build from in-memory entries. The digest covers ids and texts.
    pub fn from_entries(entries: Vec<AnnotationEntry>) -> Result<Self, CatalogError> {
        let mut canonical = String::new();
        for e in &entries {
            canonical.push_str(&e.id);
            canonical.push('\x1f');
            canonical.push_str(&e.primary_text);
            canonical.push('\x1f');
            canonical.push_str(e.secondary_text.as_deref().unwrap_or(""));
            canonical.push('\x1e');
        }
        Self::with_digest(entries, sha256_hex(canonical))
    }

    fn with_digest(entries: Vec<AnnotationEntry>, source_digest: String) -> Result<Self, CatalogError> {
        let mut by_id = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if by_id.insert(e.id.clone(), i).is_some() {
                return Err(CatalogError::DuplicateId(e.id.clone()));
            }
        }
        Ok(Self {
            entries,
            by_id,
            source_digest,
        })
    }

    pub fn entries(&self) -> &[AnnotationEntry] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&AnnotationEntry> {
        self.by_id.get(id).map(|&i| &self.entries[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn source_digest(&self) -> &str {
        &self.source_digest
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CatalogError> {
    std::fs::read(path).map_err(|source| CatalogError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn synth_id(ordinal: usize, total: usize) -> String {
    let width = total.to_string().len().max(4);
    format!("{ordinal:0width$}")
}

fn value_to_text(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

struct RawRow {
    line: usize,
    id: Option<String>,
    primary: Option<String>,
    secondary: Option<String>,
}

fn rows_to_catalog(
    rows: Vec<RawRow>,
    config: &AnnotationConfig,
    digest: String,
) -> Result<Catalog, CatalogError> {
    let missing: Vec<usize> = rows
        .iter()
        .filter(|r| r.primary.as_deref().is_none_or(|p| p.trim().is_empty()))
        .map(|r| r.line)
        .collect();
    if !missing.is_empty() {
        return Err(CatalogError::MissingValues {
            column: config.primary_column.clone(),
            rows: missing,
        });
    }
    let total = rows.len();
    let entries = rows
        .into_iter()
        .enumerate()
        .map(|(i, r)| AnnotationEntry {
            id: r
                .id
                .filter(|s| !s.trim().is_empty())
                .unwrap_or_else(|| synth_id(i + 1, total)),
            primary_text: r.primary.unwrap_or_default().trim().to_string(),
            secondary_text: r.secondary.map(|s| s.trim().to_string()).filter(|s| !s.is_empty()),
            embedding_primary: None,
            embedding_full: None,
        })
        .collect();
    Catalog::with_digest(entries, digest)
}

fn parse_jsonl_catalog(bytes: &[u8], config: &AnnotationConfig) -> Result<Vec<RawRow>, CatalogError> {
    let text = std::str::from_utf8(bytes).map_err(|e| CatalogError::Parse {
        line: 0,
        message: e.to_string(),
    })?;
    let mut rows = Vec::new();
    let mut saw_primary = false;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let obj: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(line).map_err(|e| CatalogError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        let primary = obj.get(&config.primary_column).and_then(value_to_text);
        saw_primary |= obj.contains_key(&config.primary_column);
        rows.push(RawRow {
            line: i + 1,
            id: obj.get("id").and_then(value_to_text),
            primary,
            secondary: config
                .secondary_column
                .as_ref()
                .and_then(|c| obj.get(c))
                .and_then(value_to_text),
        });
    }
    if !rows.is_empty() && !saw_primary {
        return Err(CatalogError::MissingColumn(config.primary_column.clone()));
    }
    Ok(rows)
}

fn parse_csv_catalog(bytes: &[u8], config: &AnnotationConfig) -> Result<Vec<RawRow>, CatalogError> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| CatalogError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let primary_idx =
        col(&config.primary_column).ok_or_else(|| CatalogError::MissingColumn(config.primary_column.clone()))?;
    let secondary_idx = match &config.secondary_column {
        Some(name) => Some(col(name).ok_or_else(|| CatalogError::MissingColumn(name.clone()))?),
        None => None,
    };
    let id_idx = col("id");
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // Header is line 1.
        let line = i + 2;
        let record = record.map_err(|e| CatalogError::Parse {
            line,
            message: e.to_string(),
        })?;
        rows.push(RawRow {
            line,
            id: id_idx.and_then(|j| record.get(j)).map(str::to_string),
            primary: record.get(primary_idx).map(str::to_string),
            secondary: secondary_idx.and_then(|j| record.get(j)).map(str::to_string),
        });
    }
    Ok(rows)
}

/// Load a catalog from a JSONL or CSV file, chosen by extension.
pub fn ingest_catalog(path: impl AsRef<Path>, config: &AnnotationConfig) -> Result<Catalog, CatalogError> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    let rows = match ext.as_str() {
        "jsonl" | "json" | "ndjson" => parse_jsonl_catalog(&bytes, config)?,
        "csv" => parse_csv_catalog(&bytes, config)?,
        other => return Err(CatalogError::UnsupportedFormat(other.to_string())),
    };
    rows_to_catalog(rows, config, sha256_hex(&bytes))
}

/// Load training examples (JSONL) and check every gold id against the
/// catalog. All dangling references are reported at once.
pub fn load_training(path: impl AsRef<Path>, catalog: &Catalog) -> Result<Vec<TrainingExample>, CatalogError> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let text = String::from_utf8(bytes).map_err(|e| CatalogError::Parse {
        line: 0,
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex: TrainingExample = serde_json::from_str(line).map_err(|e| CatalogError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, ex));
    }
    validate_training(out, catalog)
}

pub fn validate_training(
    examples: Vec<(usize, TrainingExample)>,
    catalog: &Catalog,
) -> Result<Vec<TrainingExample>, CatalogError> {
    let mut dangling = Vec::new();
    for (line, ex) in &examples {
        if !catalog.contains(&ex.gold_id) {
            dangling.push((*line, ex.gold_id.clone()));
        }
        for alt in ex.ranked_alternatives.iter().flatten() {
            if !catalog.contains(&alt.id) {
                dangling.push((*line, alt.id.clone()));
            }
        }
    }
    if !dangling.is_empty() {
        return Err(CatalogError::DanglingReferences(dangling));
    }
    Ok(examples.into_iter().map(|(_, e)| e).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    PrimaryOnly,
    FullContext,
}

impl EmbeddingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::PrimaryOnly => "primary_only",
            Self::FullContext => "full_context",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingText {
    pub text: String,
    /// Full context was requested but the entry has no secondary text.
    pub fell_back: bool,
}

/// Field labels used when rendering an entry with its secondary text.
pub fn field_labels(config: &AnnotationConfig) -> (String, String) {
    if config.is_faq() {
        return ("Question".into(), "Answer".into());
    }
    let secondary = config.secondary_column.as_deref().unwrap_or("details");
    (capitalize(&config.primary_column), capitalize(secondary))
}

/// Text fed to the embedder for `entry`.
pub fn embedding_text(entry: &AnnotationEntry, mode: EmbeddingMode, config: &AnnotationConfig) -> EmbeddingText {
    match (mode, entry.secondary_text.as_deref()) {
        (EmbeddingMode::FullContext, Some(secondary)) => {
            let (p, s) = field_labels(config);
            EmbeddingText {
                text: format!("{p}: {} {s}: {secondary}", entry.primary_text),
                fell_back: false,
            }
        }
        (EmbeddingMode::FullContext, None) => EmbeddingText {
            text: entry.primary_text.clone(),
            fell_back: true,
        },
        (EmbeddingMode::PrimaryOnly, _) => EmbeddingText {
            text: entry.primary_text.clone(),
            fell_back: false,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn faq_config() -> AnnotationConfig {
        AnnotationConfig::from_json(
            r#"{"annotation_type":"FAQ","primary_column":"question","secondary_column":"answer"}"#,
        )
        .unwrap()
    }

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn csv_catalog_maps_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "faq.csv",
            "question,answer\nHow do I check my balance?,Open the app\nLost card,Lock it\n\"Fees, charges\",See schedule\n",
        );
        let cat = ingest_catalog(&p, &faq_config()).unwrap();
        assert_eq!(cat.len(), 3);
        assert_eq!(cat.entries()[0].id, "0001");
        assert_eq!(cat.entries()[2].primary_text, "Fees, charges");
        assert_eq!(cat.get("0002").unwrap().secondary_text.as_deref(), Some("Lock it"));
    }

    #[test]
    fn csv_without_primary_column_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "faq.csv", "title,answer\nx,y\n");
        assert!(matches!(
            ingest_catalog(&p, &faq_config()),
            Err(CatalogError::MissingColumn(c)) if c == "question"
        ));
    }

    #[test]
    fn jsonl_duplicate_id_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "faq.jsonl",
            "{\"id\":\"42\",\"question\":\"a\"}\n{\"id\":\"42\",\"question\":\"b\"}\n",
        );
        assert!(matches!(
            ingest_catalog(&p, &faq_config()),
            Err(CatalogError::DuplicateId(id)) if id == "42"
        ));
    }

    #[test]
    fn rows_missing_primary_are_reported_by_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "faq.jsonl",
            "{\"id\":\"1\",\"question\":\"a\"}\n{\"id\":\"2\"}\n{\"id\":\"3\",\"question\":\"  \"}\n",
        );
        match ingest_catalog(&p, &faq_config()) {
            Err(CatalogError::MissingValues { column, rows }) => {
                assert_eq!(column, "question");
                assert_eq!(rows, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn digest_tracks_file_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.jsonl", "{\"question\":\"a\"}\n");
        let d1 = ingest_catalog(&p, &faq_config()).unwrap().source_digest().to_string();
        let d2 = ingest_catalog(&p, &faq_config()).unwrap().source_digest().to_string();
        assert_eq!(d1, d2);
        std::fs::write(&p, "{\"question\":\"a\"} \n").unwrap();
        let d3 = ingest_catalog(&p, &faq_config()).unwrap().source_digest().to_string();
        assert_ne!(d1, d3);
    }

    #[test]
    fn training_reports_every_dangling_reference() {
        let cat = Catalog::from_entries(vec![AnnotationEntry::new("a", "A", None)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "train.jsonl",
            "{\"utterance\":\"x\",\"gold_id\":\"a\"}\n{\"utterance\":\"y\",\"gold_id\":\"b\"}\n{\"utterance\":\"z\",\"gold_id\":\"c\"}\n",
        );
        match load_training(&p, &cat) {
            Err(CatalogError::DanglingReferences(refs)) => {
                assert_eq!(refs, vec![(2, "b".to_string()), (3, "c".to_string())]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn embedding_text_formats() {
        let c = faq_config();
        let e = AnnotationEntry::new("1", "How do I check my balance?", Some("Open the app…".into()));
        assert_eq!(
            embedding_text(&e, EmbeddingMode::FullContext, &c).text,
            "Question: How do I check my balance? Answer: Open the app…"
        );
        assert_eq!(
            embedding_text(&e, EmbeddingMode::PrimaryOnly, &c).text,
            "How do I check my balance?"
        );
        let bare = AnnotationEntry::new("2", "Lost card", None);
        let t = embedding_text(&bare, EmbeddingMode::FullContext, &c);
        assert_eq!(t.text, "Lost card");
        assert!(t.fell_back);
    }

    #[test]
    fn non_faq_labels_use_column_names() {
        let c = AnnotationConfig::from_json(
            r#"{"annotation_type":"Intent","primary_column":"intent_name","secondary_column":"description"}"#,
        )
        .unwrap();
        let e = AnnotationEntry::new("1", "card_arrival", Some("Card not yet received".into()));
        assert_eq!(
            embedding_text(&e, EmbeddingMode::FullContext, &c).text,
            "Intent_name: card_arrival Description: Card not yet received"
        );
    }
}
