//! Candidate retrieval: embedding nearest neighbours, BM25, and the
//! embedding cache.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::num::NonZeroUsize;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use lru::LruCache;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::config::AnnotationConfig;
use crate::knowledge_base::{embedding_text, Catalog, EmbeddingMode};
use crate::provider::{EmbeddingRequest, ModelProvider, ProviderError};
use crate::text::{sha256_hex, tokenize};

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("dimension mismatch: index has {expected}, query has {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid request: {0}")]
    Validation(String),
    #[error("vector prefix is degenerate (norm below 1e-12)")]
    DegenerateVector,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("index io: {0}")]
    Io(#[from] std::io::Error),
    #[error("index file: {0}")]
    Format(String),
}

pub const UNIT_TOLERANCE: f64 = 1e-6;

/// First `d` components of `v`, rescaled to unit length.
pub fn mrl_truncate(v: &[f64], d: usize) -> Result<Vec<f64>, RetrievalError> {
    if d == 0 || d > v.len() {
        return Err(RetrievalError::Validation(format!(
            "cannot truncate a {}-vector to {d} dims",
            v.len()
        )));
    }
    let prefix = &v[..d];
    let norm = prefix.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Err(RetrievalError::DegenerateVector);
    }
    Ok(prefix.iter().map(|x| x / norm).collect())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn is_unit(v: &[f64]) -> bool {
    (dot(v, v).sqrt() - 1.0).abs() < UNIT_TOLERANCE
}

/// Exact cosine index over unit rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingIndex {
    dims: usize,
    keys: Vec<String>,
    rows: Vec<Vec<f64>>,
    mode: EmbeddingMode,
}

/// Order by score descending, then id ascending.
fn rank_order(a: &(String, f64), b: &(String, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

impl EmbeddingIndex {
    pub fn new(
        mode: EmbeddingMode,
        dims: usize,
        keys: Vec<String>,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self, RetrievalError> {
        if keys.len() != rows.len() {
            return Err(RetrievalError::Validation("keys and rows differ in length".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for (k, r) in keys.iter().zip(&rows) {
            if !seen.insert(k) {
                return Err(RetrievalError::Validation(format!("duplicate key `{k}`")));
            }
            if r.len() != dims {
                return Err(RetrievalError::DimensionMismatch {
                    expected: dims,
                    actual: r.len(),
                });
            }
            if !r.iter().all(|x| x.is_finite()) || !is_unit(r) {
                return Err(RetrievalError::Validation(format!("row `{k}` is not a finite unit vector")));
            }
        }
        Ok(Self { dims, keys, rows, mode })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn mode(&self) -> EmbeddingMode {
        self.mode
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Top `k` rows by cosine similarity, ties by ascending id.
    pub fn knn(&self, query: &[f64], k: usize) -> Result<Vec<(String, f64)>, RetrievalError> {
        if query.len() != self.dims {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dims,
                actual: query.len(),
            });
        }
        let mut scored: Vec<(String, f64)> = self
            .keys
            .iter()
            .zip(&self.rows)
            .map(|(key, row)| (key.clone(), dot(row, query).clamp(-1.0, 1.0)))
            .collect();
        let k = k.min(scored.len());
        if k == 0 {
            return Ok(Vec::new());
        }
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, rank_order);
            scored.truncate(k);
        }
        scored.sort_by(rank_order);
        Ok(scored)
    }

    /// Same index at a smaller width, every row re-truncated and renormalized.
    pub fn truncated(&self, dims: usize) -> Result<Self, RetrievalError> {
        let rows = self
            .rows
            .iter()
            .map(|r| mrl_truncate(r, dims))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            dims,
            keys: self.keys.clone(),
            rows,
            mode: self.mode,
        })
    }

    /// Write as a JSONL sidecar: a header line followed by one row per entry.
    pub fn save(&self, path: impl AsRef<Path>, source_digest: &str) -> Result<(), RetrievalError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header = IndexHeader {
            version: INDEX_FORMAT_VERSION,
            source_digest: source_digest.to_string(),
            mode: self.mode,
            dims: self.dims,
            count: self.keys.len(),
        };
        serde_json::to_writer(&mut f, &header).map_err(|e| RetrievalError::Format(e.to_string()))?;
        f.write_all(b"\n")?;
        for (id, vector) in self.keys.iter().zip(&self.rows) {
            serde_json::to_writer(&mut f, &IndexRow { id: id.clone(), vector: vector.clone() })
                .map_err(|e| RetrievalError::Format(e.to_string()))?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
        Ok(())
    }

    /// Load a sidecar written by [`save`](Self::save). Returns `Ok(None)` when
    /// the file is missing or was built from a different catalog or width.
    pub fn load_if_current(
        path: impl AsRef<Path>,
        source_digest: &str,
        mode: EmbeddingMode,
        dims: usize,
    ) -> Result<Option<Self>, RetrievalError> {
        let file = match std::fs::File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let mut lines = std::io::BufReader::new(file).lines();
        let header: IndexHeader = match lines.next() {
            Some(line) => serde_json::from_str(&line?).map_err(|e| RetrievalError::Format(e.to_string()))?,
            None => return Ok(None),
        };
        if header.version != INDEX_FORMAT_VERSION
            || header.source_digest != source_digest
            || header.mode != mode
            || header.dims != dims
        {
            return Ok(None);
        }
        let mut keys = Vec::with_capacity(header.count);
        let mut rows = Vec::with_capacity(header.count);
        for line in lines {
            let row: IndexRow = serde_json::from_str(&line?).map_err(|e| RetrievalError::Format(e.to_string()))?;
            keys.push(row.id);
            rows.push(row.vector);
        }
        if keys.len() != header.count {
            return Err(RetrievalError::Format(format!(
                "header says {} rows, file has {}",
                header.count,
                keys.len()
            )));
        }
        Self::new(mode, dims, keys, rows).map(Some)
    }
}

const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct IndexHeader {
    version: u32,
    source_digest: String,
    mode: EmbeddingMode,
    dims: usize,
    count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexRow {
    id: String,
    vector: Vec<f64>,
}

const EMBED_BATCH: usize = 64;

/// Embed every catalog entry under `mode` at `dims` width.
pub async fn build_embedding_index(
    catalog: &Catalog,
    mode: EmbeddingMode,
    dims: usize,
    provider: &dyn ModelProvider,
    config: &AnnotationConfig,
) -> Result<EmbeddingIndex, RetrievalError> {
    if dims == 0 || dims > provider.native_dims() {
        return Err(RetrievalError::Validation(format!(
            "dims {dims} outside 1..={}",
            provider.native_dims()
        )));
    }
    let texts: Vec<String> = catalog
        .entries()
        .iter()
        .map(|e| embedding_text(e, mode, config).text)
        .collect();
    let mut rows = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(EMBED_BATCH) {
        let req = EmbeddingRequest {
            texts: chunk.to_vec(),
            target_dims: dims,
        };
        for v in provider.embed(&req).await? {
            rows.push(mrl_truncate(&v, dims)?);
        }
    }
    let keys = catalog.entries().iter().map(|e| e.id.clone()).collect();
    EmbeddingIndex::new(mode, dims, keys, rows)
}

/// Okapi BM25 over whitespace/punctuation tokens.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    ids: Vec<String>,
    doc_term_freqs: Vec<HashMap<String, u32>>,
    doc_lengths: Vec<usize>,
    avg_doc_length: f64,
    df: HashMap<String, u32>,
    k1: f64,
    b: f64,
}

impl Bm25Index {
    pub const DEFAULT_K1: f64 = 1.5;
    pub const DEFAULT_B: f64 = 0.75;

    pub fn new<I, S, T>(docs: I) -> Self
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        Self::with_params(docs, Self::DEFAULT_K1, Self::DEFAULT_B)
    }

    pub fn with_params<I, S, T>(docs: I, k1: f64, b: f64) -> Self
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        let mut ids = Vec::new();
        let mut doc_term_freqs = Vec::new();
        let mut doc_lengths = Vec::new();
        let mut df: HashMap<String, u32> = HashMap::new();
        for (id, text) in docs {
            let tokens = tokenize(text.as_ref());
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for t in tf.keys() {
                *df.entry(t.clone()).or_default() += 1;
            }
            ids.push(id.into());
            doc_lengths.push(tokens.len());
            doc_term_freqs.push(tf);
        }
        let avg_doc_length = if doc_lengths.is_empty() {
            0.0
        } else {
            doc_lengths.iter().sum::<usize>() as f64 / doc_lengths.len() as f64
        };
        Self {
            ids,
            doc_term_freqs,
            doc_lengths,
            avg_doc_length,
            df,
            k1,
            b,
        }
    }

    /// Index the primary text of every catalog entry.
    pub fn from_catalog(catalog: &Catalog) -> Self {
        Self::new(catalog.entries().iter().map(|e| (e.id.clone(), e.primary_text.clone())))
    }

    pub fn n_docs(&self) -> usize {
        self.ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.n_docs() as f64;
        let df = f64::from(self.df.get(term).copied().unwrap_or(0));
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Score of document `ordinal` for `query`. Each distinct query term
    /// counts once.
    pub fn score(&self, query: &str, ordinal: usize) -> f64 {
        let Some(tf_map) = self.doc_term_freqs.get(ordinal) else {
            return 0.0;
        };
        let mut terms = tokenize(query);
        terms.sort();
        terms.dedup();
        let len = self.doc_lengths[ordinal] as f64;
        let norm = if self.avg_doc_length > 0.0 {
            1.0 - self.b + self.b * len / self.avg_doc_length
        } else {
            1.0
        };
        terms
            .iter()
            .map(|t| {
                let tf = f64::from(tf_map.get(t).copied().unwrap_or(0));
                if tf == 0.0 {
                    return 0.0;
                }
                self.idf(t) * (tf * (self.k1 + 1.0)) / (tf + self.k1 * norm)
            })
            .sum()
    }

    /// Top `k` documents, score descending then id ascending. Zero-score
    /// documents are included only when fewer than `k` documents match.
    pub fn topk(&self, query: &str, k: usize) -> Vec<(String, f64)> {
        let mut scored: Vec<(String, f64)> = (0..self.n_docs())
            .map(|i| (self.ids[i].clone(), self.score(query, i)))
            .collect();
        scored.sort_by(rank_order);
        scored.truncate(k);
        scored
    }
}

/// LRU cache of embeddings keyed by SHA-256 of (mode, dims, text).
#[derive(Debug)]
pub struct EmbeddingCache {
    entries: Mutex<LruCache<String, Vec<f64>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

impl CacheStats {
    pub fn hit_rate(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            0.0
        } else {
            self.hits as f64 / total as f64
        }
    }
}

impl EmbeddingCache {
    pub fn new(capacity: usize) -> Self {
        let cap = NonZeroUsize::new(capacity.max(1)).expect("nonzero");
        Self {
            entries: Mutex::new(LruCache::new(cap)),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn key(text: &str, mode: &str, dims: usize) -> String {
        sha256_hex(format!("{mode}\x1f{dims}\x1f{text}"))
    }

    pub fn len(&self) -> usize {
        self.entries.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::SeqCst),
            misses: self.misses.load(Ordering::SeqCst),
        }
    }

    /// Embedding of `text`, calling the provider only on a miss.
    pub async fn get_or_embed(
        &self,
        text: &str,
        mode: &str,
        dims: usize,
        provider: &dyn ModelProvider,
    ) -> Result<Vec<f64>, RetrievalError> {
        let key = Self::key(text, mode, dims);
        if let Some(v) = self.entries.lock().get(&key) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(v.clone());
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let req = EmbeddingRequest {
            texts: vec![text.to_string()],
            target_dims: dims,
        };
        let v = provider
            .embed(&req)
            .await?
            .into_iter()
            .next()
            .ok_or_else(|| RetrievalError::Validation("provider returned no vector".into()))?;
        let v = mrl_truncate(&v, dims)?;
        self.entries.lock().put(key, v.clone());
        Ok(v)
    }
}
