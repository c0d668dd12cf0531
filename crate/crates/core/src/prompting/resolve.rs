use serde::{Deserialize, Serialize};

use super::StructuredVerdict;
use crate::knowledge_base::Catalog;
use crate::text::{jaccard, normalize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    Exact,
    Fuzzy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedCandidate {
    pub id: String,
    pub score: u8,
    pub reasoning: String,
    pub match_kind: MatchKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    /// In verdict order, first occurrence of each id kept.
    pub resolved: Vec<ResolvedCandidate>,
    /// Titles that matched nothing in the catalog.
    pub unmatched: Vec<String>,
}

/// Map a model-produced title to a catalog id: exact normalized primary text
/// first, then the best token-set Jaccard at or above `threshold`.
pub fn resolve_title(title: &str, catalog: &Catalog, threshold: f64) -> Option<(String, MatchKind)> {
    let wanted = normalize(title);
    if let Some(e) = catalog.entries().iter().find(|e| normalize(&e.primary_text) == wanted) {
        return Some((e.id.clone(), MatchKind::Exact));
    }
    let mut best: Option<(f64, &str)> = None;
    for e in catalog.entries() {
        let sim = jaccard(title, &e.primary_text);
        if sim >= threshold && best.is_none_or(|(b, _)| sim > b) {
            best = Some((sim, &e.id));
        }
    }
    best.map(|(_, id)| (id.to_string(), MatchKind::Fuzzy))
}

pub fn resolve_candidates(verdict: &StructuredVerdict, catalog: &Catalog, threshold: f64) -> Resolution {
    let mut out = Resolution::default();
    for item in &verdict.relevant_annotations {
        match resolve_title(&item.annotation, catalog, threshold) {
            Some((id, match_kind)) => {
                if out.resolved.iter().all(|r| r.id != id) {
                    out.resolved.push(ResolvedCandidate {
                        id,
                        score: item.relevance_score,
                        reasoning: item.reasoning.clone(),
                        match_kind,
                    });
                }
            }
            None => out.unmatched.push(item.annotation.clone()),
        }
    }
    out
}
