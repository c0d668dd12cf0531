//! Three-stage recovery of a JSON object from model output.
//!
//! 1. parse the whole (trimmed) text;
//! 2. parse the span from the first `{` to the last `}` (prose around JSON);
//! 3. strip markdown fences and retry 1 then 2.
//!
//! Text carrying a markdown fence skips stage 2 so fenced output is always
//! attributed to the fence-cleaning path. The first stage that yields JSON
//! wins; schema validation happens after, and a schema failure is final.

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum ParseStage {
    Direct = 1,
    Braces = 2,
    Cleaned = 3,
}

impl From<ParseStage> for u8 {
    fn from(s: ParseStage) -> u8 {
        s as u8
    }
}

impl TryFrom<u8> for ParseStage {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Self::Direct),
            2 => Ok(Self::Braces),
            3 => Ok(Self::Cleaned),
            other => Err(format!("no parse stage {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("no JSON object recoverable from output ({preview:?})")]
    UnparseableOutput { preview: String },
    #[error("schema violation at `{field}`: {reason}")]
    SchemaViolation { field: String, reason: String },
}

impl ParseError {
    pub fn violation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::SchemaViolation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub value: T,
    pub stage: ParseStage,
}

const FENCE: &str = "```";

fn direct(text: &str) -> Option<Value> {
    serde_json::from_str(text.trim()).ok()
}

fn braces(text: &str) -> Option<Value> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end <= start {
        return None;
    }
    serde_json::from_str(&text[start..=end]).ok()
}

/// Remove fence lines, inline fences and a dangling language tag.
pub fn strip_markdown(text: &str) -> String {
    let mut kept = Vec::new();
    for line in text.lines() {
        let t = line.trim_start();
        let Some(after) = t.strip_prefix(FENCE) else {
            kept.push(line.replace(FENCE, ""));
            continue;
        };
        // Opening fence: drop an info string such as `json` directly after it.
        let tag_len = after.find(|c: char| !c.is_ascii_alphanumeric()).unwrap_or(after.len());
        let rest = after[tag_len..].replace(FENCE, "");
        if !rest.trim().is_empty() {
            kept.push(rest);
        }
    }
    kept.join("\n").trim().to_string()
}

/// Recover a JSON value and the stage that produced it.
pub fn recover_json(raw: &str) -> Result<Parsed<Value>, ParseError> {
    if let Some(v) = direct(raw) {
        return Ok(Parsed { value: v, stage: ParseStage::Direct });
    }
    if !raw.contains(FENCE) {
        if let Some(v) = braces(raw) {
            return Ok(Parsed { value: v, stage: ParseStage::Braces });
        }
    }
    let cleaned = strip_markdown(raw);
    if let Some(v) = direct(&cleaned).or_else(|| braces(&cleaned)) {
        return Ok(Parsed { value: v, stage: ParseStage::Cleaned });
    }
    Err(ParseError::UnparseableOutput {
        preview: raw.chars().take(80).collect(),
    })
}

/// Recover JSON, then validate it into `T`.
pub fn parse_with<T>(
    raw: &str,
    validate: impl FnOnce(&Value) -> Result<T, ParseError>,
) -> Result<Parsed<T>, ParseError> {
    let Parsed { value, stage } = recover_json(raw)?;
    Ok(Parsed {
        value: validate(&value)?,
        stage,
    })
}

// Field accessors used by the schema validators.

pub(crate) fn obj<'a>(v: &'a Value, field: &str) -> Result<&'a serde_json::Map<String, Value>, ParseError> {
    v.as_object()
        .ok_or_else(|| ParseError::violation(field, "expected a JSON object"))
}

pub(crate) fn req_str(map: &serde_json::Map<String, Value>, field: &str) -> Result<String, ParseError> {
    match map.get(field) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(ParseError::violation(field, "expected a string")),
        None => Err(ParseError::violation(field, "missing")),
    }
}

pub(crate) fn opt_str(map: &serde_json::Map<String, Value>, field: &str) -> Result<String, ParseError> {
    match map.get(field) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Null) | None => Ok(String::new()),
        Some(_) => Err(ParseError::violation(field, "expected a string")),
    }
}

/// Integer score in 0..=100. Integral floats are accepted.
pub(crate) fn score(map: &serde_json::Map<String, Value>, field: &str) -> Result<u8, ParseError> {
    let v = map.get(field).ok_or_else(|| ParseError::violation(field, "missing"))?;
    let n = v
        .as_f64()
        .ok_or_else(|| ParseError::violation(field, "expected a number"))?;
    if n.fract() != 0.0 {
        return Err(ParseError::violation(field, format!("expected an integer, got {n}")));
    }
    if !(0.0..=100.0).contains(&n) {
        return Err(ParseError::violation(field, format!("{n} outside 0-100")));
    }
    Ok(n as u8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_one_for_clean_json() {
        let p = recover_json("  {\"a\": 1} ").unwrap();
        assert_eq!(p.stage, ParseStage::Direct);
    }

    #[test]
    fn stage_two_for_prose() {
        let p = recover_json("Here are results: {\"a\": {\"b\": 2}} Hope this helps!").unwrap();
        assert_eq!(p.stage, ParseStage::Braces);
        assert_eq!(p.value["a"]["b"], 2);
    }

    #[test]
    fn stage_three_for_fences() {
        let p = recover_json("```json\n{\"a\": 1}\n```").unwrap();
        assert_eq!(p.stage, ParseStage::Cleaned);
        let p = recover_json("Sure!\n```\n{\"a\": 1}\n```\nDone.").unwrap();
        assert_eq!(p.stage, ParseStage::Cleaned);
    }

    #[test]
    fn truncated_is_unparseable() {
        assert!(matches!(
            recover_json("{\"a\": [1, 2"),
            Err(ParseError::UnparseableOutput { .. })
        ));
        assert!(recover_json("").is_err());
        assert!(recover_json("} backwards {").is_err());
    }

    #[test]
    fn strip_markdown_handles_inline_language_tag() {
        assert_eq!(strip_markdown("```json {\"a\":1}```"), "{\"a\":1}");
    }
}
