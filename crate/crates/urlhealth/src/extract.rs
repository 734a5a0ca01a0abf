//! URL extraction, normalization, and deduplication.

use std::collections::{BTreeMap, HashSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Trailing characters stripped from a matched URL, repeatedly, until none remain.
pub const DEFAULT_STRIP_CHARS: &[char] = &[
    '.', ',', ';', ':', '!', '?', ')', ']', '}', '»', '"', '\'', '」', '』', '】', '〉', '》',
    '）',
];

static URL_PATTERN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"https?://[^\s<>"]+"#).expect("URL pattern compiles"));

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("not an http(s) URL after normalization: {raw:?}")]
    NotHttp { raw: String },
}

/// One URL occurrence, with enough provenance to group and audit it later.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UrlRecord {
    pub raw: String,
    pub normalized: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub group_labels: BTreeMap<String, String>,
    /// Byte offsets of `raw` within the source text, when extracted from text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub char_span: Option<(usize, usize)>,
}

/// Input row for citation files: one cited URL plus grouping labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationRecord {
    pub url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, String>,
}

/// A citation that could not be turned into a probeable URL.
#[derive(Debug, Clone, Serialize)]
pub struct CitationReject {
    pub index: usize,
    pub url: String,
    pub reason: String,
}

/// Result of running a citation file through normalization.
#[derive(Debug, Default)]
pub struct CitationExtraction {
    pub records: Vec<UrlRecord>,
    pub rejects: Vec<CitationReject>,
}

/// Which fields identify a duplicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DedupKey {
    /// Normalized URL plus the full group label map (the default).
    NormalizedAndLabels,
    /// Normalized URL alone, collapsing across groups.
    NormalizedOnly,
}

/// Trim whitespace, then strip trailing punctuation until a fixpoint.
///
/// Errors when the result does not start with an http(s) scheme.
pub fn normalize(raw: &str) -> Result<String, ExtractError> {
    normalize_with(raw, DEFAULT_STRIP_CHARS)
}

/// [`normalize`] with a caller-chosen strip set.
pub fn normalize_with(raw: &str, strip: &[char]) -> Result<String, ExtractError> {
    let trimmed = raw.trim();
    let stripped = trimmed.trim_end_matches(|c| strip.contains(&c));
    if stripped.starts_with("http://") || stripped.starts_with("https://") {
        Ok(stripped.to_string())
    } else {
        Err(ExtractError::NotHttp { raw: raw.to_string() })
    }
}

/// Pull every http(s) URL out of free text.
///
/// A match runs from the scheme through the longest run of characters that
/// are not whitespace, `<`, `>`, or `"`; normalization then strips trailing
/// punctuation. `char_span` holds the byte range of the raw match, so
/// `&text[span.0..span.1] == raw` always holds.
pub fn extract_from_text(
    text: &str,
    source_id: Option<&str>,
    labels: &BTreeMap<String, String>,
) -> Vec<UrlRecord> {
    URL_PATTERN
        .find_iter(text)
        .map(|m| {
            let raw = m.as_str().to_string();
            let normalized = normalize(&raw).expect("matches start with a scheme");
            UrlRecord {
                raw,
                normalized,
                source_id: source_id.map(str::to_string),
                group_labels: labels.clone(),
                char_span: Some((m.start(), m.end())),
            }
        })
        .collect()
}

/// Normalize a batch of citation records.
///
/// Bad rows land in `rejects` with their input index; one malformed
/// citation never aborts the batch.
pub fn extract_from_citations(citations: &[CitationRecord]) -> CitationExtraction {
    let mut out = CitationExtraction::default();
    for (index, citation) in citations.iter().enumerate() {
        match normalize(&citation.url) {
            Ok(normalized) => out.records.push(UrlRecord {
                raw: citation.url.clone(),
                normalized,
                source_id: citation.source_id.clone(),
                group_labels: citation.labels.clone(),
                char_span: None,
            }),
            Err(err) => out.rejects.push(CitationReject {
                index,
                url: citation.url.clone(),
                reason: err.to_string(),
            }),
        }
    }
    out
}

/// Drop duplicate records, keeping the first occurrence in input order.
pub fn dedup(records: Vec<UrlRecord>, key: DedupKey) -> Vec<UrlRecord> {
    let mut seen: HashSet<(String, Option<BTreeMap<String, String>>)> = HashSet::new();
    records
        .into_iter()
        .filter(|r| {
            let k = match key {
                DedupKey::NormalizedAndLabels => {
                    (r.normalized.clone(), Some(r.group_labels.clone()))
                }
                DedupKey::NormalizedOnly => (r.normalized.clone(), None),
            };
            seen.insert(k)
        })
        .collect()
}
