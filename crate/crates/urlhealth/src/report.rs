//! Render aggregated results as text tables, CSV, or JSON.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::classify::{Verdict, VerdictLabel, VerdictMode};
use crate::extract::UrlRecord;
use crate::stats::{GroupStats, ScenarioRates, StratifiedSample, DERIVED_NON_RESOLVING};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("nothing to report")]
    Empty,
    #[error("no records carry a source id, so per-question figures are undefined")]
    NoQuestions,
    #[error("could not serialize report: {0}")]
    Serialize(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

/// Row ordering for group tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupSort {
    /// Best-behaved first: hallucinated rate ascending, ties by group key.
    HallucinatedAsc,
    /// Worst first: non-resolving share descending (1 - live share under
    /// the URLHEALTH mode), ties by group key.
    NonResolvingDesc,
    /// By group key alone.
    Key,
}

fn group_name(group: &BTreeMap<String, String>) -> String {
    if group.is_empty() {
        return "(all)".to_string();
    }
    group
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<String>>()
        .join(",")
}

fn hallucinated_key(stats: &GroupStats) -> f64 {
    let label = match stats.mode {
        VerdictMode::Pipeline => "HALLUCINATED",
        VerdictMode::Urlhealth => "LIKELY_HALLUCINATED",
    };
    stats.rate_by_label.get(label).copied().unwrap_or(0.0)
}

fn non_resolving_key(stats: &GroupStats) -> f64 {
    match stats.mode {
        VerdictMode::Pipeline => stats
            .rate_by_label
            .get(DERIVED_NON_RESOLVING)
            .copied()
            .unwrap_or(0.0),
        VerdictMode::Urlhealth => {
            1.0 - stats.rate_by_label.get("LIVE").copied().unwrap_or(0.0)
        }
    }
}

fn sort_groups(stats: &[GroupStats], sort: GroupSort) -> Vec<&GroupStats> {
    let mut rows: Vec<&GroupStats> = stats.iter().collect();
    match sort {
        GroupSort::HallucinatedAsc => rows.sort_by(|a, b| {
            hallucinated_key(a)
                .total_cmp(&hallucinated_key(b))
                .then_with(|| a.group.cmp(&b.group))
        }),
        GroupSort::NonResolvingDesc => rows.sort_by(|a, b| {
            non_resolving_key(b)
                .total_cmp(&non_resolving_key(a))
                .then_with(|| a.group.cmp(&b.group))
        }),
        GroupSort::Key => rows.sort_by(|a, b| a.group.cmp(&b.group)),
    }
    rows
}

fn label_columns(stats: &GroupStats) -> Vec<String> {
    let mut columns: Vec<String> = stats.n_by_label.keys().cloned().collect();
    columns.extend(stats.n_derived.keys().cloned());
    columns
}

fn percent_cell(stats: &GroupStats, label: &str) -> String {
    match stats.rate_by_label.get(label) {
        None => "-".to_string(),
        Some(rate) => match stats.ci_by_label.get(label) {
            Some((lo, hi)) => {
                format!("{:.1}% [{:.1}, {:.1}]", rate * 100.0, lo * 100.0, hi * 100.0)
            }
            None => format!("{:.1}%", rate * 100.0),
        },
    }
}

fn text_table(header: Vec<String>, rows: Vec<Vec<String>>) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    let render_row = |cells: &[String], out: &mut String| {
        let line = cells
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{:<width$}", c, width = widths[i]))
            .collect::<Vec<String>>()
            .join("  ");
        out.push_str(line.trim_end());
        out.push('\n');
    };
    render_row(&header, &mut out);
    render_row(
        &widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<String>>(),
        &mut out,
    );
    for row in &rows {
        render_row(row, &mut out);
    }
    out
}

fn to_json<T: Serialize>(value: &T) -> Result<String, ReportError> {
    serde_json::to_string_pretty(value).map_err(|e| ReportError::Serialize(e.to_string()))
}

fn to_csv(header: &[&str], rows: Vec<Vec<String>>) -> Result<String, ReportError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(header)
        .map_err(|e| ReportError::Serialize(e.to_string()))?;
    for row in rows {
        writer
            .write_record(&row)
            .map_err(|e| ReportError::Serialize(e.to_string()))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| ReportError::Serialize(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| ReportError::Serialize(e.to_string()))
}

/// One row per group; label shares as percentages, intervals in brackets.
pub fn render_groups(
    stats: &[GroupStats],
    sort: GroupSort,
    format: ReportFormat,
) -> Result<String, ReportError> {
    if stats.is_empty() {
        return Err(ReportError::Empty);
    }
    let rows = sort_groups(stats, sort);
    match format {
        ReportFormat::Json => {
            let ordered: Vec<&GroupStats> = rows;
            to_json(&ordered)
        }
        ReportFormat::Text => {
            let columns = label_columns(rows[0]);
            let mut header = vec!["group".to_string(), "n".to_string(), "pending".to_string()];
            header.extend(columns.iter().cloned());
            let body = rows
                .iter()
                .map(|s| {
                    let mut row = vec![
                        group_name(&s.group),
                        s.n_total.to_string(),
                        s.n_pending.to_string(),
                    ];
                    row.extend(columns.iter().map(|c| percent_cell(s, c)));
                    row
                })
                .collect();
            Ok(text_table(header, body))
        }
        ReportFormat::Csv => {
            let header = [
                "group", "mode", "label", "n_total", "n_pending", "count", "rate", "ci_lo",
                "ci_hi",
            ];
            let mut body = Vec::new();
            for s in rows {
                let mode = serde_json::to_value(s.mode)
                    .ok()
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_default();
                for label in label_columns(s) {
                    let count = s
                        .n_by_label
                        .get(&label)
                        .or_else(|| s.n_derived.get(&label))
                        .copied()
                        .unwrap_or(0);
                    let rate = s
                        .rate_by_label
                        .get(&label)
                        .map(|r| r.to_string())
                        .unwrap_or_default();
                    let (lo, hi) = s
                        .ci_by_label
                        .get(&label)
                        .map(|(lo, hi)| (lo.to_string(), hi.to_string()))
                        .unwrap_or_default();
                    body.push(vec![
                        group_name(&s.group),
                        mode.clone(),
                        label,
                        s.n_total.to_string(),
                        s.n_pending.to_string(),
                        count.to_string(),
                        rate,
                        lo,
                        hi,
                    ]);
                }
            }
            to_csv(&header, body)
        }
    }
}

/// Scenario table; rates printed at two decimals so small shifts stay visible.
pub fn render_sensitivity(
    rates: &[ScenarioRates],
    format: ReportFormat,
) -> Result<String, ReportError> {
    if rates.is_empty() {
        return Err(ReportError::Empty);
    }
    match format {
        ReportFormat::Json => to_json(&rates),
        ReportFormat::Text => {
            let header = vec![
                "scenario".to_string(),
                "non_resolving".to_string(),
                "denominator".to_string(),
                "excluded".to_string(),
                "pending".to_string(),
                "rate".to_string(),
            ];
            let body = rates
                .iter()
                .map(|r| {
                    vec![
                        r.scenario.name(),
                        r.non_resolving.to_string(),
                        r.denominator.to_string(),
                        r.excluded.to_string(),
                        r.pending.to_string(),
                        r.rate
                            .map(|v| format!("{:.2}%", v * 100.0))
                            .unwrap_or_else(|| "-".to_string()),
                    ]
                })
                .collect();
            Ok(text_table(header, body))
        }
        ReportFormat::Csv => {
            let header = [
                "scenario",
                "non_resolving",
                "denominator",
                "excluded",
                "pending",
                "rate",
            ];
            let body = rates
                .iter()
                .map(|r| {
                    vec![
                        r.scenario.name(),
                        r.non_resolving.to_string(),
                        r.denominator.to_string(),
                        r.excluded.to_string(),
                        r.pending.to_string(),
                        r.rate.map(|v| v.to_string()).unwrap_or_default(),
                    ]
                })
                .collect();
            to_csv(&header, body)
        }
    }
}

/// Allocation table for a drawn audit sample.
pub fn render_audit(
    sample: &StratifiedSample,
    format: ReportFormat,
) -> Result<String, ReportError> {
    if sample.allocations.is_empty() {
        return Err(ReportError::Empty);
    }
    match format {
        ReportFormat::Json => to_json(sample),
        ReportFormat::Text => {
            let header = vec![
                "group".to_string(),
                "stratum".to_string(),
                "population".to_string(),
                "allocated".to_string(),
            ];
            let body = sample
                .allocations
                .iter()
                .map(|a| {
                    vec![
                        group_name(&a.group),
                        a.stratum.clone(),
                        a.population.to_string(),
                        a.allocated.to_string(),
                    ]
                })
                .collect();
            let mut out = text_table(header, body);
            let _ = writeln!(out, "\nsampled {} items", sample.indices.len());
            Ok(out)
        }
        ReportFormat::Csv => {
            let header = ["group", "stratum", "population", "allocated"];
            let body = sample
                .allocations
                .iter()
                .map(|a| {
                    vec![
                        group_name(&a.group),
                        a.stratum.clone(),
                        a.population.to_string(),
                        a.allocated.to_string(),
                    ]
                })
                .collect();
            to_csv(&header, body)
        }
    }
}

/// Corpus-level overview keyed to questions rather than URLs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UrlhealthSummary {
    pub n_urls: u64,
    pub n_questions: u64,
    pub n_live: u64,
    pub live_rate: f64,
    pub urls_per_question: f64,
    pub live_per_question: f64,
}

/// Per-question averages over URLHEALTH verdicts. Questions are distinct
/// source ids; records without one are counted as URLs but cannot anchor
/// a question, and a corpus with no source ids at all is an error.
pub fn urlhealth_summary(items: &[(UrlRecord, Verdict)]) -> Result<UrlhealthSummary, ReportError> {
    if items.is_empty() {
        return Err(ReportError::Empty);
    }
    let questions: std::collections::BTreeSet<&str> = items
        .iter()
        .filter_map(|(r, _)| r.source_id.as_deref())
        .collect();
    if questions.is_empty() {
        return Err(ReportError::NoQuestions);
    }
    let n_urls = items.len() as u64;
    let n_questions = questions.len() as u64;
    let n_live = items
        .iter()
        .filter(|(_, v)| {
            v.label
                == Some(VerdictLabel::Urlhealth(
                    crate::classify::UrlhealthLabel::Live,
                ))
        })
        .count() as u64;
    Ok(UrlhealthSummary {
        n_urls,
        n_questions,
        n_live,
        live_rate: n_live as f64 / n_urls as f64,
        urls_per_question: n_urls as f64 / n_questions as f64,
        live_per_question: n_live as f64 / n_questions as f64,
    })
}

pub fn render_summary(
    summary: &UrlhealthSummary,
    format: ReportFormat,
) -> Result<String, ReportError> {
    match format {
        ReportFormat::Json => to_json(summary),
        ReportFormat::Text => Ok(format!(
            "urls: {}\nquestions: {}\nlive: {} ({:.1}%)\nurls/question: {:.1}\nlive/question: {:.1}\n",
            summary.n_urls,
            summary.n_questions,
            summary.n_live,
            summary.live_rate * 100.0,
            summary.urls_per_question,
            summary.live_per_question,
        )),
        ReportFormat::Csv => to_csv(
            &[
                "n_urls",
                "n_questions",
                "n_live",
                "live_rate",
                "urls_per_question",
                "live_per_question",
            ],
            vec![vec![
                summary.n_urls.to_string(),
                summary.n_questions.to_string(),
                summary.n_live.to_string(),
                summary.live_rate.to_string(),
                summary.urls_per_question.to_string(),
                summary.live_per_question.to_string(),
            ]],
        ),
    }
}
