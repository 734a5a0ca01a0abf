//! Verdict assignment under two regimes.
//!
//! URLHEALTH is the conservative desk-check taxonomy: LIVE only on a clean
//! 200, the Wayback Machine consulted only on 404, everything else UNKNOWN.
//! PIPELINE is the bulk-evaluation taxonomy: every decided URL is either
//! alive, excluded, stale, or hallucinated, with special-case hosts forced
//! alive and 403s excluded by policy.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::archive::{ArchiveError, ArchiveResult};
use crate::probe::{ProbeErrorKind, ProbeResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerdictMode {
    Urlhealth,
    Pipeline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum UrlhealthLabel {
    Live,
    Dead,
    LikelyHallucinated,
    Unknown,
}

impl UrlhealthLabel {
    pub const ALL: [UrlhealthLabel; 4] = [
        UrlhealthLabel::Live,
        UrlhealthLabel::Dead,
        UrlhealthLabel::LikelyHallucinated,
        UrlhealthLabel::Unknown,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PipelineLabel {
    Alive,
    Stale,
    Hallucinated,
    #[serde(rename = "EXCLUDED_403")]
    Excluded403,
    ForcedAlive,
}

impl PipelineLabel {
    pub const ALL: [PipelineLabel; 5] = [
        PipelineLabel::Alive,
        PipelineLabel::Stale,
        PipelineLabel::Hallucinated,
        PipelineLabel::Excluded403,
        PipelineLabel::ForcedAlive,
    ];
}

/// Label under either mode; serializes as the bare label string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VerdictLabel {
    Urlhealth(UrlhealthLabel),
    Pipeline(PipelineLabel),
}

impl VerdictLabel {
    pub fn as_urlhealth(&self) -> Option<UrlhealthLabel> {
        match self {
            VerdictLabel::Urlhealth(l) => Some(*l),
            VerdictLabel::Pipeline(_) => None,
        }
    }

    pub fn as_pipeline(&self) -> Option<PipelineLabel> {
        match self {
            VerdictLabel::Pipeline(l) => Some(*l),
            VerdictLabel::Urlhealth(_) => None,
        }
    }

    /// Canonical string form, e.g. `LIKELY_HALLUCINATED`.
    pub fn name(&self) -> String {
        match serde_json::to_value(self) {
            Ok(serde_json::Value::String(s)) => s,
            _ => unreachable!("labels serialize as strings"),
        }
    }
}

/// The observable inputs a verdict was computed from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerdictBasis {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_kind: Option<ProbeErrorKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_exists: Option<bool>,
    /// Rule id when a policy override decided the label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub special_case: Option<String>,
    pub archive_consulted: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub archive_unavailable: bool,
}

/// One classification outcome for one URL under one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub url: String,
    pub mode: VerdictMode,
    /// Absent only while an archive outage defers a pipeline verdict.
    pub label: Option<VerdictLabel>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub pending: bool,
    pub basis: VerdictBasis,
    pub checked_at: DateTime<Utc>,
}

impl Verdict {
    pub fn urlhealth_label(&self) -> Option<UrlhealthLabel> {
        self.label.as_ref().and_then(VerdictLabel::as_urlhealth)
    }

    pub fn pipeline_label(&self) -> Option<PipelineLabel> {
        self.label.as_ref().and_then(VerdictLabel::as_pipeline)
    }
}

/// Policy knobs that only apply in PIPELINE mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpecialCasePolicy {
    /// Host suffixes classified alive without interpreting the probe
    /// (anti-bot walls make probing these hosts meaningless).
    pub classify_as_alive: Vec<String>,
    /// Exclude 403 responses from the resolving/non-resolving split.
    pub exclude_403: bool,
}

impl Default for SpecialCasePolicy {
    fn default() -> Self {
        SpecialCasePolicy {
            classify_as_alive: vec!["reddit.com".to_string()],
            exclude_403: true,
        }
    }
}

impl SpecialCasePolicy {
    /// Which classify-as-alive entry matches this URL's host, if any.
    pub fn forced_alive_rule(&self, url: &str) -> Option<String> {
        let host = url::Url::parse(url)
            .ok()
            .and_then(|u| u.host_str().map(str::to_lowercase))?;
        self.classify_as_alive.iter().find_map(|entry| {
            let entry = entry.to_lowercase();
            if host == entry || host.ends_with(&format!(".{entry}")) {
                Some(format!("classify_as_alive:{entry}"))
            } else {
                None
            }
        })
    }
}

/// Outcome of cross-checking both modes on the same probe.
#[derive(Debug, Clone, Serialize)]
pub struct ModeConsistency {
    pub consistent: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
}

fn basis_from_probe(probe: &ProbeResult) -> VerdictBasis {
    VerdictBasis {
        status: probe.status,
        error_kind: probe.error_kind,
        ..VerdictBasis::default()
    }
}

/// Conservative verdict: LIVE on 200, archive-split on 404, else UNKNOWN.
///
/// `lookup` is only invoked for a 404; an archive failure degrades the
/// verdict to UNKNOWN rather than guessing.
pub fn classify_urlhealth<F>(probe: &ProbeResult, mut lookup: F) -> Verdict
where
    F: FnMut(&str) -> Result<ArchiveResult, ArchiveError>,
{
    let mut basis = basis_from_probe(probe);
    let label = match probe.status {
        Some(200) => UrlhealthLabel::Live,
        Some(404) => {
            basis.archive_consulted = true;
            match lookup(&probe.url) {
                Ok(archive) => {
                    basis.snapshot_exists = Some(archive.snapshot_exists);
                    if archive.snapshot_exists {
                        UrlhealthLabel::Dead
                    } else {
                        UrlhealthLabel::LikelyHallucinated
                    }
                }
                Err(_) => {
                    basis.archive_unavailable = true;
                    UrlhealthLabel::Unknown
                }
            }
        }
        _ => UrlhealthLabel::Unknown,
    };
    Verdict {
        url: probe.url.clone(),
        mode: VerdictMode::Urlhealth,
        label: Some(VerdictLabel::Urlhealth(label)),
        pending: false,
        basis,
        checked_at: Utc::now(),
    }
}

/// Bulk verdict: special cases first, 2xx alive, 403 excluded by policy,
/// all other failures archive-split into stale versus hallucinated.
///
/// An archive failure defers the verdict (label absent, `pending` set).
pub fn classify_pipeline<F>(probe: &ProbeResult, mut lookup: F, policy: &SpecialCasePolicy) -> Verdict
where
    F: FnMut(&str) -> Result<ArchiveResult, ArchiveError>,
{
    let mut basis = basis_from_probe(probe);
    let checked_at = Utc::now();
    let done = |label: PipelineLabel, pending: bool, basis: VerdictBasis| Verdict {
        url: probe.url.clone(),
        mode: VerdictMode::Pipeline,
        label: if pending {
            None
        } else {
            Some(VerdictLabel::Pipeline(label))
        },
        pending,
        basis,
        checked_at,
    };

    if let Some(rule) = policy.forced_alive_rule(&probe.url) {
        basis.special_case = Some(rule);
        return done(PipelineLabel::ForcedAlive, false, basis);
    }
    if let Some(status) = probe.status {
        if (200..300).contains(&status) {
            return done(PipelineLabel::Alive, false, basis);
        }
        if status == 403 && policy.exclude_403 {
            basis.special_case = Some("exclude_403".to_string());
            return done(PipelineLabel::Excluded403, false, basis);
        }
    }
    // Non-resolving: an error status, a response that delivered no content
    // (1xx/3xx final), or a connection-level failure.
    basis.archive_consulted = true;
    match lookup(&probe.url) {
        Ok(archive) => {
            basis.snapshot_exists = Some(archive.snapshot_exists);
            if archive.snapshot_exists {
                done(PipelineLabel::Stale, false, basis)
            } else {
                done(PipelineLabel::Hallucinated, false, basis)
            }
        }
        Err(_) => {
            basis.archive_unavailable = true;
            done(PipelineLabel::Stale, true, basis)
        }
    }
}

/// Check that two verdicts for the same probe do not contradict each other.
///
/// UNKNOWN is compatible with anything; special-cased pipeline verdicts are
/// exempt. Otherwise LIVE must pair with ALIVE, DEAD with STALE, and
/// LIKELY_HALLUCINATED with HALLUCINATED.
pub fn reconcile_modes(urlhealth: &Verdict, pipeline: &Verdict) -> ModeConsistency {
    let fail = |explanation: String| ModeConsistency {
        consistent: false,
        explanation: Some(explanation),
    };
    let ok = ModeConsistency {
        consistent: true,
        explanation: None,
    };

    if urlhealth.url != pipeline.url {
        return fail(format!(
            "verdicts cover different URLs: {} vs {}",
            urlhealth.url, pipeline.url
        ));
    }
    if urlhealth.mode != VerdictMode::Urlhealth || pipeline.mode != VerdictMode::Pipeline {
        return fail("verdict modes are swapped or duplicated".to_string());
    }
    if pipeline.pending || pipeline.basis.special_case.is_some() {
        return ok;
    }
    let (Some(u), Some(p)) = (urlhealth.urlhealth_label(), pipeline.pipeline_label()) else {
        return fail("mode/label mismatch inside a verdict".to_string());
    };
    let expectation = match u {
        UrlhealthLabel::Unknown => None,
        UrlhealthLabel::Live => Some(PipelineLabel::Alive),
        UrlhealthLabel::Dead => Some(PipelineLabel::Stale),
        UrlhealthLabel::LikelyHallucinated => Some(PipelineLabel::Hallucinated),
    };
    match expectation {
        Some(expected) if p != expected => fail(format!(
            "{u:?} should imply {expected:?} absent special cases, got {p:?}"
        )),
        _ => ok,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::ProbeMethod;
    use std::time::Duration;

    fn probe(url: &str, status: Option<u16>, error: Option<ProbeErrorKind>) -> ProbeResult {
        ProbeResult {
            url: url.to_string(),
            status,
            error_kind: error,
            method_used: ProbeMethod::Head,
            fallback_applied: false,
            final_url: url.to_string(),
            elapsed: Duration::from_millis(5),
            checked_at: Utc::now(),
            attempts: 1,
        }
    }

    fn archive_with(snapshot: bool) -> impl FnMut(&str) -> Result<ArchiveResult, ArchiveError> {
        move |url: &str| {
            Ok(ArchiveResult {
                url: url.to_string(),
                snapshot_exists: snapshot,
                closest_timestamp: snapshot.then(|| "20240101000000".to_string()),
                snapshot_url: snapshot.then(|| format!("http://web.archive.org/web/2024/{url}")),
                queried_at: Utc::now(),
            })
        }
    }

    fn archive_down(url: &str) -> Result<ArchiveResult, ArchiveError> {
        Err(ArchiveError::Unavailable {
            url: url.to_string(),
            reason: "down".into(),
        })
    }

    fn no_archive(url: &str) -> Result<ArchiveResult, ArchiveError> {
        panic!("archive consulted for {url}")
    }

    #[test]
    fn urlhealth_live_only_on_200() {
        let v = classify_urlhealth(&probe("https://e.com/", Some(200), None), no_archive);
        assert_eq!(v.urlhealth_label(), Some(UrlhealthLabel::Live));
        assert!(!v.basis.archive_consulted);
        for status in [201, 204, 301, 403, 500, 503] {
            let v = classify_urlhealth(&probe("https://e.com/", Some(status), None), no_archive);
            assert_eq!(v.urlhealth_label(), Some(UrlhealthLabel::Unknown), "{status}");
        }
    }

    #[test]
    fn urlhealth_splits_404_by_snapshot() {
        let dead = classify_urlhealth(&probe("https://e.com/x", Some(404), None), archive_with(true));
        assert_eq!(dead.urlhealth_label(), Some(UrlhealthLabel::Dead));
        assert_eq!(dead.basis.snapshot_exists, Some(true));

        let hall =
            classify_urlhealth(&probe("https://e.com/x", Some(404), None), archive_with(false));
        assert_eq!(hall.urlhealth_label(), Some(UrlhealthLabel::LikelyHallucinated));
    }

    #[test]
    fn urlhealth_archive_outage_degrades_to_unknown() {
        let v = classify_urlhealth(&probe("https://e.com/x", Some(404), None), archive_down);
        assert_eq!(v.urlhealth_label(), Some(UrlhealthLabel::Unknown));
        assert!(v.basis.archive_unavailable);
        assert!(!v.pending);
    }

    #[test]
    fn urlhealth_timeout_is_unknown_without_archive_call() {
        let v = classify_urlhealth(
            &probe("https://e.com/x", None, Some(ProbeErrorKind::Timeout)),
            no_archive,
        );
        assert_eq!(v.urlhealth_label(), Some(UrlhealthLabel::Unknown));
    }

    #[test]
    fn pipeline_2xx_is_alive() {
        let policy = SpecialCasePolicy::default();
        for status in [200, 201, 204, 299] {
            let v = classify_pipeline(&probe("https://e.com/", Some(status), None), no_archive, &policy);
            assert_eq!(v.pipeline_label(), Some(PipelineLabel::Alive), "{status}");
        }
    }

    #[test]
    fn pipeline_403_excluded_by_default_and_split_when_not() {
        let policy = SpecialCasePolicy::default();
        let v = classify_pipeline(&probe("https://e.com/", Some(403), None), no_archive, &policy);
        assert_eq!(v.pipeline_label(), Some(PipelineLabel::Excluded403));
        assert_eq!(v.basis.special_case.as_deref(), Some("exclude_403"));

        let keep = SpecialCasePolicy {
            exclude_403: false,
            ..SpecialCasePolicy::default()
        };
        let v = classify_pipeline(&probe("https://e.com/", Some(403), None), archive_with(true), &keep);
        assert_eq!(v.pipeline_label(), Some(PipelineLabel::Stale));
    }

    #[test]
    fn pipeline_failures_split_by_snapshot() {
        let policy = SpecialCasePolicy::default();
        let stale = classify_pipeline(&probe("https://e.com/", Some(500), None), archive_with(true), &policy);
        assert_eq!(stale.pipeline_label(), Some(PipelineLabel::Stale));

        let hall = classify_pipeline(
            &probe("https://e.com/", None, Some(ProbeErrorKind::ConnectFailure)),
            archive_with(false),
            &policy,
        );
        assert_eq!(hall.pipeline_label(), Some(PipelineLabel::Hallucinated));
    }

    #[test]
    fn pipeline_timeout_is_non_resolving() {
        let policy = SpecialCasePolicy::default();
        let v = classify_pipeline(
            &probe("https://e.com/", None, Some(ProbeErrorKind::Timeout)),
            archive_with(false),
            &policy,
        );
        assert_eq!(v.pipeline_label(), Some(PipelineLabel::Hallucinated));
    }

    #[test]
    fn pipeline_archive_outage_defers_the_verdict() {
        let policy = SpecialCasePolicy::default();
        let v = classify_pipeline(&probe("https://e.com/", Some(404), None), archive_down, &policy);
        assert!(v.pending);
        assert!(v.label.is_none());
        assert!(v.basis.archive_unavailable);
    }

    #[test]
    fn forced_alive_matches_host_suffix_only() {
        let policy = SpecialCasePolicy::default();
        for url in [
            "https://reddit.com/r/rust",
            "https://www.reddit.com/r/rust",
            "https://old.reddit.com/r/rust",
        ] {
            let v = classify_pipeline(&probe(url, Some(503), None), no_archive, &policy);
            assert_eq!(v.pipeline_label(), Some(PipelineLabel::ForcedAlive), "{url}");
            assert_eq!(
                v.basis.special_case.as_deref(),
                Some("classify_as_alive:reddit.com")
            );
        }
        let v = classify_pipeline(
            &probe("https://notreddit.com/x", Some(200), None),
            no_archive,
            &policy,
        );
        assert_eq!(v.pipeline_label(), Some(PipelineLabel::Alive));
    }

    #[test]
    fn forced_alive_ignores_probe_outcome() {
        let policy = SpecialCasePolicy::default();
        let v = classify_pipeline(
            &probe("https://reddit.com/x", None, Some(ProbeErrorKind::ConnectFailure)),
            no_archive,
            &policy,
        );
        assert_eq!(v.pipeline_label(), Some(PipelineLabel::ForcedAlive));
    }

    #[test]
    fn reconcile_flags_contradictions_and_accepts_unknown() {
        let p200 = probe("https://e.com/", Some(200), None);
        let u = classify_urlhealth(&p200, no_archive);
        let p = classify_pipeline(&p200, no_archive, &SpecialCasePolicy::default());
        assert!(reconcile_modes(&u, &p).consistent);

        let mut wrong = p.clone();
        wrong.label = Some(VerdictLabel::Pipeline(PipelineLabel::Hallucinated));
        let check = reconcile_modes(&u, &wrong);
        assert!(!check.consistent);
        assert!(check.explanation.unwrap().contains("Live"));
    }

    #[test]
    fn reconcile_exempts_special_cases() {
        let policy = SpecialCasePolicy::default();
        let pr = probe("https://reddit.com/x", Some(404), None);
        let u = classify_urlhealth(&pr, archive_with(false));
        let p = classify_pipeline(&pr, archive_with(false), &policy);
        assert_eq!(u.urlhealth_label(), Some(UrlhealthLabel::LikelyHallucinated));
        assert_eq!(p.pipeline_label(), Some(PipelineLabel::ForcedAlive));
        assert!(reconcile_modes(&u, &p).consistent);
    }

    #[test]
    fn verdict_jsonl_has_exact_fields() {
        let v = classify_urlhealth(&probe("https://e.com/", Some(200), None), no_archive);
        let json = serde_json::to_value(&v).unwrap();
        let obj = json.as_object().unwrap();
        for field in ["url", "mode", "label", "basis", "checked_at"] {
            assert!(obj.contains_key(field), "missing {field}");
        }
        assert_eq!(obj["mode"], "URLHEALTH");
        assert_eq!(obj["label"], "LIVE");
        assert!(!obj.contains_key("pending"));
    }

    #[test]
    fn pending_verdict_serializes_label_null_with_flag() {
        let policy = SpecialCasePolicy::default();
        let v = classify_pipeline(&probe("https://e.com/", Some(404), None), archive_down, &policy);
        let json = serde_json::to_value(&v).unwrap();
        assert!(json["label"].is_null());
        assert_eq!(json["pending"], true);
    }

    #[test]
    fn label_names_round_trip() {
        for (label, name) in [
            (VerdictLabel::Urlhealth(UrlhealthLabel::LikelyHallucinated), "LIKELY_HALLUCINATED"),
            (VerdictLabel::Pipeline(PipelineLabel::Excluded403), "EXCLUDED_403"),
            (VerdictLabel::Pipeline(PipelineLabel::ForcedAlive), "FORCED_ALIVE"),
        ] {
            assert_eq!(label.name(), name);
        }
    }
}
