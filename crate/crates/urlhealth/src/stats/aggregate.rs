//! Per-group label counts, rates, and bootstrap confidence intervals.

use std::collections::BTreeMap;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::bootstrap::bootstrap_ci;
use super::{group_key, StatsError};
use crate::classify::{PipelineLabel, UrlhealthLabel, Verdict, VerdictLabel, VerdictMode};
use crate::extract::UrlRecord;

/// Derived count key: verdicts that failed to resolve (STALE plus
/// HALLUCINATED under the pipeline mode).
pub const DERIVED_NON_RESOLVING: &str = "NON_RESOLVING";

/// Bootstrap settings for interval estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CiSpec {
    pub level: f64,
    pub resamples: u32,
    pub seed: u64,
}

impl Default for CiSpec {
    fn default() -> Self {
        CiSpec {
            level: 0.95,
            resamples: 2000,
            seed: 0,
        }
    }
}

/// Counts and rates for one group of verdicts.
///
/// `n_by_label` is seeded with every label the mode can produce, so zero
/// counts are explicit. Rates divide by the decided population
/// (`n_total - n_pending`); pending verdicts carry no label and are never
/// silently folded into a bucket.
#[derive(Debug, Clone, Serialize)]
pub struct GroupStats {
    pub group: BTreeMap<String, String>,
    pub mode: VerdictMode,
    pub n_total: u64,
    pub n_pending: u64,
    pub n_by_label: BTreeMap<String, u64>,
    pub n_derived: BTreeMap<String, u64>,
    pub rate_by_label: BTreeMap<String, f64>,
    pub ci_by_label: BTreeMap<String, (f64, f64)>,
}

fn label_universe(mode: VerdictMode) -> Vec<String> {
    match mode {
        VerdictMode::Urlhealth => UrlhealthLabel::ALL
            .iter()
            .map(|l| VerdictLabel::Urlhealth(*l).name())
            .collect(),
        VerdictMode::Pipeline => PipelineLabel::ALL
            .iter()
            .map(|l| VerdictLabel::Pipeline(*l).name())
            .collect(),
    }
}

fn label_seed(base: u64, group: &BTreeMap<String, String>, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    for (key, value) in group {
        hasher.update([0x1f]);
        hasher.update(key.as_bytes());
        hasher.update([0x1e]);
        hasher.update(value.as_bytes());
    }
    hasher.update([0x1d]);
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest.as_slice()[..8].try_into().expect("sha256 is wide enough"))
}

fn single_mode(items: &[(UrlRecord, Verdict)]) -> Result<VerdictMode, StatsError> {
    let mode = items.first().ok_or(StatsError::EmptyInput)?.1.mode;
    if items.iter().any(|(_, v)| v.mode != mode) {
        return Err(StatsError::MixedModes);
    }
    Ok(mode)
}

/// Group verdicts by the named labels and count per-label outcomes.
/// Groups come back sorted by their key.
pub fn aggregate(
    items: &[(UrlRecord, Verdict)],
    group_by: &[String],
) -> Result<Vec<GroupStats>, StatsError> {
    let mode = single_mode(items)?;
    let universe = label_universe(mode);
    let mut groups: BTreeMap<BTreeMap<String, String>, Vec<&Verdict>> = BTreeMap::new();
    for (record, verdict) in items {
        groups
            .entry(group_key(&record.group_labels, group_by))
            .or_default()
            .push(verdict);
    }

    let mut out = Vec::with_capacity(groups.len());
    for (group, verdicts) in groups {
        let mut n_by_label: BTreeMap<String, u64> =
            universe.iter().map(|l| (l.clone(), 0)).collect();
        let mut n_pending = 0u64;
        for verdict in &verdicts {
            if verdict.pending {
                n_pending += 1;
                continue;
            }
            if let Some(label) = verdict.label {
                *n_by_label.entry(label.name()).or_insert(0) += 1;
            }
        }
        let mut n_derived = BTreeMap::new();
        if mode == VerdictMode::Pipeline {
            let stale = n_by_label[&VerdictLabel::Pipeline(PipelineLabel::Stale).name()];
            let hallucinated =
                n_by_label[&VerdictLabel::Pipeline(PipelineLabel::Hallucinated).name()];
            n_derived.insert(DERIVED_NON_RESOLVING.to_string(), stale + hallucinated);
        }
        let denominator = verdicts.len() as u64 - n_pending;
        let mut rate_by_label = BTreeMap::new();
        if denominator > 0 {
            for (label, count) in n_by_label.iter().chain(n_derived.iter()) {
                rate_by_label.insert(label.clone(), *count as f64 / denominator as f64);
            }
        }
        out.push(GroupStats {
            group,
            mode,
            n_total: verdicts.len() as u64,
            n_pending,
            n_by_label,
            n_derived,
            rate_by_label,
            ci_by_label: BTreeMap::new(),
        });
    }
    Ok(out)
}

/// [`aggregate`], plus a bootstrap confidence interval per label rate.
/// Each (group, label) cell draws from its own derived seed, so adding or
/// removing groups never perturbs another group's interval.
pub fn aggregate_with_ci(
    items: &[(UrlRecord, Verdict)],
    group_by: &[String],
    spec: &CiSpec,
) -> Result<Vec<GroupStats>, StatsError> {
    let mut stats = aggregate(items, group_by)?;
    for group_stats in &mut stats {
        let denominator = group_stats.n_total - group_stats.n_pending;
        if denominator == 0 {
            continue;
        }
        let counts = group_stats
            .n_by_label
            .iter()
            .chain(group_stats.n_derived.iter());
        for (label, count) in counts {
            let seed = label_seed(spec.seed, &group_stats.group, label);
            let interval =
                bootstrap_ci(*count, denominator, spec.level, spec.resamples, seed)?;
            group_stats.ci_by_label.insert(label.clone(), interval);
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::VerdictBasis;
    use chrono::Utc;

    fn record(model: &str, n: usize) -> UrlRecord {
        let mut labels = BTreeMap::new();
        labels.insert("model".to_string(), model.to_string());
        let url = format!("https://e.com/{model}/{n}");
        UrlRecord {
            raw: url.clone(),
            normalized: url,
            source_id: None,
            group_labels: labels,
            char_span: None,
        }
    }

    fn verdict(url: &str, mode: VerdictMode, label: Option<VerdictLabel>, pending: bool) -> Verdict {
        Verdict {
            url: url.to_string(),
            mode,
            label,
            pending,
            basis: VerdictBasis::default(),
            checked_at: Utc::now(),
        }
    }

    fn pipeline_corpus(model: &str, counts: &[(PipelineLabel, usize)], pending: usize)
        -> Vec<(UrlRecord, Verdict)> {
        let mut items = Vec::new();
        for (label, count) in counts {
            for _ in 0..*count {
                let rec = record(model, items.len());
                let v = verdict(
                    &rec.normalized,
                    VerdictMode::Pipeline,
                    Some(VerdictLabel::Pipeline(*label)),
                    false,
                );
                items.push((rec, v));
            }
        }
        for _ in 0..pending {
            let rec = record(model, items.len());
            let v = verdict(&rec.normalized, VerdictMode::Pipeline, None, true);
            items.push((rec, v));
        }
        items
    }

    #[test]
    fn counts_plus_pending_equal_total() {
        let items = pipeline_corpus(
            "m",
            &[
                (PipelineLabel::Alive, 40),
                (PipelineLabel::Stale, 7),
                (PipelineLabel::Hallucinated, 3),
            ],
            5,
        );
        let stats = aggregate(&items, &["model".to_string()]).unwrap();
        assert_eq!(stats.len(), 1);
        let s = &stats[0];
        assert_eq!(s.n_total, 55);
        assert_eq!(s.n_pending, 5);
        assert_eq!(s.n_by_label.values().sum::<u64>() + s.n_pending, s.n_total);
    }

    #[test]
    fn non_resolving_is_stale_plus_hallucinated() {
        let items = pipeline_corpus(
            "m",
            &[
                (PipelineLabel::Alive, 10),
                (PipelineLabel::Stale, 4),
                (PipelineLabel::Hallucinated, 6),
                (PipelineLabel::Excluded403, 2),
            ],
            0,
        );
        let stats = aggregate(&items, &["model".to_string()]).unwrap();
        assert_eq!(stats[0].n_derived[DERIVED_NON_RESOLVING], 10);
        let rate = stats[0].rate_by_label[DERIVED_NON_RESOLVING];
        assert!((rate - 10.0 / 22.0).abs() < 1e-12);
    }

    #[test]
    fn label_universe_is_zero_seeded() {
        let items = pipeline_corpus("m", &[(PipelineLabel::Alive, 3)], 0);
        let stats = aggregate(&items, &["model".to_string()]).unwrap();
        let keys: Vec<&str> = stats[0].n_by_label.keys().map(|s| s.as_str()).collect();
        assert_eq!(
            keys,
            vec!["ALIVE", "EXCLUDED_403", "FORCED_ALIVE", "HALLUCINATED", "STALE"]
        );
        assert_eq!(stats[0].n_by_label["HALLUCINATED"], 0);
    }

    #[test]
    fn pending_shrinks_the_rate_denominator() {
        let items = pipeline_corpus("m", &[(PipelineLabel::Alive, 8)], 2);
        let stats = aggregate(&items, &["model".to_string()]).unwrap();
        assert!((stats[0].rate_by_label["ALIVE"] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn groups_split_and_sort_by_key() {
        let mut items = pipeline_corpus("zeta", &[(PipelineLabel::Alive, 2)], 0);
        items.extend(pipeline_corpus("alpha", &[(PipelineLabel::Stale, 2)], 0));
        let stats = aggregate(&items, &["model".to_string()]).unwrap();
        assert_eq!(stats.len(), 2);
        assert_eq!(stats[0].group["model"], "alpha");
        assert_eq!(stats[1].group["model"], "zeta");
    }

    #[test]
    fn missing_group_label_lands_in_none_bucket() {
        let mut rec = record("m", 0);
        rec.group_labels.clear();
        let v = verdict(
            &rec.normalized,
            VerdictMode::Pipeline,
            Some(VerdictLabel::Pipeline(PipelineLabel::Alive)),
            false,
        );
        let stats = aggregate(&[(rec, v)], &["model".to_string()]).unwrap();
        assert_eq!(stats[0].group["model"], "(none)");
    }

    #[test]
    fn empty_input_and_mixed_modes_are_errors() {
        assert!(matches!(
            aggregate(&[], &["model".to_string()]),
            Err(StatsError::EmptyInput)
        ));
        let mut items = pipeline_corpus("m", &[(PipelineLabel::Alive, 1)], 0);
        let rec = record("m", 9);
        let v = verdict(
            &rec.normalized,
            VerdictMode::Urlhealth,
            Some(VerdictLabel::Urlhealth(UrlhealthLabel::Live)),
            false,
        );
        items.push((rec, v));
        assert!(matches!(
            aggregate(&items, &["model".to_string()]),
            Err(StatsError::MixedModes)
        ));
    }

    #[test]
    fn urlhealth_mode_has_no_derived_counts() {
        let rec = record("m", 0);
        let v = verdict(
            &rec.normalized,
            VerdictMode::Urlhealth,
            Some(VerdictLabel::Urlhealth(UrlhealthLabel::Live)),
            false,
        );
        let stats = aggregate(&[(rec, v)], &["model".to_string()]).unwrap();
        assert!(stats[0].n_derived.is_empty());
        let keys: Vec<&str> = stats[0].n_by_label.keys().map(|s| s.as_str()).collect();
        assert_eq!(keys, vec!["DEAD", "LIKELY_HALLUCINATED", "LIVE", "UNKNOWN"]);
    }

    #[test]
    fn intervals_bracket_the_rate_and_reproduce_by_seed() {
        let items = pipeline_corpus(
            "m",
            &[(PipelineLabel::Alive, 70), (PipelineLabel::Hallucinated, 30)],
            0,
        );
        let spec = CiSpec {
            level: 0.95,
            resamples: 1000,
            seed: 11,
        };
        let first = aggregate_with_ci(&items, &["model".to_string()], &spec).unwrap();
        let again = aggregate_with_ci(&items, &["model".to_string()], &spec).unwrap();
        let (lo, hi) = first[0].ci_by_label["HALLUCINATED"];
        let rate = first[0].rate_by_label["HALLUCINATED"];
        assert!(lo <= rate && rate <= hi);
        assert!(lo > 0.0 && hi < 1.0);
        assert_eq!(first[0].ci_by_label, again[0].ci_by_label);
        let other = aggregate_with_ci(
            &items,
            &["model".to_string()],
            &CiSpec { seed: 12, ..spec },
        )
        .unwrap();
        assert_ne!(first[0].ci_by_label["HALLUCINATED"], other[0].ci_by_label["HALLUCINATED"]);
    }

    #[test]
    fn cells_get_independent_seeds() {
        let mut items = pipeline_corpus(
            "a",
            &[(PipelineLabel::Alive, 60), (PipelineLabel::Stale, 40)],
            0,
        );
        let solo = aggregate_with_ci(&items, &["model".to_string()], &CiSpec::default()).unwrap();
        items.extend(pipeline_corpus(
            "b",
            &[(PipelineLabel::Alive, 30), (PipelineLabel::Hallucinated, 20)],
            0,
        ));
        let joined = aggregate_with_ci(&items, &["model".to_string()], &CiSpec::default()).unwrap();
        assert_eq!(solo[0].ci_by_label, joined[0].ci_by_label);
    }
}
