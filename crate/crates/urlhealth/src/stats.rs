//! Grouped statistics over verdicts: rates with bootstrap confidence
//! intervals, two-proportion z-tests, sensitivity re-bucketings, and
//! stratified audit sampling.

mod aggregate;
mod bootstrap;
mod sensitivity;
mod stratified;
mod ztest;

pub use aggregate::{aggregate, aggregate_with_ci, CiSpec, GroupStats, DERIVED_NON_RESOLVING};
pub use bootstrap::{bootstrap_ci, bootstrap_ci_sequential};
pub use sensitivity::{
    apply_sensitivity, scenario_rates, PipelineCounts, ScenarioRates, SensitivityScenario,
};
pub use stratified::{
    stratified_sample, unknown_status_stratum, AuditAllocation, StratifiedSample,
};
pub use ztest::{two_prop_z, ZTestResult};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("no verdicts to aggregate")]
    EmptyInput,
    #[error("aggregate over mixed verdict modes; split the input by mode first")]
    MixedModes,
    #[error("empty sample (n = 0)")]
    EmptySample,
    #[error("invalid arguments: {0}")]
    InvalidArguments(String),
    #[error("pooled proportion {pooled} is degenerate; the z statistic is undefined")]
    DegenerateProportion { pooled: f64 },
}

pub(crate) fn group_key(
    labels: &std::collections::BTreeMap<String, String>,
    group_by: &[String],
) -> std::collections::BTreeMap<String, String> {
    group_by
        .iter()
        .map(|name| {
            let value = labels
                .get(name)
                .cloned()
                .unwrap_or_else(|| "(none)".to_string());
            (name.clone(), value)
        })
        .collect()
}
