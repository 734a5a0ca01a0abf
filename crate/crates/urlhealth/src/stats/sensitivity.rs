//! Sensitivity analysis: re-bucket pipeline counts under alternative
//! treatments of the special-cased URLs without re-probing anything.

use serde::{Deserialize, Serialize};

use super::StatsError;
use crate::classify::{PipelineLabel, Verdict, VerdictMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SensitivityScenario {
    /// Forced-alive hosts count as alive; 403s stay excluded but in the denominator.
    Baseline,
    /// Forced-alive URLs leave the denominator entirely.
    SpecialExcluded,
    /// Forced-alive URLs count as non-resolving.
    SpecialAsNonresolving,
    /// 403-excluded URLs count as non-resolving.
    F403AsNonresolving,
}

impl SensitivityScenario {
    pub const ALL: [SensitivityScenario; 4] = [
        SensitivityScenario::Baseline,
        SensitivityScenario::SpecialExcluded,
        SensitivityScenario::SpecialAsNonresolving,
        SensitivityScenario::F403AsNonresolving,
    ];

    pub fn name(&self) -> String {
        match serde_json::to_value(self) {
            Ok(serde_json::Value::String(s)) => s,
            _ => unreachable!("scenarios serialize as strings"),
        }
    }
}

/// Label tallies for one pipeline-mode population.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineCounts {
    pub total: u64,
    pub pending: u64,
    pub alive: u64,
    pub stale: u64,
    pub hallucinated: u64,
    pub excluded_403: u64,
    pub forced_alive: u64,
}

impl PipelineCounts {
    pub fn from_verdicts(verdicts: &[Verdict]) -> Result<Self, StatsError> {
        let mut counts = PipelineCounts::default();
        for verdict in verdicts {
            if verdict.mode != VerdictMode::Pipeline {
                return Err(StatsError::MixedModes);
            }
            counts.total += 1;
            if verdict.pending {
                counts.pending += 1;
                continue;
            }
            match verdict.pipeline_label() {
                Some(PipelineLabel::Alive) => counts.alive += 1,
                Some(PipelineLabel::Stale) => counts.stale += 1,
                Some(PipelineLabel::Hallucinated) => counts.hallucinated += 1,
                Some(PipelineLabel::Excluded403) => counts.excluded_403 += 1,
                Some(PipelineLabel::ForcedAlive) => counts.forced_alive += 1,
                None => return Err(StatsError::MixedModes),
            }
        }
        Ok(counts)
    }

    pub fn decided(&self) -> u64 {
        self.total - self.pending
    }

    pub fn non_resolving(&self) -> u64 {
        self.stale + self.hallucinated
    }
}

/// One scenario's re-bucketed counts. `total = denominator + excluded +
/// pending` always holds; scenarios move URLs between buckets, never drop them.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScenarioRates {
    pub scenario: SensitivityScenario,
    pub non_resolving: u64,
    pub denominator: u64,
    /// URLs removed from the denominator by this scenario.
    pub excluded: u64,
    pub pending: u64,
    pub rate: Option<f64>,
}

/// Re-bucket already-counted verdicts under one scenario.
pub fn scenario_rates(counts: &PipelineCounts, scenario: SensitivityScenario) -> ScenarioRates {
    let decided = counts.decided();
    let (non_resolving, denominator, excluded) = match scenario {
        SensitivityScenario::Baseline => (counts.non_resolving(), decided, 0),
        SensitivityScenario::SpecialExcluded => (
            counts.non_resolving(),
            decided - counts.forced_alive,
            counts.forced_alive,
        ),
        SensitivityScenario::SpecialAsNonresolving => (
            counts.non_resolving() + counts.forced_alive,
            decided,
            0,
        ),
        SensitivityScenario::F403AsNonresolving => (
            counts.non_resolving() + counts.excluded_403,
            decided,
            0,
        ),
    };
    let rate = if denominator > 0 {
        Some(non_resolving as f64 / denominator as f64)
    } else {
        None
    };
    ScenarioRates {
        scenario,
        non_resolving,
        denominator,
        excluded,
        pending: counts.pending,
        rate,
    }
}

/// [`scenario_rates`] straight from a verdict list.
pub fn apply_sensitivity(
    verdicts: &[Verdict],
    scenario: SensitivityScenario,
) -> Result<ScenarioRates, StatsError> {
    Ok(scenario_rates(&PipelineCounts::from_verdicts(verdicts)?, scenario))
}
