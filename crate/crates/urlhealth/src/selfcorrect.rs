//! Agentic self-correction: generate an answer, verify its citations, feed
//! the verdicts back, and repeat until every citation holds up or the round
//! cap is hit.
//!
//! The generator side is pluggable via [`Generator`]; the verifier side is
//! any closure that answers a [`ToolRequest`], and [`tool_verifier`] builds
//! one from a live prober and archive client.

use std::collections::{BTreeMap, VecDeque};

use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};

use crate::archive::ArchiveClient;
use crate::classify::{classify_urlhealth, UrlhealthLabel};
use crate::extract::{dedup, extract_from_text, DedupKey};
use crate::probe::Prober;

/// One verification call: the URLs the draft currently cites.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolRequest {
    pub urls: Vec<String>,
}

/// Verdict for one cited URL. `snapshot_url` is always present in the wire
/// form, null when no snapshot is known, so callers never need to probe for
/// a missing key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolVerdict {
    pub url: String,
    pub label: UrlhealthLabel,
    pub snapshot_url: Option<String>,
}

/// The verifier's reply: one verdict per requested URL, in request order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ToolResponse(pub Vec<ToolVerdict>);

/// How the generator participates in the loop.
///
/// `Interleaved` generators accept feedback every round; `TwoPhase`
/// generators get exactly one revision pass, so their effective round cap
/// is two regardless of the configured cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InteractionStyle {
    Interleaved,
    TwoPhase,
}

/// One generated answer. Citations are whatever http(s) URLs appear in the
/// text; there is no side channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Draft {
    pub answer: String,
}

/// An answer source that can revise itself given citation verdicts.
pub trait Generator {
    fn style(&self) -> InteractionStyle;

    /// Produce a draft. `feedback` is `None` on the first round and the
    /// previous round's verdicts afterwards.
    fn generate(&mut self, question: &str, feedback: Option<&ToolResponse>)
        -> anyhow::Result<Draft>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LoopPolicy {
    /// Most generate-verify rounds allowed per question.
    pub round_cap: u32,
    /// Treat UNKNOWN verdicts as failures instead of tolerating them.
    pub strict_unknown: bool,
}

impl Default for LoopPolicy {
    fn default() -> Self {
        LoopPolicy {
            round_cap: 8,
            strict_unknown: false,
        }
    }
}

fn effective_cap(style: InteractionStyle, round_cap: u32) -> u32 {
    match style {
        InteractionStyle::Interleaved => round_cap.max(1),
        InteractionStyle::TwoPhase => round_cap.clamp(1, 2),
    }
}

fn is_flagged(label: UrlhealthLabel, strict_unknown: bool) -> bool {
    match label {
        UrlhealthLabel::Live => false,
        UrlhealthLabel::Dead | UrlhealthLabel::LikelyHallucinated => true,
        UrlhealthLabel::Unknown => strict_unknown,
    }
}

/// Everything that happened for one question.
#[derive(Debug, Clone, Serialize)]
pub struct QuestionRun {
    pub question: String,
    pub rounds_used: u32,
    pub answer: String,
    /// First round's verdicts; `None` when the first draft cited nothing.
    pub initial: Option<ToolResponse>,
    /// Last round's verdicts; `None` when the final draft cited nothing.
    pub final_response: Option<ToolResponse>,
    pub verifier_requests: Vec<ToolRequest>,
    /// True when flagged citations remained at the round cap.
    pub stopped_by_cap: bool,
}

/// Drive one question to convergence or the round cap.
///
/// A verifier failure is retried once; a second consecutive failure aborts
/// the question. Generator failures abort immediately.
pub fn run_loop(
    generator: &mut dyn Generator,
    verifier: &mut dyn FnMut(&ToolRequest) -> anyhow::Result<ToolResponse>,
    question: &str,
    policy: &LoopPolicy,
) -> anyhow::Result<QuestionRun> {
    let cap = effective_cap(generator.style(), policy.round_cap);
    let mut run = QuestionRun {
        question: question.to_string(),
        rounds_used: 0,
        answer: String::new(),
        initial: None,
        final_response: None,
        verifier_requests: Vec::new(),
        stopped_by_cap: false,
    };
    let mut feedback: Option<ToolResponse> = None;
    loop {
        run.rounds_used += 1;
        let draft = generator
            .generate(question, feedback.as_ref())
            .with_context(|| format!("generator failed on round {}", run.rounds_used))?;
        run.answer = draft.answer.clone();
        let cited = dedup(
            extract_from_text(&draft.answer, None, &BTreeMap::new()),
            DedupKey::NormalizedOnly,
        );
        if cited.is_empty() {
            run.final_response = None;
            return Ok(run);
        }
        let request = ToolRequest {
            urls: cited.into_iter().map(|r| r.normalized).collect(),
        };
        run.verifier_requests.push(request.clone());
        let response = match verifier(&request) {
            Ok(response) => response,
            Err(first) => verifier(&request).map_err(|second| {
                anyhow!("verifier failed twice: {first}; then: {second}")
            })?,
        };
        if run.initial.is_none() {
            run.initial = Some(response.clone());
        }
        let flagged = response
            .0
            .iter()
            .filter(|v| is_flagged(v.label, policy.strict_unknown))
            .count();
        run.final_response = Some(response.clone());
        if flagged == 0 {
            return Ok(run);
        }
        if run.rounds_used >= cap {
            run.stopped_by_cap = true;
            return Ok(run);
        }
        feedback = Some(response);
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QuestionFailure {
    pub question: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RoundStats {
    pub mean: f64,
    pub median: f64,
    pub max: u32,
}

/// Outcome of a whole batch of questions.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub runs: Vec<QuestionRun>,
    pub failures: Vec<QuestionFailure>,
    pub rounds: RoundStats,
    /// Verdict label tally across every first-round response.
    pub initial_labels: BTreeMap<String, u64>,
    /// Verdict label tally across every last-round response.
    pub final_labels: BTreeMap<String, u64>,
}

fn label_tally<'a, I: Iterator<Item = &'a ToolResponse>>(responses: I) -> BTreeMap<String, u64> {
    let mut tally = BTreeMap::new();
    for response in responses {
        for verdict in &response.0 {
            let name = serde_json::to_value(verdict.label)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default();
            *tally.entry(name).or_insert(0) += 1;
        }
    }
    tally
}

fn round_stats(runs: &[QuestionRun]) -> RoundStats {
    if runs.is_empty() {
        return RoundStats::default();
    }
    let mut rounds: Vec<u32> = runs.iter().map(|r| r.rounds_used).collect();
    rounds.sort_unstable();
    let mean = rounds.iter().map(|&r| r as f64).sum::<f64>() / rounds.len() as f64;
    let median = if rounds.len() % 2 == 1 {
        rounds[rounds.len() / 2] as f64
    } else {
        (rounds[rounds.len() / 2 - 1] as f64 + rounds[rounds.len() / 2] as f64) / 2.0
    };
    RoundStats {
        mean,
        median,
        max: *rounds.last().unwrap(),
    }
}

/// Summarize finished runs and failures into one report.
pub fn evaluate_run(runs: Vec<QuestionRun>, failures: Vec<QuestionFailure>) -> RunReport {
    let rounds = round_stats(&runs);
    let initial_labels = label_tally(runs.iter().filter_map(|r| r.initial.as_ref()));
    let final_labels = label_tally(runs.iter().filter_map(|r| r.final_response.as_ref()));
    RunReport {
        runs,
        failures,
        rounds,
        initial_labels,
        final_labels,
    }
}

/// Run every question through [`run_loop`], collecting failures instead of
/// aborting the batch.
pub fn run_questions(
    generator: &mut dyn Generator,
    verifier: &mut dyn FnMut(&ToolRequest) -> anyhow::Result<ToolResponse>,
    questions: &[String],
    policy: &LoopPolicy,
) -> RunReport {
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for question in questions {
        match run_loop(generator, verifier, question, policy) {
            Ok(run) => runs.push(run),
            Err(error) => failures.push(QuestionFailure {
                question: question.clone(),
                error: format!("{error:#}"),
            }),
        }
    }
    evaluate_run(runs, failures)
}

/// Verifier backed by live probing plus archive lookups: each cited URL is
/// probed and classified, and the snapshot URL is surfaced when the archive
/// was consulted and had one.
pub fn tool_verifier<'a>(
    prober: &'a Prober,
    archive: &'a ArchiveClient,
) -> impl FnMut(&ToolRequest) -> anyhow::Result<ToolResponse> + 'a {
    move |request: &ToolRequest| {
        let probes = prober.probe_batch(&request.urls, |_, _, _| {});
        let mut verdicts = Vec::with_capacity(probes.len());
        for probe in &probes {
            let mut snapshot_url = None;
            let verdict = classify_urlhealth(probe, |url| {
                let result = archive.lookup(url)?;
                snapshot_url = result.snapshot_url.clone();
                Ok(result)
            });
            verdicts.push(ToolVerdict {
                url: probe.url.clone(),
                label: verdict.urlhealth_label().unwrap_or(UrlhealthLabel::Unknown),
                snapshot_url,
            });
        }
        Ok(ToolResponse(verdicts))
    }
}

/// Scripted generator: a fixed sequence of answers per question, replayed
/// round by round (the last answer repeats once the script runs out).
///
/// The JSON form is `{"style": "...", "questions": {"q": ["round 1",
/// "round 2"]}}`.
#[derive(Debug, Clone, Deserialize)]
pub struct ScriptedGenerator {
    style: InteractionStyle,
    questions: BTreeMap<String, Vec<String>>,
    #[serde(skip)]
    cursor: BTreeMap<String, usize>,
}

impl ScriptedGenerator {
    pub fn new(style: InteractionStyle, questions: BTreeMap<String, Vec<String>>) -> Self {
        ScriptedGenerator {
            style,
            questions,
            cursor: BTreeMap::new(),
        }
    }

    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        serde_json::from_str(text).context("script must be {\"style\", \"questions\"}")
    }

    pub fn question_names(&self) -> Vec<String> {
        self.questions.keys().cloned().collect()
    }
}

impl Generator for ScriptedGenerator {
    fn style(&self) -> InteractionStyle {
        self.style
    }

    fn generate(&mut self, question: &str, _: Option<&ToolResponse>) -> anyhow::Result<Draft> {
        let script = self
            .questions
            .get(question)
            .ok_or_else(|| anyhow!("no script for question {question:?}"))?;
        if script.is_empty() {
            return Err(anyhow!("empty script for question {question:?}"));
        }
        let cursor = self.cursor.entry(question.to_string()).or_insert(0);
        let answer = script[(*cursor).min(script.len() - 1)].clone();
        *cursor += 1;
        Ok(Draft { answer })
    }
}

/// Generator that swaps every flagged citation for the next URL from a
/// replacement pool and never re-emits one that was flagged.
#[derive(Debug, Clone)]
pub struct CooperativeGenerator {
    style: InteractionStyle,
    citations: Vec<String>,
    replacements: VecDeque<String>,
}

impl CooperativeGenerator {
    pub fn new(
        style: InteractionStyle,
        initial: Vec<String>,
        replacements: Vec<String>,
    ) -> Self {
        CooperativeGenerator {
            style,
            citations: initial,
            replacements: replacements.into(),
        }
    }

    fn compose(&self) -> Draft {
        Draft {
            answer: format!("Sources: {}", self.citations.join(" ")),
        }
    }
}

impl Generator for CooperativeGenerator {
    fn style(&self) -> InteractionStyle {
        self.style
    }

    fn generate(&mut self, _: &str, feedback: Option<&ToolResponse>) -> anyhow::Result<Draft> {
        let Some(feedback) = feedback else {
            return Ok(self.compose());
        };
        for verdict in &feedback.0 {
            if verdict.label == UrlhealthLabel::Live {
                continue;
            }
            self.citations.retain(|c| c != &verdict.url);
            if let Some(fresh) = self.replacements.pop_front() {
                self.citations.push(fresh);
            }
        }
        Ok(self.compose())
    }
}

/// Generator that never changes its answer, however bad the feedback.
#[derive(Debug, Clone)]
pub struct StubbornGenerator {
    style: InteractionStyle,
    answer: String,
}

impl StubbornGenerator {
    pub fn new(style: InteractionStyle, answer: &str) -> Self {
        StubbornGenerator {
            style,
            answer: answer.to_string(),
        }
    }
}

impl Generator for StubbornGenerator {
    fn style(&self) -> InteractionStyle {
        self.style
    }

    fn generate(&mut self, _: &str, _: Option<&ToolResponse>) -> anyhow::Result<Draft> {
        Ok(Draft {
            answer: self.answer.clone(),
        })
    }
}
