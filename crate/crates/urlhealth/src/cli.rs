//! Command line front end.
//!
//! Settings resolve per field with a fixed precedence: command line flags
//! beat the TOML settings file (`--config`), which beats the environment
//! (`URLHEALTH_USER_AGENT`, `URLHEALTH_WORKERS`, `URLHEALTH_ARCHIVE_QPS`),
//! which beats the built-in defaults.
//!
//! Exit codes: 0 on success, 1 when the command ran but found problems (a
//! gate failure, unresolved pending verdicts, a question that never
//! converged), 2 on usage, configuration, or I/O errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{self, Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use indexmap::IndexSet;

use crate::archive::{ArchiveClient, ArchiveResult, DEFAULT_ARCHIVE_QPS, DEFAULT_AVAILABILITY_ENDPOINT};
use crate::classify::{
    classify_pipeline, classify_urlhealth, PipelineLabel, SpecialCasePolicy, UrlhealthLabel,
    Verdict, VerdictLabel, VerdictMode,
};
use crate::extract::{
    dedup, extract_from_citations, extract_from_text, normalize, CitationRecord, CitationReject,
    DedupKey, UrlRecord,
};
use crate::probe::{ProbeConfig, Prober};
use crate::report::{
    render_audit, render_groups, render_sensitivity, render_summary, urlhealth_summary,
    GroupSort, ReportFormat,
};
use crate::selfcorrect::{run_questions, tool_verifier, LoopPolicy, ScriptedGenerator};
use crate::stats::{
    aggregate, aggregate_with_ci, scenario_rates, stratified_sample, unknown_status_stratum,
    CiSpec, PipelineCounts, ScenarioRates, SensitivityScenario,
};
use crate::store::RunLedger;

#[derive(Parser)]
#[command(
    name = "urlhealth",
    version,
    about = "Check whether cited URLs are live, stale, or hallucinated"
)]
struct Cli {
    /// TOML settings file; flags override it, it overrides the environment.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Probe URLs now and print one verdict per line; exit 1 unless all pass.
    Check(CheckArgs),
    /// Pull URL records out of free text or citation JSONL.
    Extract(ExtractArgs),
    /// Probe and classify a whole corpus into a resumable run ledger.
    Batch(BatchArgs),
    /// Aggregate a run ledger into per-group tables or a summary.
    Report(ReportArgs),
    /// Re-bucket pipeline verdicts under alternative counting scenarios.
    Sensitivity(SensitivityArgs),
    /// Draw a reproducible stratified sample for manual auditing.
    AuditSample(AuditArgs),
    /// Replay a scripted generator through verify-and-revise rounds.
    Selfcorrect(SelfcorrectArgs),
}

#[derive(Args, Default, Clone)]
struct SettingsArgs {
    /// User-Agent header for probes and archive lookups.
    #[arg(long)]
    user_agent: Option<String>,
    /// Global probe worker cap.
    #[arg(long)]
    workers: Option<usize>,
    /// Per-host in-flight probe cap.
    #[arg(long)]
    per_host: Option<usize>,
    /// Connect timeout in seconds.
    #[arg(long)]
    connect_timeout: Option<f64>,
    /// Total per-request timeout in seconds.
    #[arg(long)]
    total_timeout: Option<f64>,
    /// Redirects to follow before reporting a redirect loop.
    #[arg(long)]
    max_redirects: Option<u32>,
    /// Snapshot availability endpoint.
    #[arg(long)]
    archive_endpoint: Option<String>,
    /// Archive queries per second (0 disables the rate gate).
    #[arg(long)]
    archive_qps: Option<f64>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct FileSettings {
    user_agent: Option<String>,
    workers: Option<usize>,
    per_host: Option<usize>,
    connect_timeout: Option<f64>,
    total_timeout: Option<f64>,
    max_redirects: Option<u32>,
    archive_endpoint: Option<String>,
    archive_qps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct Settings {
    probe: ProbeConfig,
    archive_endpoint: String,
    archive_qps: f64,
}

fn env_parsed<T: FromStr>(
    env: &dyn Fn(&str) -> Option<String>,
    key: &str,
) -> anyhow::Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match env(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse::<T>()
            .map(Some)
            .map_err(|e| anyhow!("invalid {key}={raw:?}: {e}")),
    }
}

fn resolve_settings(
    flags: &SettingsArgs,
    file: Option<&FileSettings>,
    env: &dyn Fn(&str) -> Option<String>,
) -> anyhow::Result<Settings> {
    let defaults = ProbeConfig::default();
    let file_or = |pick: fn(&FileSettings) -> Option<f64>| file.and_then(pick);
    let user_agent = flags
        .user_agent
        .clone()
        .or_else(|| file.and_then(|f| f.user_agent.clone()))
        .or(env("URLHEALTH_USER_AGENT"))
        .unwrap_or(defaults.user_agent);
    let workers = match flags.workers.or(file.and_then(|f| f.workers)) {
        Some(w) => w,
        None => env_parsed::<usize>(env, "URLHEALTH_WORKERS")?.unwrap_or(defaults.workers),
    };
    let archive_qps = match flags.archive_qps.or(file_or(|f| f.archive_qps)) {
        Some(q) => q,
        None => env_parsed::<f64>(env, "URLHEALTH_ARCHIVE_QPS")?.unwrap_or(DEFAULT_ARCHIVE_QPS),
    };
    if workers == 0 {
        bail!("workers must be at least 1");
    }
    if !archive_qps.is_finite() || archive_qps < 0.0 {
        bail!("archive qps must be a finite non-negative number");
    }
    let probe = ProbeConfig {
        connect_timeout: flags
            .connect_timeout
            .or(file_or(|f| f.connect_timeout))
            .map(Duration::from_secs_f64)
            .unwrap_or(defaults.connect_timeout),
        total_timeout: flags
            .total_timeout
            .or(file_or(|f| f.total_timeout))
            .map(Duration::from_secs_f64)
            .unwrap_or(defaults.total_timeout),
        max_redirects: flags
            .max_redirects
            .or(file.and_then(|f| f.max_redirects))
            .unwrap_or(defaults.max_redirects),
        workers,
        per_host_max_inflight: flags
            .per_host
            .or(file.and_then(|f| f.per_host))
            .unwrap_or(defaults.per_host_max_inflight),
        retry_on_429: defaults.retry_on_429,
        retry_backoff: defaults.retry_backoff,
        user_agent,
    };
    Ok(Settings {
        probe,
        archive_endpoint: flags
            .archive_endpoint
            .clone()
            .or_else(|| file.and_then(|f| f.archive_endpoint.clone()))
            .unwrap_or_else(|| DEFAULT_AVAILABILITY_ENDPOINT.to_string()),
        archive_qps,
    })
}

fn settings_snapshot(settings: &Settings, modes: &[VerdictMode]) -> serde_json::Value {
    let mut value = serde_json::to_value(&settings.probe).unwrap_or_default();
    if let Some(map) = value.as_object_mut() {
        map.insert(
            "archive_endpoint".to_string(),
            settings.archive_endpoint.clone().into(),
        );
        map.insert("archive_qps".to_string(), settings.archive_qps.into());
        map.insert(
            "modes".to_string(),
            serde_json::to_value(modes).unwrap_or_default(),
        );
    }
    value
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Urlhealth,
    Pipeline,
}

impl From<ModeArg> for VerdictMode {
    fn from(mode: ModeArg) -> VerdictMode {
        match mode {
            ModeArg::Urlhealth => VerdictMode::Urlhealth,
            ModeArg::Pipeline => VerdictMode::Pipeline,
        }
    }
}

impl std::fmt::Display for ModeArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            ModeArg::Urlhealth => "urlhealth",
            ModeArg::Pipeline => "pipeline",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Text,
    Csv,
    Json,
}

impl From<FormatArg> for ReportFormat {
    fn from(format: FormatArg) -> ReportFormat {
        match format {
            FormatArg::Text => ReportFormat::Text,
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Json => ReportFormat::Json,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LayoutArg {
    /// Per-group table, best hallucination rate first.
    PerModel,
    /// Per-group table, highest non-resolving share first.
    Heatmap,
    /// Corpus totals per question (URLHEALTH verdicts only).
    Summary,
}

#[derive(Args)]
struct CheckArgs {
    /// URLs to check (or use --stdin).
    #[arg(value_name = "URL")]
    urls: Vec<String>,
    /// Read URLs from standard input, one per line.
    #[arg(long)]
    stdin: bool,
    /// Verdict regime to apply.
    #[arg(long, value_enum, default_value_t = ModeArg::Urlhealth)]
    mode: ModeArg,
    #[command(flatten)]
    settings: SettingsArgs,
}

#[derive(Args)]
struct ExtractArgs {
    /// File to read, or - for standard input.
    #[arg(long, default_value = "-")]
    input: String,
    /// Source id attached to records extracted from free text.
    #[arg(long)]
    source_id: Option<String>,
    /// Group label as name=value for free-text input; repeatable.
    #[arg(long = "label", value_name = "NAME=VALUE")]
    labels: Vec<String>,
}

#[derive(Args)]
struct BatchArgs {
    /// Corpus file: citation JSONL, or free text to scan for URLs.
    #[arg(long)]
    input: PathBuf,
    /// Run ledger path.
    #[arg(long)]
    ledger: PathBuf,
    /// Continue an existing ledger instead of refusing to start over.
    #[arg(long)]
    resume: bool,
    /// Resume even when the recorded configuration differs.
    #[arg(long, requires = "resume")]
    force: bool,
    /// Verdict regimes to compute, comma separated.
    #[arg(long, value_enum, value_delimiter = ',',
          default_values_t = [ModeArg::Urlhealth, ModeArg::Pipeline])]
    modes: Vec<ModeArg>,
    /// Source id for free-text input.
    #[arg(long)]
    source_id: Option<String>,
    /// Group label as name=value for free-text input; repeatable.
    #[arg(long = "label", value_name = "NAME=VALUE")]
    labels: Vec<String>,
    /// Do not print verdicts when the run finishes.
    #[arg(long)]
    quiet: bool,
    #[command(flatten)]
    settings: SettingsArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// Run ledger path.
    #[arg(long)]
    ledger: PathBuf,
    /// Verdict regime to read (summary defaults to urlhealth, tables to
    /// pipeline).
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum, default_value_t = LayoutArg::PerModel)]
    layout: LayoutArg,
    #[arg(long, value_enum, default_value_t = FormatArg::Text)]
    format: FormatArg,
    /// Label names to group rows by; repeatable.
    #[arg(long = "group-by", default_values_t = [String::from("model")])]
    group_by: Vec<String>,
    /// Attach bootstrap confidence intervals to every rate.
    #[arg(long)]
    ci: bool,
    /// Confidence level for --ci.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Bootstrap resamples for --ci.
    #[arg(long, default_value_t = 2000)]
    resamples: u32,
    /// Bootstrap seed for --ci.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SensitivityArgs {
    /// Run ledger path.
    #[arg(long)]
    ledger: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Text)]
    format: FormatArg,
}

#[derive(Args)]
struct AuditArgs {
    /// Run ledger path.
    #[arg(long)]
    ledger: PathBuf,
    /// Verdict regime to sample from.
    #[arg(long, value_enum, default_value_t = ModeArg::Urlhealth)]
    mode: ModeArg,
    /// Verdict label to audit.
    #[arg(long, default_value = "UNKNOWN")]
    label: String,
    /// Label names to group by; repeatable.
    #[arg(long = "group-by", default_values_t = [String::from("model")])]
    group_by: Vec<String>,
    /// Sample size per group.
    #[arg(long, default_value_t = 200)]
    per_group: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
}

#[derive(Args)]
struct SelfcorrectArgs {
    /// Generator script: {"style": ..., "questions": {...}}.
    #[arg(long)]
    script: PathBuf,
    /// Question to run; repeatable (defaults to every scripted question).
    #[arg(long = "question")]
    questions: Vec<String>,
    /// Most generate-verify rounds per question.
    #[arg(long, default_value_t = 8)]
    round_cap: u32,
    /// Treat UNKNOWN verdicts as failing citations.
    #[arg(long)]
    strict_unknown: bool,
    #[command(flatten)]
    settings: SettingsArgs,
}

/// Process entry point: parse, dispatch, map errors to exit code 2.
pub fn main() -> ExitCode {
    env_logger::init();
    let mut stdout = io::stdout().lock();
    match run(std::env::args_os(), &|key| std::env::var(key).ok(), &mut stdout) {
        Ok(code) => ExitCode::from(code),
        Err(error) if is_broken_pipe(&error) => ExitCode::from(0),
        Err(error) => {
            eprintln!("error: {error:#}");
            ExitCode::from(2)
        }
    }
}

/// True when the failure is the reader closing our stdout mid-stream, as
/// `urlhealth extract ... | head` does; that is not an error worth noise.
fn is_broken_pipe(error: &anyhow::Error) -> bool {
    error
        .chain()
        .filter_map(|cause| cause.downcast_ref::<io::Error>())
        .any(|io_error| io_error.kind() == io::ErrorKind::BrokenPipe)
}

/// Testable entry point with injectable arguments, environment, and output.
pub fn run<I, T>(
    args: I,
    env: &dyn Fn(&str) -> Option<String>,
    stdout: &mut dyn Write,
) -> anyhow::Result<u8>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let benign = matches!(
                err.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            err.print()?;
            return Ok(if benign { 0 } else { 2 });
        }
    };
    let file: Option<FileSettings> = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("could not read settings file {}", path.display()))?;
            Some(
                toml::from_str(&text)
                    .with_context(|| format!("invalid settings file {}", path.display()))?,
            )
        }
        None => None,
    };
    match cli.command {
        Command::Check(args) => cmd_check(args, file.as_ref(), env, stdout),
        Command::Extract(args) => cmd_extract(args, stdout),
        Command::Batch(args) => cmd_batch(args, file.as_ref(), env, stdout),
        Command::Report(args) => cmd_report(args, stdout),
        Command::Sensitivity(args) => cmd_sensitivity(args, stdout),
        Command::AuditSample(args) => cmd_audit_sample(args, stdout),
        Command::Selfcorrect(args) => cmd_selfcorrect(args, file.as_ref(), env, stdout),
    }
}

fn parse_labels(specs: &[String]) -> anyhow::Result<BTreeMap<String, String>> {
    specs
        .iter()
        .map(|spec| {
            spec.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| anyhow!("label {spec:?} is not NAME=VALUE"))
        })
        .collect()
}

fn verdict_passes_gate(verdict: &Verdict) -> bool {
    if verdict.pending {
        return false;
    }
    matches!(
        verdict.label,
        Some(VerdictLabel::Urlhealth(UrlhealthLabel::Live))
            | Some(VerdictLabel::Pipeline(
                PipelineLabel::Alive | PipelineLabel::ForcedAlive
            ))
    )
}

fn build_archive(settings: &Settings) -> anyhow::Result<ArchiveClient> {
    ArchiveClient::over_http(
        &settings.archive_endpoint,
        settings.archive_qps,
        &settings.probe.user_agent,
    )
    .map_err(|e| anyhow!("could not build archive client: {e}"))
}

fn cmd_check(
    args: CheckArgs,
    file: Option<&FileSettings>,
    env: &dyn Fn(&str) -> Option<String>,
    stdout: &mut dyn Write,
) -> anyhow::Result<u8> {
    let settings = resolve_settings(&args.settings, file, env)?;
    let mut raw = args.urls;
    if args.stdin {
        let mut buffer = String::new();
        io::stdin().read_to_string(&mut buffer)?;
        raw.extend(buffer.lines().map(str::to_string));
    }
    let mut urls: IndexSet<String> = IndexSet::new();
    for candidate in raw.iter().filter(|l| !l.trim().is_empty()) {
        urls.insert(normalize(candidate).map_err(|e| anyhow!("{e}"))?);
    }
    if urls.is_empty() {
        bail!("no URLs to check; pass them as arguments or via --stdin");
    }
    let urls: Vec<String> = urls.into_iter().collect();
    let prober = Prober::new(settings.probe.clone())?;
    let archive = build_archive(&settings)?;
    let policy = SpecialCasePolicy::default();
    let mut all_pass = true;
    for probe in prober.probe_batch(&urls, |_, _, _| {}) {
        let verdict = match args.mode {
            ModeArg::Urlhealth => classify_urlhealth(&probe, |u| archive.lookup(u)),
            ModeArg::Pipeline => classify_pipeline(&probe, |u| archive.lookup(u), &policy),
        };
        all_pass &= verdict_passes_gate(&verdict);
        writeln!(stdout, "{}", serde_json::to_string(&verdict)?)?;
    }
    Ok(if all_pass { 0 } else { 1 })
}

fn read_input(input: &str) -> anyhow::Result<String> {
    if input == "-" {
        let mut buffer = String::new();
        io::stdin().read_to_string(&mut buffer)?;
        Ok(buffer)
    } else {
        fs::read_to_string(input).with_context(|| format!("could not read {input}"))
    }
}

fn read_corpus(
    text: &str,
    source_id: Option<&str>,
    labels: &BTreeMap<String, String>,
) -> anyhow::Result<(Vec<UrlRecord>, Vec<CitationReject>)> {
    let first = text.lines().find(|line| !line.trim().is_empty());
    match first {
        Some(line) if line.trim_start().starts_with('{') => {
            let mut citations = Vec::new();
            for (number, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let citation: CitationRecord = serde_json::from_str(line)
                    .with_context(|| format!("line {}: invalid citation object", number + 1))?;
                citations.push(citation);
            }
            let extraction = extract_from_citations(&citations);
            Ok((extraction.records, extraction.rejects))
        }
        _ => Ok((extract_from_text(text, source_id, labels), Vec::new())),
    }
}

fn cmd_extract(args: ExtractArgs, stdout: &mut dyn Write) -> anyhow::Result<u8> {
    let labels = parse_labels(&args.labels)?;
    let text = read_input(&args.input)?;
    let (records, rejects) = read_corpus(&text, args.source_id.as_deref(), &labels)?;
    for record in &records {
        writeln!(stdout, "{}", serde_json::to_string(record)?)?;
    }
    for reject in &rejects {
        eprintln!("{}", serde_json::to_string(reject)?);
    }
    if !rejects.is_empty() {
        eprintln!("skipped {} citations with no http(s) URL", rejects.len());
    }
    Ok(0)
}

fn cmd_batch(
    args: BatchArgs,
    file: Option<&FileSettings>,
    env: &dyn Fn(&str) -> Option<String>,
    stdout: &mut dyn Write,
) -> anyhow::Result<u8> {
    let settings = resolve_settings(&args.settings, file, env)?;
    let modes: Vec<VerdictMode> = args
        .modes
        .iter()
        .map(|m| VerdictMode::from(*m))
        .collect::<IndexSet<VerdictMode>>()
        .into_iter()
        .collect();
    let snapshot = settings_snapshot(&settings, &modes);
    let mut ledger = if args.resume {
        RunLedger::open(&args.ledger, snapshot, args.force)?
    } else {
        RunLedger::create(&args.ledger, snapshot)?
    };

    let labels = parse_labels(&args.labels)?;
    let text = fs::read_to_string(&args.input)
        .with_context(|| format!("could not read {}", args.input.display()))?;
    let (records, rejects) = read_corpus(&text, args.source_id.as_deref(), &labels)?;
    if !rejects.is_empty() {
        eprintln!("skipped {} citations with no http(s) URL", rejects.len());
    }
    let records = dedup(records, DedupKey::NormalizedAndLabels);
    if records.is_empty() && ledger.records().count() == 0 {
        bail!("no URLs found in {}", args.input.display());
    }
    for record in &records {
        if !ledger.contains_record(record) {
            ledger.upsert_record(record)?;
        }
    }

    let urls: Vec<String> = ledger
        .records()
        .map(|r| r.normalized.clone())
        .collect::<IndexSet<String>>()
        .into_iter()
        .collect();
    let to_probe: Vec<String> = urls
        .iter()
        .filter(|u| ledger.probe_for(u).is_none())
        .cloned()
        .collect();
    if !to_probe.is_empty() {
        let prober = Prober::new(settings.probe.clone())?;
        let results = {
            let ledger_cell = Mutex::new(&mut ledger);
            prober.probe_batch(&to_probe, |done, total, result| {
                if let Ok(mut guard) = ledger_cell.lock() {
                    if guard.upsert_probe(result).is_err() {
                        log::warn!("could not record probe for {}", result.url);
                    }
                }
                log::info!("probed {done}/{total}: {}", result.url);
            })
        };
        for result in &results {
            if ledger.probe_for(&result.url).is_none() {
                ledger.upsert_probe(result)?;
            }
        }
    }

    let archive = build_archive(&settings)?;
    archive.prime(ledger.archives().cloned());
    let policy = SpecialCasePolicy::default();
    for url in &urls {
        if ledger.is_complete_for(url, &modes) {
            continue;
        }
        let Some(probe) = ledger.probe_for(url).cloned() else {
            continue;
        };
        let mut fresh: Vec<ArchiveResult> = Vec::new();
        for mode in &modes {
            if ledger.verdict_for(url, *mode).is_some_and(|v| !v.pending) {
                continue;
            }
            let verdict = match mode {
                VerdictMode::Urlhealth => classify_urlhealth(&probe, |u| {
                    let result = archive.lookup(u)?;
                    fresh.push(result.clone());
                    Ok(result)
                }),
                VerdictMode::Pipeline => classify_pipeline(
                    &probe,
                    |u| {
                        let result = archive.lookup(u)?;
                        fresh.push(result.clone());
                        Ok(result)
                    },
                    &policy,
                ),
            };
            ledger.upsert_verdict(&verdict)?;
        }
        for result in fresh {
            if ledger.archive_for(&result.url).is_none() {
                ledger.upsert_archive(&result)?;
            }
        }
    }

    let mut pending = 0usize;
    for url in &urls {
        for mode in &modes {
            if let Some(verdict) = ledger.verdict_for(url, *mode) {
                if verdict.pending {
                    pending += 1;
                }
                if !args.quiet {
                    writeln!(stdout, "{}", serde_json::to_string(verdict)?)?;
                }
            }
        }
    }
    if pending > 0 {
        eprintln!(
            "{pending} verdicts are pending on the archive; rerun with --resume to retry"
        );
        return Ok(1);
    }
    Ok(0)
}

fn cmd_report(args: ReportArgs, stdout: &mut dyn Write) -> anyhow::Result<u8> {
    let ledger = RunLedger::load(&args.ledger)?;
    let mode: VerdictMode = args
        .mode
        .map(VerdictMode::from)
        .unwrap_or(match args.layout {
            LayoutArg::Summary => VerdictMode::Urlhealth,
            _ => VerdictMode::Pipeline,
        });
    let items = ledger.joined(mode);
    if items.is_empty() {
        bail!(
            "ledger {} holds no verdicts for that regime",
            args.ledger.display()
        );
    }
    let rendered = match args.layout {
        LayoutArg::Summary => {
            if mode != VerdictMode::Urlhealth {
                bail!("the summary layout reads URLHEALTH verdicts");
            }
            let summary = urlhealth_summary(&items)?;
            render_summary(&summary, args.format.into())?
        }
        LayoutArg::PerModel | LayoutArg::Heatmap => {
            let stats = if args.ci {
                aggregate_with_ci(
                    &items,
                    &args.group_by,
                    &CiSpec {
                        level: args.level,
                        resamples: args.resamples,
                        seed: args.seed,
                    },
                )?
            } else {
                aggregate(&items, &args.group_by)?
            };
            let sort = match args.layout {
                LayoutArg::PerModel => GroupSort::HallucinatedAsc,
                _ => GroupSort::NonResolvingDesc,
            };
            render_groups(&stats, sort, args.format.into())?
        }
    };
    write!(stdout, "{rendered}")?;
    Ok(0)
}

fn cmd_sensitivity(args: SensitivityArgs, stdout: &mut dyn Write) -> anyhow::Result<u8> {
    let ledger = RunLedger::load(&args.ledger)?;
    let mut verdicts: Vec<Verdict> = ledger
        .joined(VerdictMode::Pipeline)
        .into_iter()
        .map(|(_, v)| v)
        .collect();
    if verdicts.is_empty() {
        verdicts = ledger
            .verdicts()
            .filter(|v| v.mode == VerdictMode::Pipeline)
            .cloned()
            .collect();
    }
    if verdicts.is_empty() {
        bail!(
            "ledger {} holds no pipeline verdicts",
            args.ledger.display()
        );
    }
    let counts = PipelineCounts::from_verdicts(&verdicts)?;
    let rows: Vec<ScenarioRates> = SensitivityScenario::ALL
        .iter()
        .map(|scenario| scenario_rates(&counts, *scenario))
        .collect();
    write!(stdout, "{}", render_sensitivity(&rows, args.format.into())?)?;
    Ok(0)
}

fn cmd_audit_sample(args: AuditArgs, stdout: &mut dyn Write) -> anyhow::Result<u8> {
    let ledger = RunLedger::load(&args.ledger)?;
    let mode = VerdictMode::from(args.mode);
    let items: Vec<(UrlRecord, Verdict)> = ledger
        .joined(mode)
        .into_iter()
        .filter(|(_, v)| v.label.map(|l| l.name()).as_deref() == Some(args.label.as_str()))
        .collect();
    if items.is_empty() {
        bail!(
            "ledger {} holds no {} verdicts to audit",
            args.ledger.display(),
            args.label
        );
    }
    let sample = stratified_sample(
        &items,
        &args.group_by,
        &|_, verdict| unknown_status_stratum(verdict),
        args.per_group,
        args.seed,
    )?;
    let rows: Vec<serde_json::Value> = sample
        .indices
        .iter()
        .map(|&index| {
            let (record, verdict) = &items[index];
            serde_json::json!({
                "url": record.normalized,
                "stratum": unknown_status_stratum(verdict),
                "labels": record.group_labels,
            })
        })
        .collect();
    match args.format {
        FormatArg::Json => {
            let body = serde_json::json!({
                "allocations": sample.allocations,
                "short_groups": sample.short_groups,
                "sample": rows,
            });
            writeln!(stdout, "{}", serde_json::to_string_pretty(&body)?)?;
        }
        FormatArg::Text => {
            write!(stdout, "{}", render_audit(&sample, ReportFormat::Text)?)?;
            for row in &rows {
                writeln!(
                    stdout,
                    "{}\t{}",
                    row["url"].as_str().unwrap_or_default(),
                    row["stratum"].as_str().unwrap_or_default()
                )?;
            }
        }
        FormatArg::Csv => {
            let mut writer = csv::Writer::from_writer(Vec::new());
            writer.write_record(["url", "stratum", "labels"])?;
            for row in &rows {
                writer.write_record([
                    row["url"].as_str().unwrap_or_default(),
                    row["stratum"].as_str().unwrap_or_default(),
                    &serde_json::to_string(&row["labels"])?,
                ])?;
            }
            let bytes = writer.into_inner().map_err(|e| anyhow!("{e}"))?;
            write!(stdout, "{}", String::from_utf8(bytes)?)?;
        }
    }
    Ok(0)
}

fn cmd_selfcorrect(
    args: SelfcorrectArgs,
    file: Option<&FileSettings>,
    env: &dyn Fn(&str) -> Option<String>,
    stdout: &mut dyn Write,
) -> anyhow::Result<u8> {
    let settings = resolve_settings(&args.settings, file, env)?;
    let script = fs::read_to_string(&args.script)
        .with_context(|| format!("could not read {}", args.script.display()))?;
    let mut generator = ScriptedGenerator::from_json(&script)?;
    let questions = if args.questions.is_empty() {
        generator.question_names()
    } else {
        args.questions.clone()
    };
    if questions.is_empty() {
        bail!("the script contains no questions");
    }
    let policy = LoopPolicy {
        round_cap: args.round_cap,
        strict_unknown: args.strict_unknown,
    };
    let prober = Prober::new(settings.probe.clone())?;
    let archive = build_archive(&settings)?;
    let mut verifier = tool_verifier(&prober, &archive);
    let report = run_questions(&mut generator, &mut verifier, &questions, &policy);
    writeln!(stdout, "{}", serde_json::to_string_pretty(&report)?)?;
    let converged =
        report.failures.is_empty() && report.runs.iter().all(|run| !run.stopped_by_cap);
    Ok(if converged { 0 } else { 1 })
}
