//! Liveness probing: HEAD with GET fallback, bounded concurrency, and
//! per-host politeness caps.

use std::collections::{HashMap, VecDeque};
use std::error::Error as StdError;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use reqwest::blocking::Client;
use reqwest::Method;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// HEAD statuses that trigger a GET retry; some hosts reject or mishandle HEAD.
pub const GET_FALLBACK_STATUSES: [u16; 3] = [405, 403, 501];

const DEFAULT_USER_AGENT: &str = "Mozilla/5.0 (Windows NT 10.0; Win64; x64) \
     AppleWebKit/537.36 (KHTML, like Gecko) Chrome/124.0.0.0 Safari/537.36";

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("failed to build HTTP client: {0}")]
    Client(#[from] reqwest::Error),
}

/// Why a probe produced no HTTP status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeErrorKind {
    DnsFailure,
    ConnectFailure,
    TlsFailure,
    Timeout,
    RedirectLoop,
    ProtocolError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbeMethod {
    #[serde(rename = "HEAD")]
    Head,
    #[serde(rename = "GET")]
    Get,
}

/// Outcome of probing one URL. Exactly one of `status` and `error_kind` is set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeResult {
    pub url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_kind: Option<ProbeErrorKind>,
    pub method_used: ProbeMethod,
    pub fallback_applied: bool,
    /// URL after following redirects; the input URL when nothing was followed.
    pub final_url: String,
    /// Wall time for the probe, retries included, in seconds.
    #[serde(with = "duration_secs")]
    pub elapsed: Duration,
    pub checked_at: DateTime<Utc>,
    pub attempts: u32,
}

impl ProbeResult {
    /// Exactly one of status/error_kind is populated.
    pub fn is_well_formed(&self) -> bool {
        self.status.is_some() != self.error_kind.is_some() && self.attempts >= 1
    }
}

pub(crate) mod duration_secs {
    use super::Duration;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Ok(Duration::from_secs_f64(secs.max(0.0)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    #[serde(with = "duration_secs")]
    pub connect_timeout: Duration,
    #[serde(with = "duration_secs")]
    pub total_timeout: Duration,
    pub max_redirects: u32,
    /// Global worker cap for `probe_batch`.
    pub workers: usize,
    /// In-flight request cap per host.
    pub per_host_max_inflight: usize,
    /// How many times a 429 is retried before being reported.
    pub retry_on_429: u32,
    /// Base delay for the exponential 429 backoff.
    #[serde(with = "duration_secs")]
    pub retry_backoff: Duration,
    pub user_agent: String,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            connect_timeout: Duration::from_secs(15),
            total_timeout: Duration::from_secs(30),
            max_redirects: 10,
            workers: 60,
            per_host_max_inflight: 4,
            retry_on_429: 2,
            retry_backoff: Duration::from_secs(2),
            user_agent: DEFAULT_USER_AGENT.to_string(),
        }
    }
}

/// A reusable probing client.
pub struct Prober {
    client: Client,
    config: ProbeConfig,
}

impl Prober {
    pub fn new(config: ProbeConfig) -> Result<Self, ProbeError> {
        let client = Client::builder()
            .user_agent(config.user_agent.clone())
            .connect_timeout(config.connect_timeout)
            .timeout(config.total_timeout)
            .redirect(reqwest::redirect::Policy::limited(
                config.max_redirects as usize,
            ))
            .build()?;
        Ok(Prober { client, config })
    }

    pub fn config(&self) -> &ProbeConfig {
        &self.config
    }

    /// Probe a single URL: HEAD first, GET when the HEAD status is one of
    /// [`GET_FALLBACK_STATUSES`], with 429 retries around the whole exchange.
    pub fn probe_one(&self, url: &str) -> ProbeResult {
        let started = Instant::now();
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            let attempt = self.attempt(url);
            if attempt.status == Some(429) && attempts <= self.config.retry_on_429 {
                let backoff = self.config.retry_backoff * 2u32.saturating_pow(attempts - 1);
                std::thread::sleep(backoff);
                continue;
            }
            return ProbeResult {
                url: url.to_string(),
                status: attempt.status,
                error_kind: attempt.error_kind,
                method_used: attempt.method,
                fallback_applied: attempt.fallback,
                final_url: attempt.final_url,
                elapsed: started.elapsed(),
                checked_at: Utc::now(),
                attempts,
            };
        }
    }

    /// Probe many URLs with bounded global and per-host concurrency.
    ///
    /// Results come back aligned with the input order. `progress` runs once
    /// per completed URL with (done, total, result).
    pub fn probe_batch<F>(&self, urls: &[String], progress: F) -> Vec<ProbeResult>
    where
        F: Fn(usize, usize, &ProbeResult) + Sync,
    {
        run_pool(
            urls,
            self.config.workers,
            self.config.per_host_max_inflight,
            |url| self.probe_one(url),
            progress,
        )
    }

    fn attempt(&self, url: &str) -> Attempt {
        match self.send(Method::HEAD, url) {
            Ok(head) => {
                if GET_FALLBACK_STATUSES.contains(&head.status) {
                    match self.send(Method::GET, url) {
                        Ok(get) => Attempt {
                            status: Some(get.status),
                            error_kind: None,
                            method: ProbeMethod::Get,
                            fallback: true,
                            final_url: get.final_url,
                        },
                        Err(kind) => Attempt {
                            status: None,
                            error_kind: Some(kind),
                            method: ProbeMethod::Get,
                            fallback: true,
                            final_url: url.to_string(),
                        },
                    }
                } else {
                    Attempt {
                        status: Some(head.status),
                        error_kind: None,
                        method: ProbeMethod::Head,
                        fallback: false,
                        final_url: head.final_url,
                    }
                }
            }
            Err(kind) => Attempt {
                status: None,
                error_kind: Some(kind),
                method: ProbeMethod::Head,
                fallback: false,
                final_url: url.to_string(),
            },
        }
    }

    fn send(&self, method: Method, url: &str) -> Result<Exchange, ProbeErrorKind> {
        match self.client.request(method, url).send() {
            Ok(resp) => Ok(Exchange {
                status: resp.status().as_u16(),
                final_url: resp.url().to_string(),
            }),
            Err(err) => Err(classify_reqwest_error(&err)),
        }
    }
}

struct Exchange {
    status: u16,
    final_url: String,
}

struct Attempt {
    status: Option<u16>,
    error_kind: Option<ProbeErrorKind>,
    method: ProbeMethod,
    fallback: bool,
    final_url: String,
}

fn classify_reqwest_error(err: &reqwest::Error) -> ProbeErrorKind {
    let mut chain = Vec::new();
    chain.push(err.to_string().to_lowercase());
    let mut source = err.source();
    while let Some(cause) = source {
        chain.push(cause.to_string().to_lowercase());
        source = cause.source();
    }
    kind_from_error_shape(err.is_timeout(), err.is_redirect(), err.is_connect(), &chain)
}

/// Map reqwest's error predicates plus the display chain to a probe error kind.
fn kind_from_error_shape(
    is_timeout: bool,
    is_redirect: bool,
    is_connect: bool,
    chain: &[String],
) -> ProbeErrorKind {
    let mentions = |needles: &[&str]| {
        chain
            .iter()
            .any(|line| needles.iter().any(|n| line.contains(n)))
    };
    if is_timeout {
        ProbeErrorKind::Timeout
    } else if is_redirect {
        ProbeErrorKind::RedirectLoop
    } else if is_connect {
        if mentions(&["dns", "resolve", "name or service not known", "lookup"]) {
            ProbeErrorKind::DnsFailure
        } else if mentions(&["tls", "ssl", "certificate", "handshake"]) {
            ProbeErrorKind::TlsFailure
        } else {
            ProbeErrorKind::ConnectFailure
        }
    } else if mentions(&["tls", "ssl", "certificate"]) {
        ProbeErrorKind::TlsFailure
    } else {
        ProbeErrorKind::ProtocolError
    }
}

/// Lowercased host used for politeness bookkeeping.
fn host_key(url: &str) -> String {
    url::Url::parse(url)
        .ok()
        .and_then(|u| u.host_str().map(|h| h.to_lowercase()))
        .unwrap_or_else(|| url.to_string())
}

struct Sched {
    queue: VecDeque<usize>,
    inflight: HashMap<String, usize>,
}

/// Shared worker pool: global `workers` cap, `per_host` in-flight cap, and
/// input-order results.
fn run_pool<P, F>(
    urls: &[String],
    workers: usize,
    per_host: usize,
    probe: P,
    progress: F,
) -> Vec<ProbeResult>
where
    P: Fn(&str) -> ProbeResult + Sync,
    F: Fn(usize, usize, &ProbeResult) + Sync,
{
    if urls.is_empty() {
        return Vec::new();
    }
    let workers = workers.clamp(1, urls.len());
    let per_host = per_host.max(1);
    let hosts: Vec<String> = urls.iter().map(|u| host_key(u)).collect();
    let state = Mutex::new(Sched {
        queue: (0..urls.len()).collect(),
        inflight: HashMap::new(),
    });
    let ready = Condvar::new();
    let slots: Vec<Mutex<Option<ProbeResult>>> = urls.iter().map(|_| Mutex::new(None)).collect();
    let done = Mutex::new(0usize);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = {
                    let mut sched = state.lock().unwrap();
                    loop {
                        if sched.queue.is_empty() {
                            return;
                        }
                        let eligible = sched.queue.iter().position(|&i| {
                            sched.inflight.get(&hosts[i]).copied().unwrap_or(0) < per_host
                        });
                        if let Some(pos) = eligible {
                            let i = sched.queue.remove(pos).unwrap();
                            *sched.inflight.entry(hosts[i].clone()).or_insert(0) += 1;
                            break i;
                        }
                        sched = ready.wait(sched).unwrap();
                    }
                };
                let result = probe(&urls[index]);
                {
                    let mut sched = state.lock().unwrap();
                    if let Some(n) = sched.inflight.get_mut(&hosts[index]) {
                        *n = n.saturating_sub(1);
                    }
                }
                ready.notify_all();
                let completed = {
                    let mut d = done.lock().unwrap();
                    *d += 1;
                    *d
                };
                progress(completed, urls.len(), &result);
                *slots[index].lock().unwrap() = Some(result);
            });
        }
    });

    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("worker filled every slot"))
        .collect()
}
