//! Wayback Machine availability lookups with caching and rate limiting.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Availability API endpoint queried with `?url=<target>`.
pub const DEFAULT_AVAILABILITY_ENDPOINT: &str = "https://archive.org/wayback/available";

/// Default request rate against the availability API.
pub const DEFAULT_ARCHIVE_QPS: f64 = 1.0;

/// What the archive knows about one URL.
///
/// `snapshot_exists` is true only when both the snapshot URL and its
/// timestamp came back; a failed lookup is an error, never a "no".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveResult {
    pub url: String,
    pub snapshot_exists: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closest_timestamp: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_url: Option<String>,
    pub queried_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Error)]
pub enum ArchiveError {
    #[error("availability lookup failed for {url}: {reason}")]
    Unavailable { url: String, reason: String },
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("availability endpoint returned status {0}")]
    Status(u16),
    #[error("network error: {0}")]
    Network(String),
}

/// Transport behind the availability client; swap in a mock for tests.
pub trait AvailabilityTransport: Send + Sync {
    /// Fetch the raw availability JSON for `url`.
    fn fetch(&self, url: &str) -> Result<String, TransportError>;
}

/// Real transport against the availability HTTP API, with short retries on
/// transient failures.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    endpoint: String,
    retries: u32,
    retry_delay: Duration,
}

impl HttpTransport {
    pub fn new(endpoint: &str, user_agent: &str) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .user_agent(user_agent.to_string())
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        Ok(HttpTransport {
            client,
            endpoint: endpoint.to_string(),
            retries: 2,
            retry_delay: Duration::from_millis(500),
        })
    }
}

impl AvailabilityTransport for HttpTransport {
    fn fetch(&self, url: &str) -> Result<String, TransportError> {
        let mut last = TransportError::Network("no attempt made".into());
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(self.retry_delay);
            }
            let response = self
                .client
                .get(&self.endpoint)
                .query(&[("url", url)])
                .send();
            match response {
                Ok(resp) if resp.status().is_success() => {
                    return resp
                        .text()
                        .map_err(|e| TransportError::Network(e.to_string()));
                }
                Ok(resp) => last = TransportError::Status(resp.status().as_u16()),
                Err(err) => last = TransportError::Network(err.to_string()),
            }
        }
        Err(last)
    }
}

#[derive(Deserialize)]
struct AvailabilityBody {
    #[serde(default)]
    archived_snapshots: SnapshotsBody,
}

#[derive(Deserialize, Default)]
struct SnapshotsBody {
    closest: Option<ClosestBody>,
}

#[derive(Deserialize)]
struct ClosestBody {
    #[serde(default)]
    available: bool,
    timestamp: Option<String>,
    url: Option<String>,
}

/// Cached, rate-limited availability client.
///
/// Cache hits cost nothing; misses are serialized behind a gate that
/// enforces the configured queries-per-second budget.
pub struct ArchiveClient {
    transport: Box<dyn AvailabilityTransport>,
    min_interval: Duration,
    cache: Mutex<HashMap<String, ArchiveResult>>,
    gate: Mutex<Option<Instant>>,
}

impl ArchiveClient {
    pub fn new(transport: Box<dyn AvailabilityTransport>, qps: f64) -> Self {
        let min_interval = if qps > 0.0 {
            Duration::from_secs_f64(1.0 / qps)
        } else {
            Duration::ZERO
        };
        ArchiveClient {
            transport,
            min_interval,
            cache: Mutex::new(HashMap::new()),
            gate: Mutex::new(None),
        }
    }

    /// Client against the real availability endpoint.
    pub fn over_http(endpoint: &str, qps: f64, user_agent: &str) -> Result<Self, TransportError> {
        Ok(Self::new(Box::new(HttpTransport::new(endpoint, user_agent)?), qps))
    }

    /// Preload cache entries, typically replayed from a run ledger.
    pub fn prime<I: IntoIterator<Item = ArchiveResult>>(&self, results: I) {
        let mut cache = self.cache.lock().unwrap();
        for result in results {
            cache.insert(result.url.clone(), result);
        }
    }

    pub fn cached(&self, url: &str) -> Option<ArchiveResult> {
        self.cache.lock().unwrap().get(url).cloned()
    }

    /// Look up one URL, consulting the cache first.
    pub fn lookup(&self, url: &str) -> Result<ArchiveResult, ArchiveError> {
        if let Some(hit) = self.cached(url) {
            return Ok(hit);
        }
        let body = {
            let mut gate = self.gate.lock().unwrap();
            if let Some(last) = *gate {
                let next_allowed = last + self.min_interval;
                let now = Instant::now();
                if next_allowed > now {
                    std::thread::sleep(next_allowed - now);
                }
            }
            let fetched = self.transport.fetch(url);
            *gate = Some(Instant::now());
            fetched
        }
        .map_err(|e| ArchiveError::Unavailable {
            url: url.to_string(),
            reason: e.to_string(),
        })?;
        let result = parse_availability(url, &body).map_err(|reason| {
            ArchiveError::Unavailable {
                url: url.to_string(),
                reason,
            }
        })?;
        self.cache
            .lock()
            .unwrap()
            .insert(url.to_string(), result.clone());
        Ok(result)
    }

    /// Look up many URLs; order preserved, per-URL failures isolated.
    pub fn lookup_batch(&self, urls: &[String]) -> Vec<Result<ArchiveResult, ArchiveError>> {
        urls.iter().map(|u| self.lookup(u)).collect()
    }
}

fn parse_availability(url: &str, body: &str) -> Result<ArchiveResult, String> {
    let parsed: AvailabilityBody =
        serde_json::from_str(body).map_err(|e| format!("malformed availability JSON: {e}"))?;
    let closest = parsed.archived_snapshots.closest;
    let (exists, timestamp, snapshot_url) = match closest {
        Some(c) if c.available && c.timestamp.is_some() && c.url.is_some() => {
            (true, c.timestamp, c.url)
        }
        _ => (false, None, None),
    };
    Ok(ArchiveResult {
        url: url.to_string(),
        snapshot_exists: exists,
        closest_timestamp: timestamp,
        snapshot_url,
        queried_at: Utc::now(),
    })
}
