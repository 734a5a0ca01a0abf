//! Append-only JSONL run ledger with crash-safe resume.
//!
//! Every record, probe outcome, archive lookup, and verdict is appended as
//! its own line and flushed, so a killed run loses at most the line being
//! written. Replaying the file rebuilds the run state; later lines win over
//! earlier ones for the same key, and corrupt lines (for example a truncated
//! tail) are skipped and counted rather than aborting the load.
//!
//! A `<ledger>.meta.json` sidecar pins the run id and a digest of the
//! configuration the run started with; resuming under a different
//! configuration is refused unless forced, naming the fields that differ.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::archive::ArchiveResult;
use crate::classify::{Verdict, VerdictMode};
use crate::extract::UrlRecord;
use crate::probe::ProbeResult;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("ledger io: {0}")]
    Io(#[from] std::io::Error),
    #[error("ledger encoding: {0}")]
    Json(#[from] serde_json::Error),
    #[error("ledger {path} has no meta sidecar; was it created by this tool?")]
    MissingMeta { path: String },
    #[error("ledger {path} already exists; resume it instead of starting over")]
    AlreadyExists { path: String },
    #[error(
        "run configuration differs from the ledger's (fields: {fields}); \
         rerun with the original settings or force the resume"
    )]
    ConfigMismatch { fields: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LedgerKind {
    Record,
    Probe,
    Archive,
    Verdict,
}

#[derive(Debug, Serialize, Deserialize)]
struct LedgerLine {
    kind: LedgerKind,
    key: String,
    payload: serde_json::Value,
    ts: DateTime<Utc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub config_digest: String,
    pub config: serde_json::Value,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

fn config_digest(config: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(config).unwrap_or_default();
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn differing_fields(a: &serde_json::Value, b: &serde_json::Value) -> Vec<String> {
    let empty = serde_json::Map::new();
    let map_a = a.as_object().unwrap_or(&empty);
    let map_b = b.as_object().unwrap_or(&empty);
    let keys: BTreeSet<&String> = map_a.keys().chain(map_b.keys()).collect();
    keys.into_iter()
        .filter(|k| map_a.get(*k) != map_b.get(*k))
        .cloned()
        .collect()
}

fn record_key(record: &UrlRecord) -> String {
    let mut key = record.normalized.clone();
    if let Some(source) = &record.source_id {
        key.push('\u{1f}');
        key.push_str("src=");
        key.push_str(source);
    }
    for (name, value) in &record.group_labels {
        key.push('\u{1f}');
        key.push_str(name);
        key.push('=');
        key.push_str(value);
    }
    key
}

fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

/// The in-memory view of one run, backed by an append-only file.
#[derive(Debug)]
pub struct RunLedger {
    path: PathBuf,
    file: File,
    meta: RunMeta,
    records: IndexMap<String, UrlRecord>,
    probes: IndexMap<String, ProbeResult>,
    archives: IndexMap<String, ArchiveResult>,
    verdicts: IndexMap<(String, VerdictMode), Verdict>,
    corrupt_lines: usize,
}

impl RunLedger {
    /// Start a fresh ledger. Refuses to clobber an existing one.
    pub fn create(path: &Path, config: serde_json::Value) -> Result<Self, StoreError> {
        if path.exists() {
            return Err(StoreError::AlreadyExists {
                path: path.display().to_string(),
            });
        }
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        let now = Utc::now();
        let meta = RunMeta {
            run_id: format!("{:032x}", rand::rng().random::<u128>()),
            config_digest: config_digest(&config),
            config,
            created_at: now,
            updated_at: now,
        };
        fs::write(meta_path(path), serde_json::to_vec_pretty(&meta)?)?;
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(RunLedger {
            path: path.to_path_buf(),
            file,
            meta,
            records: IndexMap::new(),
            probes: IndexMap::new(),
            archives: IndexMap::new(),
            verdicts: IndexMap::new(),
            corrupt_lines: 0,
        })
    }

    /// Resume an existing ledger, verifying the configuration digest.
    /// With `force`, a differing configuration replaces the recorded one.
    pub fn open(path: &Path, config: serde_json::Value, force: bool) -> Result<Self, StoreError> {
        let mut ledger = Self::load(path)?;
        if ledger.meta.config_digest != config_digest(&config) {
            if !force {
                let fields = differing_fields(&ledger.meta.config, &config);
                return Err(StoreError::ConfigMismatch {
                    fields: if fields.is_empty() {
                        "(structure)".to_string()
                    } else {
                        fields.join(", ")
                    },
                });
            }
            ledger.meta.config_digest = config_digest(&config);
            ledger.meta.config = config;
        }
        ledger.meta.updated_at = Utc::now();
        fs::write(meta_path(path), serde_json::to_vec_pretty(&ledger.meta)?)?;
        Ok(ledger)
    }

    /// Load a ledger for reading or further appends without touching or
    /// checking its recorded configuration.
    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let meta_file = meta_path(path);
        if !meta_file.exists() {
            return Err(StoreError::MissingMeta {
                path: path.display().to_string(),
            });
        }
        let meta: RunMeta = serde_json::from_slice(&fs::read(&meta_file)?)?;
        let mut ledger = RunLedger {
            path: path.to_path_buf(),
            file: OpenOptions::new().create(true).append(true).open(path)?,
            meta,
            records: IndexMap::new(),
            probes: IndexMap::new(),
            archives: IndexMap::new(),
            verdicts: IndexMap::new(),
            corrupt_lines: 0,
        };
        for line in BufReader::new(File::open(path)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if !ledger.apply_line(&line) {
                ledger.corrupt_lines += 1;
                log::warn!("skipping corrupt ledger line in {}", path.display());
            }
        }
        Ok(ledger)
    }

    fn apply_line(&mut self, line: &str) -> bool {
        let parsed: LedgerLine = match serde_json::from_str(line) {
            Ok(parsed) => parsed,
            Err(_) => return false,
        };
        match parsed.kind {
            LedgerKind::Record => match serde_json::from_value(parsed.payload) {
                Ok(record) => {
                    self.records.insert(parsed.key, record);
                    true
                }
                Err(_) => false,
            },
            LedgerKind::Probe => match serde_json::from_value(parsed.payload) {
                Ok(probe) => {
                    self.probes.insert(parsed.key, probe);
                    true
                }
                Err(_) => false,
            },
            LedgerKind::Archive => match serde_json::from_value(parsed.payload) {
                Ok(archive) => {
                    self.archives.insert(parsed.key, archive);
                    true
                }
                Err(_) => false,
            },
            LedgerKind::Verdict => match serde_json::from_value::<Verdict>(parsed.payload) {
                Ok(verdict) => {
                    self.verdicts.insert((parsed.key, verdict.mode), verdict);
                    true
                }
                Err(_) => false,
            },
        }
    }

    fn append(
        &mut self,
        kind: LedgerKind,
        key: &str,
        payload: serde_json::Value,
    ) -> Result<(), StoreError> {
        let line = LedgerLine {
            kind,
            key: key.to_string(),
            payload,
            ts: Utc::now(),
        };
        let mut encoded = serde_json::to_vec(&line)?;
        encoded.push(b'\n');
        self.file.write_all(&encoded)?;
        self.file.flush()?;
        Ok(())
    }

    pub fn upsert_record(&mut self, record: &UrlRecord) -> Result<(), StoreError> {
        let key = record_key(record);
        self.append(LedgerKind::Record, &key, serde_json::to_value(record)?)?;
        self.records.insert(key, record.clone());
        Ok(())
    }

    pub fn upsert_probe(&mut self, result: &ProbeResult) -> Result<(), StoreError> {
        self.append(LedgerKind::Probe, &result.url, serde_json::to_value(result)?)?;
        self.probes.insert(result.url.clone(), result.clone());
        Ok(())
    }

    pub fn upsert_archive(&mut self, result: &ArchiveResult) -> Result<(), StoreError> {
        self.append(
            LedgerKind::Archive,
            &result.url,
            serde_json::to_value(result)?,
        )?;
        self.archives.insert(result.url.clone(), result.clone());
        Ok(())
    }

    pub fn upsert_verdict(&mut self, verdict: &Verdict) -> Result<(), StoreError> {
        self.append(
            LedgerKind::Verdict,
            &verdict.url,
            serde_json::to_value(verdict)?,
        )?;
        self.verdicts
            .insert((verdict.url.clone(), verdict.mode), verdict.clone());
        Ok(())
    }

    pub fn records(&self) -> impl Iterator<Item = &UrlRecord> {
        self.records.values()
    }

    pub fn contains_record(&self, record: &UrlRecord) -> bool {
        self.records.contains_key(&record_key(record))
    }

    pub fn probe_for(&self, url: &str) -> Option<&ProbeResult> {
        self.probes.get(url)
    }

    pub fn archive_for(&self, url: &str) -> Option<&ArchiveResult> {
        self.archives.get(url)
    }

    pub fn archives(&self) -> impl Iterator<Item = &ArchiveResult> {
        self.archives.values()
    }

    pub fn verdict_for(&self, url: &str, mode: VerdictMode) -> Option<&Verdict> {
        self.verdicts.get(&(url.to_string(), mode))
    }

    pub fn verdicts(&self) -> impl Iterator<Item = &Verdict> {
        self.verdicts.values()
    }

    /// True when the URL holds a settled (non-pending) verdict for every
    /// requested mode, meaning a resume has nothing left to do for it.
    pub fn is_complete_for(&self, url: &str, modes: &[VerdictMode]) -> bool {
        modes.iter().all(|mode| {
            self.verdicts
                .get(&(url.to_string(), *mode))
                .is_some_and(|v| !v.pending)
        })
    }

    /// Records joined with their verdict under one mode, ready for
    /// aggregation. Records whose URL has no verdict yet are skipped.
    pub fn joined(&self, mode: VerdictMode) -> Vec<(UrlRecord, Verdict)> {
        self.records
            .values()
            .filter_map(|record| {
                self.verdicts
                    .get(&(record.normalized.clone(), mode))
                    .map(|verdict| (record.clone(), verdict.clone()))
            })
            .collect()
    }

    pub fn corrupt_lines(&self) -> usize {
        self.corrupt_lines
    }

    pub fn meta(&self) -> &RunMeta {
        &self.meta
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Rewrite the file keeping only the surviving entry per key, via a
    /// temporary file and rename so a crash never leaves a half ledger.
    pub fn compact(&mut self) -> Result<(), StoreError> {
        let tmp = self.path.with_extension("jsonl.tmp");
        {
            let mut out = File::create(&tmp)?;
            let now = Utc::now();
            let mut write = |kind: LedgerKind,
                             key: &str,
                             payload: serde_json::Value|
             -> Result<(), StoreError> {
                let mut encoded = serde_json::to_vec(&LedgerLine {
                    kind,
                    key: key.to_string(),
                    payload,
                    ts: now,
                })?;
                encoded.push(b'\n');
                out.write_all(&encoded)?;
                Ok(())
            };
            for (key, record) in &self.records {
                write(LedgerKind::Record, key, serde_json::to_value(record)?)?;
            }
            for (key, probe) in &self.probes {
                write(LedgerKind::Probe, key, serde_json::to_value(probe)?)?;
            }
            for (key, archive) in &self.archives {
                write(LedgerKind::Archive, key, serde_json::to_value(archive)?)?;
            }
            for ((key, _), verdict) in &self.verdicts {
                write(LedgerKind::Verdict, key, serde_json::to_value(verdict)?)?;
            }
            out.sync_all()?;
        }
        fs::rename(&tmp, &self.path)?;
        self.file = OpenOptions::new().append(true).open(&self.path)?;
        self.meta.updated_at = Utc::now();
        fs::write(meta_path(&self.path), serde_json::to_vec_pretty(&self.meta)?)?;
        self.corrupt_lines = 0;
        Ok(())
    }
}
