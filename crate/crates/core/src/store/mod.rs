//! Storage-agnostic result sinks.
//!
//! Every sink speaks the same record format: an envelope serialized as one
//! line of compact JSON. Appends are at-least-once, so the same envelope can
//! be stored more than once; [`export_results`] removes duplicates by
//! envelope id.

mod file;
mod http;
mod memory;

use std::path::PathBuf;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{millis, Clock};
use crate::session::ResultEnvelope;

pub use file::{FileSink, RotationPolicy};
pub use http::{HttpSink, HttpTransport, RetryPolicy, UreqTransport};
pub use memory::MemorySink;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: bad record: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("delivery of {envelope_id} failed after {attempts} attempts ({last_error}); parked in outbox")]
    Outboxed {
        envelope_id: String,
        attempts: u32,
        last_error: String,
    },
    #[error("{0} sinks cannot be read back")]
    Unreadable(SinkKind),
    #[error("environment variable {0} holding the sink token is not set")]
    MissingToken(String),
}

impl StoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StoreError::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SinkKind {
    File,
    Http,
    Memory,
}

impl std::fmt::Display for SinkKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SinkKind::File => "file",
            SinkKind::Http => "http",
            SinkKind::Memory => "memory",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SinkAck {
    pub envelope_id: String,
    pub sink_kind: SinkKind,
    #[serde(with = "millis")]
    pub persisted_at: DateTime<Utc>,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", rename_all_fields = "camelCase", deny_unknown_fields)]
pub enum SinkConfig {
    File {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rotation: Option<RotationPolicy>,
    },
    Http {
        endpoint: String,
        /// Name of the environment variable holding the bearer token.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        auth_token_env: Option<String>,
        #[serde(default)]
        retry: RetryPolicy,
        outbox_path: PathBuf,
    },
    Memory,
}

pub trait ResultSink: Send + Sync {
    fn kind(&self) -> SinkKind;

    fn append(&self, envelope: &ResultEnvelope) -> Result<SinkAck, StoreError>;

    /// Every stored record in storage order, duplicates included.
    fn snapshot(&self) -> Result<Vec<ResultEnvelope>, StoreError> {
        Err(StoreError::Unreadable(self.kind()))
    }
}

pub fn open_sink(config: &SinkConfig, clock: Arc<dyn Clock>) -> Result<Arc<dyn ResultSink>, StoreError> {
    Ok(match config {
        SinkConfig::File { path, rotation } => Arc::new(FileSink::new(path, *rotation, clock)),
        SinkConfig::Http {
            endpoint,
            auth_token_env,
            retry,
            outbox_path,
        } => {
            let token = match auth_token_env {
                Some(var) => Some(
                    std::env::var(var).map_err(|_| StoreError::MissingToken(var.clone()))?,
                ),
                None => None,
            };
            Arc::new(HttpSink::new(
                endpoint,
                token,
                *retry,
                outbox_path,
                Box::new(UreqTransport::new()),
                clock,
            ))
        }
        SinkConfig::Memory => Arc::new(MemorySink::new(clock)),
    })
}

/// The canonical record for an envelope, without the trailing newline.
pub fn encode_record(envelope: &ResultEnvelope) -> String {
    serde_json::to_string(envelope).expect("envelopes always serialize")
}

pub fn decode_record(line: &str) -> Result<ResultEnvelope, serde_json::Error> {
    serde_json::from_str(line)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExportFilter {
    pub study_id: Option<String>,
    pub participant_id: Option<String>,
    /// Inclusive lower bound on `completedAt`.
    pub from: Option<DateTime<Utc>>,
    /// Exclusive upper bound on `completedAt`.
    pub to: Option<DateTime<Utc>>,
}

impl ExportFilter {
    pub fn matches(&self, e: &ResultEnvelope) -> bool {
        self.study_id.as_ref().is_none_or(|s| &e.study_id == s)
            && self.participant_id.as_ref().is_none_or(|p| &e.participant_id == p)
            && self.from.is_none_or(|t| e.completed_at >= t)
            && self.to.is_none_or(|t| e.completed_at < t)
    }
}

/// Matching envelopes, one per envelope id, ordered by completion time then
/// envelope id.
pub fn export_results(sink: &dyn ResultSink, filter: &ExportFilter) -> Result<Vec<ResultEnvelope>, StoreError> {
    let mut seen = std::collections::HashSet::new();
    let mut out: Vec<ResultEnvelope> = sink
        .snapshot()?
        .into_iter()
        .filter(|e| filter.matches(e))
        .filter(|e| seen.insert(e.envelope_id.clone()))
        .collect();
    out.sort_by(|a, b| {
        a.completed_at
            .cmp(&b.completed_at)
            .then_with(|| a.envelope_id.cmp(&b.envelope_id))
    });
    Ok(out)
}

pub(crate) fn read_records(path: &std::path::Path) -> Result<Vec<ResultEnvelope>, StoreError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(StoreError::io(path, e)),
    };
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::with_capacity(lines.len());
    for (n, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match decode_record(line) {
            Ok(e) => out.push(e),
            // A torn final write from a crash is not a record yet.
            Err(_) if !complete && n + 1 == lines.len() => {}
            Err(e) => {
                return Err(StoreError::Corrupt {
                    path: path.to_path_buf(),
                    line: n + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}
