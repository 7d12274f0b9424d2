use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::file::append_line;
use super::{encode_record, read_records, ResultSink, SinkAck, SinkKind, StoreError};
use crate::clock::Clock;
use crate::session::ResultEnvelope;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles for each later one.
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_base_ms: 500,
        }
    }
}

impl RetryPolicy {
    pub fn delay_before(&self, attempt: u32) -> Duration {
        let exp = attempt.saturating_sub(2).min(16);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(1 << exp))
    }
}

/// Sends one record body. Returns the HTTP status, or an error string for
/// transport failures.
pub trait HttpTransport: Send + Sync {
    fn post(&self, url: &str, bearer: Option<&str>, body: &str) -> Result<u16, String>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new() -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        UreqTransport { agent }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl HttpTransport for UreqTransport {
    fn post(&self, url: &str, bearer: Option<&str>, body: &str) -> Result<u16, String> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(token) = bearer {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        req.send(body)
            .map(|resp| resp.status().as_u16())
            .map_err(|e| e.to_string())
    }
}

/// Posts each record to an HTTP endpoint. Records that cannot be delivered
/// within the retry policy are appended to a local outbox file.
pub struct HttpSink {
    endpoint: String,
    token: Option<String>,
    retry: RetryPolicy,
    outbox: PathBuf,
    transport: Box<dyn HttpTransport>,
    clock: Arc<dyn Clock>,
    lock: Mutex<()>,
}

impl HttpSink {
    pub fn new(
        endpoint: &str,
        token: Option<String>,
        retry: RetryPolicy,
        outbox: &Path,
        transport: Box<dyn HttpTransport>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        HttpSink {
            endpoint: endpoint.to_string(),
            token,
            retry,
            outbox: outbox.to_path_buf(),
            transport,
            clock,
            lock: Mutex::new(()),
        }
    }

    /// Tries every attempt the policy allows. Returns the attempt count of the
    /// successful post, or the count and last error.
    fn deliver(&self, body: &str) -> Result<u32, (u32, String)> {
        let attempts = self.retry.max_attempts.max(1);
        let mut last_error = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(self.retry.delay_before(attempt));
            }
            match self.transport.post(&self.endpoint, self.token.as_deref(), body) {
                Ok(status) if (200..300).contains(&status) => return Ok(attempt),
                Ok(status) => last_error = format!("HTTP {status}"),
                Err(e) => last_error = e,
            }
        }
        Err((attempts, last_error))
    }

    /// Envelopes waiting in the outbox.
    pub fn outbox_envelopes(&self) -> Result<Vec<ResultEnvelope>, StoreError> {
        read_records(&self.outbox)
    }

    /// Re-sends outboxed records; the ones that still fail stay parked.
    /// Returns how many were delivered.
    pub fn flush_outbox(&self) -> Result<usize, StoreError> {
        let _guard = self.lock.lock().unwrap();
        let pending = read_records(&self.outbox)?;
        if pending.is_empty() {
            return Ok(0);
        }
        let mut kept = String::new();
        let mut delivered = 0;
        for env in &pending {
            let mut line = encode_record(env);
            line.push('\n');
            if self.deliver(&line).is_ok() {
                delivered += 1;
            } else {
                kept.push_str(&line);
            }
        }
        let tmp = self.outbox.with_extension("tmp");
        std::fs::write(&tmp, kept).map_err(|e| StoreError::io(&tmp, e))?;
        std::fs::rename(&tmp, &self.outbox).map_err(|e| StoreError::io(&self.outbox, e))?;
        Ok(delivered)
    }
}

impl ResultSink for HttpSink {
    fn kind(&self) -> SinkKind {
        SinkKind::Http
    }

    fn append(&self, envelope: &ResultEnvelope) -> Result<SinkAck, StoreError> {
        let mut body = encode_record(envelope);
        body.push('\n');
        match self.deliver(&body) {
            Ok(attempts) => Ok(SinkAck {
                envelope_id: envelope.envelope_id.clone(),
                sink_kind: SinkKind::Http,
                persisted_at: self.clock.now(),
                attempts,
            }),
            Err((attempts, last_error)) => {
                let _guard = self.lock.lock().unwrap();
                append_line(&self.outbox, &body)?;
                Err(StoreError::Outboxed {
                    envelope_id: envelope.envelope_id.clone(),
                    attempts,
                    last_error,
                })
            }
        }
    }
}
