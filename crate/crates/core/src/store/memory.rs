use std::sync::{Arc, Mutex};

use super::{ResultSink, SinkAck, SinkKind, StoreError};
use crate::clock::Clock;
use crate::session::ResultEnvelope;

/// Keeps records in process memory.
pub struct MemorySink {
    records: Mutex<Vec<ResultEnvelope>>,
    clock: Arc<dyn Clock>,
}

impl MemorySink {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        MemorySink {
            records: Mutex::new(Vec::new()),
            clock,
        }
    }
}

impl ResultSink for MemorySink {
    fn kind(&self) -> SinkKind {
        SinkKind::Memory
    }

    fn append(&self, envelope: &ResultEnvelope) -> Result<SinkAck, StoreError> {
        self.records.lock().unwrap().push(envelope.clone());
        Ok(SinkAck {
            envelope_id: envelope.envelope_id.clone(),
            sink_kind: SinkKind::Memory,
            persisted_at: self.clock.now(),
            attempts: 1,
        })
    }

    fn snapshot(&self) -> Result<Vec<ResultEnvelope>, StoreError> {
        Ok(self.records.lock().unwrap().clone())
    }
}
