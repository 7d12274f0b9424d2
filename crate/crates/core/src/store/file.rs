use std::fs::{self, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{encode_record, read_records, ResultSink, SinkAck, SinkKind, StoreError};
use crate::clock::Clock;
use crate::session::ResultEnvelope;

/// Roll the active file over to `<path>.<n>` before it would grow past
/// `max_bytes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RotationPolicy {
    pub max_bytes: u64,
}

/// Newline-delimited records appended to a local file.
pub struct FileSink {
    path: PathBuf,
    rotation: Option<RotationPolicy>,
    lock: Mutex<()>,
    clock: Arc<dyn Clock>,
}

impl FileSink {
    pub fn new(path: impl Into<PathBuf>, rotation: Option<RotationPolicy>, clock: Arc<dyn Clock>) -> Self {
        FileSink {
            path: path.into(),
            rotation,
            lock: Mutex::new(()),
            clock,
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Rotated segments in order, oldest first.
    pub fn segments(&self) -> Result<Vec<PathBuf>, StoreError> {
        let mut numbered = self.rotated()?;
        numbered.sort();
        Ok(numbered
            .into_iter()
            .map(|(_, p)| p)
            .chain(std::iter::once(self.path.clone()))
            .collect())
    }

    fn rotated(&self) -> Result<Vec<(u64, PathBuf)>, StoreError> {
        let dir = match self.path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let Some(name) = self.path.file_name().and_then(|n| n.to_str()) else {
            return Ok(Vec::new());
        };
        let prefix = format!("{name}.");
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(StoreError::io(&dir, e)),
        };
        let mut out = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| StoreError::io(&dir, e))?;
            let file_name = entry.file_name();
            let Some(rest) = file_name.to_str().and_then(|f| f.strip_prefix(&prefix)) else {
                continue;
            };
            if let Ok(n) = rest.parse::<u64>() {
                out.push((n, entry.path()));
            }
        }
        Ok(out)
    }

    fn rotate_if_needed(&self, incoming: u64) -> Result<(), StoreError> {
        let Some(policy) = self.rotation else {
            return Ok(());
        };
        let len = match fs::metadata(&self.path) {
            Ok(m) => m.len(),
            Err(_) => return Ok(()),
        };
        if len == 0 || len + incoming <= policy.max_bytes {
            return Ok(());
        }
        let next = self.rotated()?.iter().map(|(n, _)| *n).max().unwrap_or(0) + 1;
        let target = PathBuf::from(format!("{}.{next}", self.path.display()));
        fs::rename(&self.path, &target).map_err(|e| StoreError::io(&self.path, e))
    }
}

impl ResultSink for FileSink {
    fn kind(&self) -> SinkKind {
        SinkKind::File
    }

    fn append(&self, envelope: &ResultEnvelope) -> Result<SinkAck, StoreError> {
        let _guard = self.lock.lock().unwrap();
        let mut line = encode_record(envelope);
        line.push('\n');
        self.rotate_if_needed(line.len() as u64)?;
        append_line(&self.path, &line)?;
        Ok(SinkAck {
            envelope_id: envelope.envelope_id.clone(),
            sink_kind: SinkKind::File,
            persisted_at: self.clock.now(),
            attempts: 1,
        })
    }

    fn snapshot(&self) -> Result<Vec<ResultEnvelope>, StoreError> {
        let _guard = self.lock.lock().unwrap();
        let mut out = Vec::new();
        for seg in self.segments()? {
            out.extend(read_records(&seg)?);
        }
        Ok(out)
    }
}

/// Appends one newline-terminated line and syncs it. A torn last line left
/// by an earlier crash was never acknowledged, so it is cut off first.
pub(crate) fn append_line(path: &Path, line: &str) -> Result<(), StoreError> {
    let io = |e| StoreError::io(path, e);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut f = OpenOptions::new()
        .read(true)
        .append(true)
        .create(true)
        .open(path)
        .map_err(io)?;
    let len = f.metadata().map_err(io)?.len();
    let keep = complete_prefix_len(&mut f, len).map_err(io)?;
    if keep < len {
        f.set_len(keep).map_err(io)?;
    }
    f.write_all(line.as_bytes()).map_err(io)?;
    f.sync_data().map_err(io)
}

/// Length of the file up to and including its last newline.
fn complete_prefix_len(f: &mut fs::File, len: u64) -> std::io::Result<u64> {
    const CHUNK: u64 = 8192;
    let mut end = len;
    let mut buf = vec![0u8; CHUNK as usize];
    while end > 0 {
        let start = end.saturating_sub(CHUNK);
        let chunk = &mut buf[..(end - start) as usize];
        f.seek(SeekFrom::Start(start))?;
        f.read_exact(chunk)?;
        if let Some(i) = chunk.iter().rposition(|b| *b == b'\n') {
            return Ok(start + i as u64 + 1);
        }
        end = start;
    }
    Ok(0)
}
