//! Transcript wrapper: one log line per logical request.
//!
//! Sits outside the cache, so cache hits are recorded too — the transcript's
//! length equals the number of logical requests the run made, and per-stage
//! call accounting can be audited from it after the fact.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{request_hash, ChatBackend, ChatRequest, Completion};
use crate::error::Result;

/// One transcript line.
#[derive(Debug, Serialize, Deserialize)]
pub struct TranscriptRecord {
    /// Seconds since the Unix epoch, with millisecond precision.
    pub timestamp: f64,
    pub route_key: String,
    pub request_hash: String,
    pub response_text: String,
    pub token_count: u32,
}

/// Wrapper that appends a [`TranscriptRecord`] for every successful
/// completion. Failed requests produce no record; they are tallied in the
/// iteration report instead.
pub struct TranscriptBackend {
    inner: Box<dyn ChatBackend>,
    writer: Mutex<BufWriter<File>>,
}

impl TranscriptBackend {
    /// Opens `path` in append mode (resumed runs keep one transcript).
    pub fn new(inner: Box<dyn ChatBackend>, path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(TranscriptBackend {
            inner,
            writer: Mutex::new(BufWriter::new(file)),
        })
    }
}

impl ChatBackend for TranscriptBackend {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<Completion> {
        let completion = self.inner.complete(request)?;
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| (d.as_millis() as f64) / 1000.0)
            .unwrap_or(0.0);
        let record = TranscriptRecord {
            timestamp,
            route_key: request.route.to_string(),
            request_hash: request_hash(request.messages, request.params),
            response_text: completion.text.clone(),
            token_count: completion.token_count().0,
        };
        {
            let mut writer = self.writer.lock().expect("transcript lock");
            serde_json::to_writer(&mut *writer, &record)?;
            writer.write_all(b"\n")?;
            writer.flush()?;
        }
        Ok(completion)
    }

    fn id(&self) -> String {
        self.inner.id()
    }
}

/// Reads a transcript back; used by tests and call-count audits.
pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptRecord>> {
    let content = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for line in content.lines() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(line)?);
    }
    Ok(records)
}
