//! Append-only JSON-lines audit log.
//!
//! Each line is one [`AuditEvent`]. Sequence numbers start at 1 and rise by
//! one; every event carries the sha256 of its payload so a replay can tell
//! an edited line from an intact one.

use super::AppError;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditKind {
    RunStarted,
    CandidateDecided,
    TicketCreated,
    VerdictApplied,
    RunFinalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    pub kind: AuditKind,
    pub payload: serde_json::Value,
    pub payload_digest: String,
}

pub(crate) fn payload_digest(payload: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(payload).expect("json value serializes")))
}

#[derive(Debug)]
pub struct AuditLog {
    path: PathBuf,
    file: File,
    last_seq: u64,
}

impl AuditLog {
    /// Opens (or creates) the log and returns it with every intact event.
    ///
    /// A final line without its newline is what an interrupted append
    /// leaves behind; it is cut off with a warning. Any other bad line is
    /// an error.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Vec<AuditEvent>), AppError> {
        let path = path.as_ref().to_path_buf();
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(e.into()),
        };
        let complete = text.rfind('\n').map_or(0, |i| i + 1);
        if complete < text.len() {
            log::warn!(
                "{}: dropping {} bytes of a partially written event",
                path.display(),
                text.len() - complete
            );
        }
        let mut events = Vec::new();
        for (i, line) in text[..complete].lines().enumerate() {
            let line_no = i + 1;
            let corrupt = |reason: String| AppError::CorruptLog { line: line_no, reason };
            let ev: AuditEvent = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
            let expected = events.last().map_or(1, |p: &AuditEvent| p.seq + 1);
            if ev.seq != expected {
                return Err(corrupt(format!("sequence {} where {expected} was expected", ev.seq)));
            }
            if payload_digest(&ev.payload) != ev.payload_digest {
                return Err(corrupt("payload digest mismatch".into()));
            }
            events.push(ev);
        }
        if complete < text.len() {
            let f = OpenOptions::new().write(true).open(&path)?;
            f.set_len(complete as u64)?;
            f.sync_all()?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        let last_seq = events.last().map_or(0, |e| e.seq);
        Ok((Self { path, file, last_seq }, events))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    /// Appends events in order and syncs once. Either the whole batch's
    /// bytes are handed to the OS or an error is returned.
    pub fn append(&mut self, items: Vec<(AuditKind, serde_json::Value)>) -> Result<Vec<AuditEvent>, AppError> {
        let now = Utc::now();
        let mut seq = self.last_seq;
        let events: Vec<AuditEvent> = items
            .into_iter()
            .map(|(kind, payload)| {
                seq += 1;
                AuditEvent {
                    seq,
                    timestamp: now,
                    kind,
                    payload_digest: payload_digest(&payload),
                    payload,
                }
            })
            .collect();
        let mut w = BufWriter::new(&self.file);
        for e in &events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        drop(w);
        self.file.sync_data()?;
        self.last_seq = seq;
        Ok(events)
    }
}
