use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Session, SessionContext};
use crate::protocol::{decode_payload, ErrorCode, OpenSessionRequest, OPEN_SESSION};

/// One line of `events.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub index: u64,
    pub timestamp_ms: u64,
    pub kind: String,
    pub payload: Value,
    /// `None` when the request succeeded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorCode>,
}

/// Append-only, totally ordered request log.
pub struct EventLog {
    file: File,
    path: PathBuf,
    next: u64,
}

impl EventLog {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        Ok(Self {
            file,
            path: path.to_path_buf(),
            next: 0,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, kind: &str, payload: &Value, error: Option<ErrorCode>) -> std::io::Result<()> {
        let record = EventRecord {
            index: self.next,
            timestamp_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
            kind: kind.to_string(),
            payload: payload.clone(),
            error,
        };
        let mut line = serde_json::to_string(&record).expect("event serializes");
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        self.next += 1;
        Ok(())
    }
}

pub fn read_events(path: &Path) -> std::io::Result<Vec<EventRecord>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?,
        );
    }
    Ok(out)
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("cannot read event log: {0}")]
    Io(#[from] std::io::Error),
    #[error("event log must start with open_session")]
    MissingOpen,
    #[error("event {index} ({kind}) recorded {recorded:?} but replay gave {replayed:?}")]
    Diverged {
        index: u64,
        kind: String,
        recorded: Option<ErrorCode>,
        replayed: Option<ErrorCode>,
    },
    #[error("{0}")]
    Protocol(#[from] crate::protocol::ProtocolError),
}

/// Rebuilds a session from its log in a fresh session named `id` under
/// `ctx.data_dir`. Each event must reproduce its recorded outcome.
pub fn replay(ctx: Arc<SessionContext>, events: &Path, id: &str) -> Result<Session, ReplayError> {
    let records = read_events(events)?;
    let (first, rest) = records.split_first().ok_or(ReplayError::MissingOpen)?;
    if first.kind != OPEN_SESSION {
        return Err(ReplayError::MissingOpen);
    }
    let request: OpenSessionRequest = decode_payload(&first.payload)?;
    let (mut session, _) = Session::open(ctx, id, &request)?;
    for rec in rest {
        let outcome = session.handle(&rec.kind, &rec.payload, &mut |_, _| {});
        let replayed = outcome.err().map(|e| e.code);
        if replayed != rec.error {
            return Err(ReplayError::Diverged {
                index: rec.index,
                kind: rec.kind.clone(),
                recorded: rec.error,
                replayed,
            });
        }
    }
    Ok(session)
}
