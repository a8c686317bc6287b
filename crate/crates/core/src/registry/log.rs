//! Append-only JSON-lines record of every registry state change.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::records::{VersionRecord, Visibility};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    ModelCreated {
        slug: String,
        owner: String,
        visibility: Visibility,
        at: DateTime<Utc>,
    },
    /// A version id was handed to a pending publish; ids are never reused
    /// even when that publish is abandoned.
    VersionAllocated { slug: String, version_id: u64 },
    VersionFinalized { slug: String, record: VersionRecord },
    LivePromoted { slug: String, version_id: u64 },
}

pub struct EventLog {
    path: PathBuf,
    file: File,
}

impl EventLog {
    /// Opens (creating if needed) and returns the events recorded so far.
    /// A torn final line from an interrupted append is dropped.
    pub fn open(path: impl Into<PathBuf>) -> io::Result<(Self, Vec<LogEvent>)> {
        let path = path.into();
        let mut events = Vec::new();
        let mut valid_len = 0u64;
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for line in reader.split(b'\n') {
                let line = line?;
                match serde_json::from_slice::<LogEvent>(&line) {
                    Ok(ev) => {
                        events.push(ev);
                        valid_len += line.len() as u64 + 1;
                    }
                    Err(_) if line.iter().all(u8::is_ascii_whitespace) => valid_len += line.len() as u64 + 1,
                    Err(e) => {
                        tracing::warn!(path = %path.display(), error = %e, "dropping unreadable registry log tail");
                        break;
                    }
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        if file.metadata()?.len() > valid_len {
            file.set_len(valid_len)?;
        }
        Ok((EventLog { path, file }, events))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, event: &LogEvent) -> io::Result<()> {
        let mut line = serde_json::to_vec(event).map_err(io::Error::other)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()
    }
}
