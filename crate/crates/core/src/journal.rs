//! Append-only JSON-lines journal for server restart recovery.
//!
//! Every state change in [`Keystore`](crate::keystore::Keystore) and
//! [`Broker`](crate::broker::Broker) is expressed as a [`JournalEvent`];
//! the live path appends the event and then applies it, and recovery
//! applies the same events in order.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::broker::BrokerTask;
use crate::crypto::{Fingerprint, RevocationCertificate};
use crate::error::{MegError, Result};
use crate::keystore::{PublicKeyRecord, RevocationRequest};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum JournalEvent {
    DeviceRegistered { device_id: Uuid },
    Paired { device_id: Uuid, client_id: Uuid },
    KeyUploaded { record: PublicKeyRecord, cert: RevocationCertificate },
    RevocationRequested { request: RevocationRequest },
    KeyRevoked { token: String, fingerprint: Fingerprint },
    TaskUpserted { task: BrokerTask },
    TaskRemoved { task_id: Uuid },
}

pub trait JournalSink: Send + Sync + fmt::Debug {
    fn append(&self, event: &JournalEvent) -> Result<()>;
}

#[derive(Debug)]
pub struct FileJournal {
    path: PathBuf,
    file: Mutex<File>,
}

impl FileJournal {
    /// Opens (creating if needed) a journal and returns the events already in it.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Vec<JournalEvent>)> {
        let path = path.as_ref().to_path_buf();
        let events = if path.exists() { read_events(&path)? } else { Vec::new() };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| MegError::Internal(format!("open journal {}: {e}", path.display())))?;
        Ok((Self { path, file: Mutex::new(file) }, events))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl JournalSink for FileJournal {
    fn append(&self, event: &JournalEvent) -> Result<()> {
        let mut line = serde_json::to_string(event).expect("journal event serializes");
        line.push('\n');
        let mut file = self.file.lock().unwrap();
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| MegError::Internal(format!("journal write: {e}")))
    }
}

pub fn read_events(path: &Path) -> Result<Vec<JournalEvent>> {
    let text = std::fs::read_to_string(path).map_err(|e| MegError::Internal(format!("read journal: {e}")))?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut events = Vec::with_capacity(lines.len());
    for (n, line) in lines.iter().enumerate() {
        match serde_json::from_str(line) {
            Ok(ev) => events.push(ev),
            // A torn final line from a crash mid-write is dropped.
            Err(_) if n + 1 == lines.len() => break,
            Err(e) => return Err(MegError::Parse(format!("journal line {}: {e}", n + 1))),
        }
    }
    Ok(events)
}

/// In-memory journal; keeps the serialized lines so tests can scan them.
#[derive(Debug, Default)]
pub struct MemoryJournal {
    lines: Mutex<Vec<String>>,
}

impl MemoryJournal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contents(&self) -> String {
        self.lines.lock().unwrap().join("\n")
    }

    pub fn events(&self) -> Vec<JournalEvent> {
        self.lines
            .lock()
            .unwrap()
            .iter()
            .map(|l| serde_json::from_str(l).expect("journal line parses"))
            .collect()
    }
}

impl JournalSink for MemoryJournal {
    fn append(&self, event: &JournalEvent) -> Result<()> {
        let line = serde_json::to_string(event).expect("journal event serializes");
        self.lines.lock().unwrap().push(line);
        Ok(())
    }
}
