//! Append-only persistence. One JSON record per line; the in-memory
//! index is rebuilt from the file on open.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use forest_core::gateway::AlertEvent;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StoredRecord {
    Telemetry {
        seq: u64,
        received_ms: u64,
        /// Canonical wire form of the accepted message.
        wire: String,
    },
    Alert {
        seq: u64,
        received_ms: u64,
        id: u64,
        alert: AlertEvent,
    },
}

impl StoredRecord {
    pub fn seq(&self) -> u64 {
        match self {
            StoredRecord::Telemetry { seq, .. } | StoredRecord::Alert { seq, .. } => *seq,
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store {path}: line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("store i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub trait Store: Send {
    /// Every record persisted so far, oldest first.
    fn load(&mut self) -> Result<Vec<StoredRecord>, StoreError>;
    fn append(&mut self, record: &StoredRecord) -> Result<(), StoreError>;
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    records: Vec<StoredRecord>,
}

impl Store for MemoryStore {
    fn load(&mut self) -> Result<Vec<StoredRecord>, StoreError> {
        Ok(self.records.clone())
    }

    fn append(&mut self, record: &StoredRecord) -> Result<(), StoreError> {
        self.records.push(record.clone());
        Ok(())
    }
}

#[derive(Debug)]
pub struct JsonlStore {
    path: PathBuf,
    file: File,
}

impl JsonlStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).read(true).open(&path)?;
        Ok(Self { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Store for JsonlStore {
    fn load(&mut self) -> Result<Vec<StoredRecord>, StoreError> {
        let raw = std::fs::read(&self.path)?;
        let torn_tail = !raw.is_empty() && !raw.ends_with(b"\n");
        let text = String::from_utf8_lossy(&raw);
        let lines: Vec<&str> = text.lines().collect();
        let mut out = Vec::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(line) {
                Ok(r) => out.push(r),
                // A crash mid-write leaves an unterminated last line; drop it.
                Err(_) if torn_tail && i + 1 == lines.len() => {}
                Err(e) => {
                    return Err(StoreError::Corrupt {
                        path: self.path.clone(),
                        line: i + 1,
                        message: e.to_string(),
                    })
                }
            }
        }
        if torn_tail {
            let keep = raw.iter().rposition(|b| *b == b'\n').map_or(0, |p| p + 1);
            self.file.set_len(keep as u64)?;
        }
        Ok(out)
    }

    fn append(&mut self, record: &StoredRecord) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(record).expect("records serialize");
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()?;
        Ok(())
    }
}
