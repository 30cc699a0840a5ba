use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::QueryError;

/// One provider attempt. Image payloads are summarised, never stored, and
/// credentials are never recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub timestamp_ms: u128,
    pub provider_id: String,
    pub endpoint: String,
    pub template_id: String,
    pub attempt: u32,
    pub prompt: String,
    pub attachments: Vec<String>,
    pub status: Option<u16>,
    pub outcome: String,
    pub latency_ms: u128,
    pub response: Option<String>,
}

impl AuditRecord {
    pub fn now_ms() -> u128 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0)
    }
}

/// Append-only JSON Lines log shared by concurrent requests.
#[derive(Debug)]
pub struct AuditLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl AuditLog {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, QueryError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| QueryError::Audit {
                path: path.display().to_string(),
                source,
            })?;
        Ok(Self {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, record: &AuditRecord) -> Result<(), QueryError> {
        let mut line = serde_json::to_string(record).expect("audit records serialise");
        line.push('\n');
        let mut file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        file.write_all(line.as_bytes())
            .and_then(|()| file.flush())
            .map_err(|source| QueryError::Audit {
                path: self.path.display().to_string(),
                source,
            })
    }
}
