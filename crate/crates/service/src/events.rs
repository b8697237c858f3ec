use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictKind {
    Accept,
    Correct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictPayload {
    pub extraction_id: String,
    pub verdict: VerdictKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_label: Option<String>,
    pub reviewer_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferencePayload {
    /// Prediction source per attribute, e.g. `site -> model:site.contextfree`.
    pub sources: Vec<(String, String)>,
    pub n_items: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    Verdict(VerdictPayload),
    Inference(InferencePayload),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_id: String,
    /// RFC 3339, UTC.
    pub timestamp: String,
    #[serde(flatten)]
    pub body: EventBody,
}

/// Append-only line-delimited JSON log. Every append is flushed to disk
/// before it returns.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
    ids: HashSet<String>,
    len: usize,
}

impl EventLog {
    /// Opens (creating if needed) and reads back every event. A final line
    /// without its newline is a write cut short by a crash; it is dropped and
    /// the file truncated to the last complete event. Repeated event ids keep
    /// their first occurrence.
    pub fn open(path: &Path) -> ServiceResult<(Self, Vec<EventRecord>)> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| ServiceError::io(dir, e))?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)
            .map_err(|e| ServiceError::io(path, e))?;
        let mut events = Vec::new();
        let mut ids = HashSet::new();
        let mut good_len = 0u64;
        let mut torn = false;
        {
            let mut reader = BufReader::new(&mut file);
            reader.seek(SeekFrom::Start(0)).map_err(|e| ServiceError::io(path, e))?;
            let mut line = String::new();
            let mut n = 0;
            loop {
                line.clear();
                let read = reader.read_line(&mut line).map_err(|e| ServiceError::io(path, e))?;
                if read == 0 {
                    break;
                }
                n += 1;
                if !line.ends_with('\n') {
                    torn = true;
                    break;
                }
                if line.trim().is_empty() {
                    good_len += read as u64;
                    continue;
                }
                let record: EventRecord = serde_json::from_str(&line).map_err(|e| ServiceError::CorruptLog {
                    path: path.to_path_buf(),
                    line: n,
                    reason: e.to_string(),
                })?;
                good_len += read as u64;
                if ids.insert(record.event_id.clone()) {
                    events.push(record);
                } else {
                    log::warn!("{}: duplicate event id {} on line {n} ignored", path.display(), record.event_id);
                }
            }
        }
        if torn {
            log::warn!("{}: dropping incomplete final line", path.display());
            file.set_len(good_len).map_err(|e| ServiceError::io(path, e))?;
            file.sync_data().map_err(|e| ServiceError::io(path, e))?;
        }
        let len = events.len();
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
                ids,
                len,
            },
            events,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn contains(&self, event_id: &str) -> bool {
        self.ids.contains(event_id)
    }

    /// Events currently in the log.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Writes one event and syncs it. Returns `false` without writing when the
    /// id is already present.
    pub fn append(&mut self, record: &EventRecord) -> ServiceResult<bool> {
        if self.ids.contains(&record.event_id) {
            return Ok(false);
        }
        let mut line = serde_json::to_string(record).map_err(|e| ServiceError::Invalid(e.to_string()))?;
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(|e| ServiceError::io(&self.path, e))?;
        self.file.sync_data().map_err(|e| ServiceError::io(&self.path, e))?;
        self.ids.insert(record.event_id.clone());
        self.len += 1;
        Ok(true)
    }
}

/// Reads a log without opening it for writing or repairing it.
pub fn read_events(path: &Path) -> ServiceResult<Vec<EventRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| ServiceError::io(path, e))?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.split_inclusive('\n').enumerate() {
        if !line.ends_with('\n') || line.trim().is_empty() {
            continue;
        }
        let r: EventRecord = serde_json::from_str(line).map_err(|e| ServiceError::CorruptLog {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        if seen.insert(r.event_id.clone()) {
            out.push(r);
        }
    }
    Ok(out)
}
