//! Append-only JSONL run ledger: one line per task state transition.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEvent {
    pub ts_ms: u64,
    pub task_id: String,
    pub old_state: String,
    pub new_state: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reason: Option<String>,
}

pub struct EventLog {
    out: BufWriter<File>,
}

impl EventLog {
    /// Open (or create) the ledger file in append mode.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(EventLog { out: BufWriter::new(file) })
    }

    pub fn record(
        &mut self,
        task_id: &str,
        old_state: &str,
        new_state: &str,
        reason: Option<&str>,
    ) -> std::io::Result<()> {
        let ts_ms =
            SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0);
        let event = LedgerEvent {
            ts_ms,
            task_id: task_id.to_string(),
            old_state: old_state.to_string(),
            new_state: new_state.to_string(),
            reason: reason.map(|r| r.to_string()),
        };
        serde_json::to_writer(&mut self.out, &event)?;
        writeln!(self.out)?;
        self.out.flush()
    }
}

/// Read a ledger back; used by `status`/`wait` to observe a detached run.
pub fn read_ledger(path: &Path) -> std::io::Result<Vec<LedgerEvent>> {
    let file = File::open(path)?;
    let mut events = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(ev) => events.push(ev),
            Err(e) => {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("bad ledger line: {e}"),
                ))
            }
        }
    }
    Ok(events)
}
