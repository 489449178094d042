//! Structured run log: one JSON event object per line, with per-stage
//! counters, so discard and filter accounting is auditable after the fact.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

pub struct EventLog {
    file: Option<Mutex<File>>,
}

impl EventLog {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            file: Some(Mutex::new(file)),
        })
    }

    /// A log that drops everything; used by one-shot subcommands.
    pub fn disabled() -> Self {
        Self { file: None }
    }

    pub fn emit(&self, stage: &str, event: &str, fields: serde_json::Value) {
        let Some(file) = &self.file else { return };
        let ts_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        let mut object = serde_json::json!({
            "ts_ms": ts_ms,
            "stage": stage,
            "event": event,
        });
        if let (Some(target), Some(extra)) = (object.as_object_mut(), fields.as_object()) {
            for (k, v) in extra {
                target.insert(k.clone(), v.clone());
            }
        }
        let mut file = file.lock().unwrap();
        let _ = writeln!(file, "{object}");
    }
}
