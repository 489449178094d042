//! Fetches dataset rows and descriptions from a registry HTTP API or local
//! directories and normalizes them into [`RowRecord`]s.
//!
//! Every cell value is stored as a string. Non-string source values are
//! stringified at ingestion: scalars via canonical decimal / lowercase
//! boolean text, composites via compact JSON text, and `null` as the empty
//! string (empty cells are stored but never encoded).

pub mod local;
pub mod registry;

pub use local::{load_local, save_local};
pub use registry::{RegistryClient, RegistryConfig};

use std::path::PathBuf;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::source::{RowKey, SourceId};

/// Cells longer than this many characters are truncated before encoding;
/// the stored row always keeps the full value.
pub const DEFAULT_MAX_CELL_CHARS: usize = 2000;

#[derive(Debug, Error)]
pub enum IngestError {
    /// Transport-level failure talking to the registry; retryable.
    #[error("registry request failed: {detail}")]
    Network { detail: String },
    #[error("dataset {dataset} not found in registry")]
    UnknownDataset { dataset: SourceId },
    #[error("registry returned a malformed payload: {detail}")]
    MalformedPayload { detail: String },
    #[error("invalid registry configuration: {0}")]
    Config(String),
    #[error("missing meta.json in dataset directory {path}")]
    MissingMeta { path: PathBuf },
    #[error("invalid meta.json at {path}: {detail}")]
    BadMeta { path: PathBuf, detail: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl IngestError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, IngestError::Network { .. })
    }
}

/// Identity and description of one ingested dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub dataset_id: String,
    #[serde(default)]
    pub config_name: String,
    /// May be empty, never absent.
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub row_count: u64,
}

impl DatasetMeta {
    pub fn source(&self) -> SourceId {
        SourceId::new(self.dataset_id.clone(), self.config_name.clone())
    }
}

/// One normalized dataset row: an ordered map of column name → string value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowRecord {
    pub dataset_id: String,
    #[serde(default)]
    pub config_name: String,
    pub row_num: u64,
    pub columns: IndexMap<String, String>,
}

impl RowRecord {
    pub fn source(&self) -> SourceId {
        SourceId::new(self.dataset_id.clone(), self.config_name.clone())
    }

    pub fn key(&self) -> RowKey {
        RowKey::new(self.source(), self.row_num)
    }
}

/// A row the ingester could not parse, with its position in the source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedRow {
    /// Line number (local files) or served index (registry), zero-based.
    pub index: u64,
    pub reason: String,
}

/// Result of ingesting one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutcome {
    pub meta: DatasetMeta,
    pub rows: Vec<RowRecord>,
    pub skipped: Vec<SkippedRow>,
}

/// Canonical string form of one JSON cell value.
pub fn stringify_value(value: &serde_json::Value) -> String {
    use serde_json::Value;
    match value {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => n.to_string(),
        Value::Array(_) | Value::Object(_) => value.to_string(),
    }
}

/// Converts a flat JSON object into an ordered column map, stringifying
/// every value. Returns `None` for non-object payloads.
pub fn columns_from_value(value: &serde_json::Value) -> Option<IndexMap<String, String>> {
    let obj = value.as_object()?;
    let mut columns = IndexMap::with_capacity(obj.len());
    for (name, v) in obj {
        columns.insert(name.clone(), stringify_value(v));
    }
    Some(columns)
}

/// Truncates at a character boundary; used on cell text before encoding.
pub fn truncate_chars(text: &str, max_chars: usize) -> &str {
    match text.char_indices().nth(max_chars) {
        Some((byte_idx, _)) => &text[..byte_idx],
        None => text,
    }
}
