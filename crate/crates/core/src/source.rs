//! Identity types shared across the pipeline.

use std::fmt;

use serde::{Deserialize, Serialize};

/// One dataset under one registry config. Datasets served under several
/// configs count as distinct sources everywhere: datastore stats, retrieval
/// exclusions, and diversity source counting all key on this pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SourceId {
    pub dataset_id: String,
    #[serde(default)]
    pub config_name: String,
}

impl SourceId {
    pub fn new(dataset_id: impl Into<String>, config_name: impl Into<String>) -> Self {
        Self {
            dataset_id: dataset_id.into(),
            config_name: config_name.into(),
        }
    }
}

impl fmt::Display for SourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.config_name.is_empty() {
            write!(f, "{}", self.dataset_id)
        } else {
            write!(f, "{}/{}", self.dataset_id, self.config_name)
        }
    }
}

/// Address of one stored row within a datastore.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RowKey {
    pub source: SourceId,
    pub row_num: u64,
}

impl RowKey {
    pub fn new(source: SourceId, row_num: u64) -> Self {
        Self { source, row_num }
    }
}

impl fmt::Display for RowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.source, self.row_num)
    }
}
