//! `dataset.jsonl` export: one `{input, output, source, cot}` object per
//! line, directly consumable by a finetuning harness.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{RowSource, TransformedExample};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad line {line} in {path}: {detail}")]
    BadLine {
        path: PathBuf,
        line: usize,
        detail: String,
    },
}

/// One line of `dataset.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetLine {
    pub input: String,
    pub output: String,
    pub source: RowSource,
    pub cot: bool,
}

impl From<&TransformedExample> for DatasetLine {
    fn from(example: &TransformedExample) -> Self {
        Self {
            input: example.input.clone(),
            output: example.output.clone(),
            source: example.source.clone(),
            cot: example.cot,
        }
    }
}

pub fn write_dataset_jsonl(
    path: &Path,
    examples: &[TransformedExample],
) -> Result<(), ExportError> {
    let io = |source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    for example in examples {
        let line = serde_json::to_string(&DatasetLine::from(example)).expect("line serializes");
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)?;
    Ok(())
}

pub fn read_dataset_jsonl(path: &Path) -> Result<Vec<DatasetLine>, ExportError> {
    let file = fs::File::open(path).map_err(|source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| ExportError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: DatasetLine =
            serde_json::from_str(&line).map_err(|e| ExportError::BadLine {
                path: path.to_path_buf(),
                line: idx + 1,
                detail: e.to_string(),
            })?;
        lines.push(parsed);
    }
    Ok(lines)
}
