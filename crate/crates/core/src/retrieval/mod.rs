//! Scoring and top-N selection over a [`Datastore`] for a [`TaskSpec`].
//!
//! Per cell, the query score is the mean cosine similarity between the cell
//! vector and every user-provided query embedding; the answer score is the
//! same over answer embeddings. A row's scores are the componentwise maxima
//! over its cells, its dataset score is the cosine between the dataset's
//! description embedding and the task-instruction embedding, and the final
//! ranking key is the arithmetic mean of the three.
//!
//! Determinism: reductions run in a fixed order per row, rows from excluded
//! sources are skipped before scoring, and ties on the final score break by
//! (dataset_id, config_name, row_num) ascending, so the result is identical
//! for any datastore insertion order and any thread count.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datastore::Datastore;
use crate::encoder::{EmbeddingVector, Encoder, EncoderError};
use crate::ingest::RowRecord;
use crate::source::SourceId;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("vector dims differ: {a} vs {b}")]
    DimMismatch { a: usize, b: usize },
    #[error("datastore dim {store} does not match encoder dim {encoder}")]
    StoreDimMismatch { store: usize, encoder: usize },
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
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

/// One user-provided few-shot example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub query: String,
    pub answer: String,
}

/// The user's task: instruction, few-shot examples, sources the retriever
/// must never return rows from, and the number of rows to retrieve.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub instruction: String,
    pub examples: Vec<FewShotExample>,
    #[serde(default)]
    pub exclusions: Vec<SourceId>,
    pub n: usize,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.examples.is_empty() {
            return Err(RetrievalError::InvalidTask(
                "at least one few-shot example is required".into(),
            ));
        }
        for (i, ex) in self.examples.iter().enumerate() {
            if ex.query.trim().is_empty() {
                return Err(RetrievalError::InvalidTask(format!(
                    "example {i} has an empty query"
                )));
            }
            if ex.answer.trim().is_empty() {
                return Err(RetrievalError::InvalidTask(format!(
                    "example {i} has an empty answer"
                )));
            }
        }
        if self.n == 0 {
            return Err(RetrievalError::InvalidTask("n must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self, RetrievalError> {
        let bytes = fs::read(path).map_err(|source| RetrievalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let task: TaskSpec =
            serde_json::from_slice(&bytes).map_err(|e| RetrievalError::InvalidTask(e.to_string()))?;
        Ok(task)
    }
}

/// The task's vectors, embedded once per retrieval run.
#[derive(Debug, Clone)]
pub struct EmbeddedTask {
    pub instruction: EmbeddingVector,
    pub queries: Vec<EmbeddingVector>,
    pub answers: Vec<EmbeddingVector>,
}

impl EmbeddedTask {
    pub fn dim(&self) -> usize {
        self.instruction.dim()
    }
}

/// Embeds the instruction and every example query/answer.
pub fn embed_task(task: &TaskSpec, encoder: &dyn Encoder) -> Result<EmbeddedTask, RetrievalError> {
    task.validate()?;
    let instruction = encoder.embed_text(&task.instruction)?;
    let mut texts: Vec<&str> = Vec::with_capacity(task.examples.len() * 2);
    for ex in &task.examples {
        texts.push(&ex.query);
        texts.push(&ex.answer);
    }
    let vectors = encoder.embed_batch(&texts)?;
    let mut queries = Vec::with_capacity(task.examples.len());
    let mut answers = Vec::with_capacity(task.examples.len());
    for pair in vectors.chunks_exact(2) {
        queries.push(pair[0].clone());
        answers.push(pair[1].clone());
    }
    Ok(EmbeddedTask {
        instruction,
        queries,
        answers,
    })
}

/// A retrieved row's scores. `s_final` is exactly the mean of the other
/// three (up to floating rounding).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRow {
    #[serde(flatten)]
    pub source: SourceId,
    pub row_num: u64,
    pub s_query: f64,
    pub s_ans: f64,
    pub s_dataset: f64,
    pub s_final: f64,
}

/// Cosine similarity in double precision: `dot(a,b) / (‖a‖‖b‖)`, defined as
/// 0 when either vector has zero norm.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, RetrievalError> {
    if a.dim() != b.dim() {
        return Err(RetrievalError::DimMismatch {
            a: a.dim(),
            b: b.dim(),
        });
    }
    Ok(cosine_slices(a.values(), b.values()))
}

fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += f64::from(*x) * f64::from(*y);
    }
    acc
}

fn norm_f64(a: &[f32]) -> f64 {
    dot_f64(a, a).sqrt()
}

fn cosine_slices(a: &[f32], b: &[f32]) -> f64 {
    let na = norm_f64(a);
    let nb = norm_f64(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot_f64(a, b) / (na * nb)
}

/// Mean cosine of `cell` against the task's query embeddings and against its
/// answer embeddings, accumulated in example order.
pub fn cell_scores(
    cell: &EmbeddingVector,
    task: &EmbeddedTask,
) -> Result<(f64, f64), RetrievalError> {
    if cell.dim() != task.dim() {
        return Err(RetrievalError::DimMismatch {
            a: cell.dim(),
            b: task.dim(),
        });
    }
    let mut q_sum = 0.0;
    for q in &task.queries {
        q_sum += cosine_slices(q.values(), cell.values());
    }
    let mut a_sum = 0.0;
    for a in &task.answers {
        a_sum += cosine_slices(a.values(), cell.values());
    }
    Ok((
        q_sum / task.queries.len() as f64,
        a_sum / task.answers.len() as f64,
    ))
}

/// Componentwise maximum over a row's per-cell scores; the query and answer
/// maxima may come from different columns. `None` for rows with no encoded
/// cells (such rows are unscorable and ineligible).
pub fn row_scores(cell_scores: &[(f64, f64)]) -> Option<(f64, f64)> {
    cell_scores.iter().copied().reduce(|(q1, a1), (q2, a2)| {
        (if q2 > q1 { q2 } else { q1 }, if a2 > a1 { a2 } else { a1 })
    })
}

/// Cosine between a dataset's description embedding and the task-instruction
/// embedding. Empty-description datasets carry the all-zero vector and score 0.
pub fn dataset_score(
    meta_vector: &EmbeddingVector,
    instruction_vector: &EmbeddingVector,
) -> Result<f64, RetrievalError> {
    cosine(meta_vector, instruction_vector)
}

/// Scores every eligible row and returns the top `task.n`, sorted by
/// `s_final` descending with key-ascending tie-breaks. Rows from excluded
/// sources never appear. Returned rows are the full original records.
pub fn retrieve_top_n(
    store: &Datastore,
    task: &TaskSpec,
    encoder: &dyn Encoder,
) -> Result<Vec<(ScoredRow, RowRecord)>, RetrievalError> {
    task.validate()?;
    if store.dim() != encoder.dim() {
        return Err(RetrievalError::StoreDimMismatch {
            store: store.dim(),
            encoder: encoder.dim(),
        });
    }
    let embedded = embed_task(task, encoder)?;
    let excluded: HashSet<&SourceId> = task.exclusions.iter().collect();

    let mut dataset_scores: HashMap<&SourceId, f64> = HashMap::new();
    let mut source_keys: Vec<SourceId> = Vec::new();
    for dataset in store.datasets() {
        source_keys.push(dataset.meta.source());
    }
    for (dataset, source) in store.datasets().iter().zip(&source_keys) {
        if excluded.contains(source) {
            continue;
        }
        dataset_scores.insert(source, dataset_score(&dataset.vector, &embedded.instruction)?);
    }

    // Cells are sorted by key, so each row is one contiguous run.
    let cells = store.cells();
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for i in 1..=cells.len() {
        let run_ends = i == cells.len() || {
            let a = &cells[i - 1].key;
            let b = &cells[i].key;
            a.source != b.source || a.row_num != b.row_num
        };
        if run_ends {
            if i > start {
                runs.push((start, i));
            }
            start = i;
        }
    }

    let mut scored: Vec<ScoredRow> = runs
        .par_iter()
        .filter_map(|&(lo, hi)| {
            let key = &cells[lo].key;
            if excluded.contains(&key.source) {
                return None;
            }
            let s_dataset = *dataset_scores.get(&key.source)?;
            let mut per_cell = Vec::with_capacity(hi - lo);
            for cell in &cells[lo..hi] {
                // Dims were validated store-wide; unwrap is fine here.
                per_cell.push(cell_scores(&cell.vector, &embedded).expect("validated dims"));
            }
            let (s_query, s_ans) = row_scores(&per_cell)?;
            let s_final = (s_query + s_ans + s_dataset) / 3.0;
            Some(ScoredRow {
                source: key.source.clone(),
                row_num: key.row_num,
                s_query,
                s_ans,
                s_dataset,
                s_final,
            })
        })
        .collect();

    scored.sort_unstable_by(|a, b| {
        b.s_final
            .partial_cmp(&a.s_final)
            .expect("finite scores")
            .then_with(|| a.source.cmp(&b.source))
            .then_with(|| a.row_num.cmp(&b.row_num))
    });

    if scored.len() < task.n {
        log::warn!(
            "requested top-{} but only {} scorable rows are available",
            task.n,
            scored.len()
        );
    }
    scored.truncate(task.n);

    Ok(scored
        .into_iter()
        .map(|s| {
            let row = store
                .row(&crate::source::RowKey::new(s.source.clone(), s.row_num))
                .expect("scored row exists")
                .clone();
            (s, row)
        })
        .collect())
}

/// One line of `retrieved.jsonl`: scores plus the full original columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedRow {
    #[serde(flatten)]
    pub scored: ScoredRow,
    pub columns: IndexMap<String, String>,
}

impl RetrievedRow {
    pub fn row_record(&self) -> RowRecord {
        RowRecord {
            dataset_id: self.scored.source.dataset_id.clone(),
            config_name: self.scored.source.config_name.clone(),
            row_num: self.scored.row_num,
            columns: self.columns.clone(),
        }
    }
}

/// Writes retrieval results as JSONL, one object per row.
pub fn write_retrieved_jsonl(
    path: &Path,
    results: &[(ScoredRow, RowRecord)],
) -> Result<(), RetrievalError> {
    let io = |source| RetrievalError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    for (scored, row) in results {
        let line = RetrievedRow {
            scored: scored.clone(),
            columns: row.columns.clone(),
        };
        let json = serde_json::to_string(&line).expect("line serializes");
        writeln!(out, "{json}").map_err(io)?;
    }
    out.flush().map_err(io)?;
    Ok(())
}

pub fn read_retrieved_jsonl(path: &Path) -> Result<Vec<RetrievedRow>, RetrievalError> {
    let file = fs::File::open(path).map_err(|source| RetrievalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| RetrievalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let row: RetrievedRow =
            serde_json::from_str(&line).map_err(|e| RetrievalError::BadLine {
                path: path.to_path_buf(),
                line: idx + 1,
                detail: e.to_string(),
            })?;
        rows.push(row);
    }
    Ok(rows)
}
