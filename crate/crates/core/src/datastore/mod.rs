//! The keyed collection of cell embeddings and dataset-description
//! embeddings, plus the raw rows they came from.
//!
//! A datastore is immutable after build. Cells are kept sorted by
//! [`CellKey`] and datasets by source pair, so the persisted artifact is
//! identical no matter how the build was parallelized or ordered.

pub mod format;

pub use format::{load, persist};

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

use crate::encoder::{EmbeddingVector, Encoder, EncoderError};
use crate::ingest::{truncate_chars, DatasetMeta, RowRecord, DEFAULT_MAX_CELL_CHARS};
use crate::source::{RowKey, SourceId};

#[derive(Debug, Error)]
pub enum StoreError {
    /// Duplicate keys indicate an ingestion bug, never resolved last-wins.
    #[error("duplicate cell key {key}")]
    DuplicateKey { key: CellKey },
    #[error("duplicate row {key}")]
    DuplicateRow { key: RowKey },
    #[error("encoder failed after {cells_completed} cells encoded: {source}")]
    Encoder {
        cells_completed: usize,
        #[source]
        source: EncoderError,
    },
    #[error("cell {key} references a dataset missing from the store")]
    OrphanCell { key: CellKey },
    #[error("cell {key} references a missing row or column")]
    MissingRow { key: CellKey },
    #[error("vector of dim {got} in a store of dim {want}")]
    DimMismatch { want: usize, got: usize },
    #[error("row {key} belongs to a dataset missing from the store")]
    OrphanRow { key: RowKey },
    #[error("store file is corrupt: {detail}")]
    Corrupt { detail: String },
    #[error("store file version {got} is not supported (expected {want})")]
    Version { want: u32, got: u32 },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Unique address of one encoded cell: dataset, config, row, column.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub source: SourceId,
    pub row_num: u64,
    pub col_name: String,
}

impl CellKey {
    pub fn new(source: SourceId, row_num: u64, col_name: impl Into<String>) -> Self {
        Self {
            source,
            row_num,
            col_name: col_name.into(),
        }
    }

    pub fn row_key(&self) -> RowKey {
        RowKey::new(self.source.clone(), self.row_num)
    }
}

impl std::fmt::Display for CellKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}#{}.{}", self.source, self.row_num, self.col_name)
    }
}

/// One encoded cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellEntry {
    pub key: CellKey,
    pub vector: EmbeddingVector,
}

/// One dataset's identity plus its encoded description (all-zero when the
/// description is empty).
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub meta: DatasetMeta,
    pub vector: EmbeddingVector,
}

/// Immutable store of cell vectors, dataset vectors, and full rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Datastore {
    dim: usize,
    cells: Vec<CellEntry>,
    datasets: Vec<DatasetEntry>,
    rows: BTreeMap<RowKey, RowRecord>,
}

/// Summary counts; datasets are counted as (dataset, config) pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StoreStats {
    pub n_datasets: usize,
    pub n_rows: usize,
    pub n_cells: usize,
    pub dim: usize,
}

impl Datastore {
    /// Assembles a store from parts, sorting into canonical order and
    /// checking every invariant: unique cell keys, vector widths, and
    /// referential integrity from cells to datasets, rows, and columns.
    pub fn from_parts(
        dim: usize,
        mut cells: Vec<CellEntry>,
        mut datasets: Vec<DatasetEntry>,
        rows: Vec<RowRecord>,
    ) -> Result<Self, StoreError> {
        cells.sort_by(|a, b| a.key.cmp(&b.key));
        datasets.sort_by_key(|d| d.meta.source());

        let mut row_map = BTreeMap::new();
        for row in rows {
            let key = row.key();
            if row_map.insert(key.clone(), row).is_some() {
                return Err(StoreError::DuplicateRow { key });
            }
        }

        let sources: BTreeSet<SourceId> = datasets.iter().map(|d| d.meta.source()).collect();
        for dataset in &datasets {
            if dataset.vector.dim() != dim {
                return Err(StoreError::DimMismatch {
                    want: dim,
                    got: dataset.vector.dim(),
                });
            }
        }
        for key in row_map.keys() {
            if !sources.contains(&key.source) {
                return Err(StoreError::OrphanRow { key: key.clone() });
            }
        }
        for pair in cells.windows(2) {
            if pair[0].key == pair[1].key {
                return Err(StoreError::DuplicateKey {
                    key: pair[0].key.clone(),
                });
            }
        }
        for cell in &cells {
            if cell.vector.dim() != dim {
                return Err(StoreError::DimMismatch {
                    want: dim,
                    got: cell.vector.dim(),
                });
            }
            if !sources.contains(&cell.key.source) {
                return Err(StoreError::OrphanCell {
                    key: cell.key.clone(),
                });
            }
            match row_map.get(&cell.key.row_key()) {
                Some(row) if row.columns.contains_key(&cell.key.col_name) => {}
                _ => return Err(StoreError::MissingRow {
                    key: cell.key.clone(),
                }),
            }
        }

        Ok(Self {
            dim,
            cells,
            datasets,
            rows: row_map,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cells in canonical (sorted-key) order.
    pub fn cells(&self) -> &[CellEntry] {
        &self.cells
    }

    /// Datasets in canonical (sorted source) order.
    pub fn datasets(&self) -> &[DatasetEntry] {
        &self.datasets
    }

    pub fn rows(&self) -> impl Iterator<Item = &RowRecord> {
        self.rows.values()
    }

    pub fn row(&self, key: &RowKey) -> Option<&RowRecord> {
        self.rows.get(key)
    }

    pub fn stats(&self) -> StoreStats {
        StoreStats {
            n_datasets: self.datasets.len(),
            n_rows: self.rows.len(),
            n_cells: self.cells.len(),
            dim: self.dim,
        }
    }
}

/// Build-time knobs.
#[derive(Debug, Clone)]
pub struct BuildOptions {
    /// Cell text is truncated to this many characters before encoding; the
    /// stored row keeps the full value.
    pub max_cell_chars: usize,
    /// When set, encoded cell vectors are checkpointed here so an aborted
    /// build can resume without re-encoding. Removed on success.
    pub checkpoint: Option<PathBuf>,
    /// Cells per encoder batch (also the checkpoint granularity).
    pub encode_batch: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            max_cell_chars: DEFAULT_MAX_CELL_CHARS,
            checkpoint: None,
            encode_batch: 256,
        }
    }
}

/// Builds a datastore: one [`CellEntry`] per non-empty cell, one description
/// vector per dataset (all-zero for empty descriptions), and every row
/// retained in full. Deterministic for a fixed encoder.
pub fn build(
    inputs: &[(DatasetMeta, Vec<RowRecord>)],
    encoder: &dyn Encoder,
    opts: &BuildOptions,
) -> Result<Datastore, StoreError> {
    let dim = encoder.dim();

    // Gather encode jobs in canonical order and check key uniqueness early.
    let mut jobs: Vec<(CellKey, &str)> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut rows = Vec::new();
    for (meta, dataset_rows) in inputs {
        let source = meta.source();
        let mut ordered: Vec<&RowRecord> = dataset_rows.iter().collect();
        ordered.sort_by_key(|r| r.row_num);
        for row in ordered {
            for (col_name, value) in &row.columns {
                if value.is_empty() {
                    continue;
                }
                let key = CellKey::new(source.clone(), row.row_num, col_name.clone());
                if !seen.insert(key.clone()) {
                    return Err(StoreError::DuplicateKey { key });
                }
                jobs.push((key, truncate_chars(value, opts.max_cell_chars)));
            }
        }
        rows.extend(dataset_rows.iter().cloned());
    }

    let mut checkpoint = match &opts.checkpoint {
        Some(path) => Some(format::Checkpoint::open(path, dim)?),
        None => None,
    };
    let mut done: BTreeMap<CellKey, EmbeddingVector> = match &checkpoint {
        Some(cp) => cp.entries().clone(),
        None => BTreeMap::new(),
    };

    let pending: Vec<&(CellKey, &str)> = jobs.iter().filter(|(k, _)| !done.contains_key(k)).collect();
    for chunk in pending.chunks(opts.encode_batch.max(1)) {
        let texts: Vec<&str> = chunk.iter().map(|(_, t)| *t).collect();
        let vectors = encoder
            .embed_batch(&texts)
            .map_err(|source| StoreError::Encoder {
                cells_completed: done.len(),
                source,
            })?;
        if let Some(cp) = checkpoint.as_mut() {
            cp.append(chunk.iter().map(|(k, _)| k), &vectors)?;
        }
        for ((key, _), vector) in chunk.iter().zip(vectors) {
            done.insert(key.clone(), vector);
        }
    }

    let cells: Vec<CellEntry> = jobs
        .into_iter()
        .map(|(key, _)| {
            let vector = done.get(&key).expect("encoded cell").clone();
            CellEntry { key, vector }
        })
        .collect();

    let mut datasets = Vec::with_capacity(inputs.len());
    for (meta, _) in inputs {
        let vector = if meta.description.is_empty() {
            EmbeddingVector::zeros(dim)
        } else {
            encoder
                .embed_text(&meta.description)
                .map_err(|source| StoreError::Encoder {
                    cells_completed: done.len(),
                    source,
                })?
        };
        datasets.push(DatasetEntry {
            meta: meta.clone(),
            vector,
        });
    }

    let store = Datastore::from_parts(dim, cells, datasets, rows)?;
    if let Some(cp) = checkpoint {
        cp.remove()?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::hash::HashEncoder;
    use indexmap::IndexMap;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn row(id: &str, cfg: &str, n: u64, cols: &[(&str, &str)]) -> RowRecord {
        let mut columns = IndexMap::new();
        for (k, v) in cols {
            columns.insert(k.to_string(), v.to_string());
        }
        RowRecord {
            dataset_id: id.into(),
            config_name: cfg.into(),
            row_num: n,
            columns,
        }
    }

    fn meta(id: &str, cfg: &str, desc: &str) -> DatasetMeta {
        DatasetMeta {
            dataset_id: id.into(),
            config_name: cfg.into(),
            description: desc.into(),
            row_count: 0,
        }
    }

    #[test]
    fn counts_cells_and_description_vectors() {
        let encoder = HashEncoder::new(16).unwrap();
        let inputs = vec![(
            meta("d", "c", "a description"),
            vec![
                row("d", "c", 0, &[("q", "one"), ("a", "1"), ("x", "left")]),
                row("d", "c", 1, &[("q", "two"), ("a", "2"), ("x", "right")]),
            ],
        )];
        let store = build(&inputs, &encoder, &BuildOptions::default()).unwrap();
        let stats = store.stats();
        assert_eq!(stats.n_cells, 6);
        assert_eq!(stats.n_rows, 2);
        assert_eq!(stats.n_datasets, 1);
        assert_eq!(stats.dim, 16);
        assert!(!store.datasets()[0].vector.is_zero());
    }

    #[test]
    fn empty_cells_are_stored_but_not_encoded() {
        let encoder = HashEncoder::new(16).unwrap();
        let inputs = vec![(
            meta("d", "", "desc"),
            vec![row("d", "", 0, &[("q", "one"), ("a", ""), ("x", "keep")])],
        )];
        let store = build(&inputs, &encoder, &BuildOptions::default()).unwrap();
        assert_eq!(store.stats().n_cells, 2);
        // The full row, empty cell included, is still retained.
        let key = RowKey::new(SourceId::new("d", ""), 0);
        assert_eq!(store.row(&key).unwrap().columns["a"], "");
    }

    #[test]
    fn empty_description_gets_zero_vector() {
        let encoder = HashEncoder::new(16).unwrap();
        let inputs = vec![(meta("d", "", ""), vec![row("d", "", 0, &[("q", "one")])])];
        let store = build(&inputs, &encoder, &BuildOptions::default()).unwrap();
        assert!(store.datasets()[0].vector.is_zero());
    }

    #[test]
    fn duplicate_row_nums_are_rejected() {
        let encoder = HashEncoder::new(16).unwrap();
        let inputs = vec![(
            meta("d", "", "x"),
            vec![
                row("d", "", 0, &[("q", "one")]),
                row("d", "", 0, &[("q", "two")]),
            ],
        )];
        assert!(matches!(
            build(&inputs, &encoder, &BuildOptions::default()),
            Err(StoreError::DuplicateKey { .. })
        ));
    }

    #[test]
    fn two_configs_of_one_dataset_count_as_two() {
        let encoder = HashEncoder::new(16).unwrap();
        let inputs = vec![
            (meta("d", "c1", "x"), vec![row("d", "c1", 0, &[("q", "a")])]),
            (meta("d", "c2", "y"), vec![row("d", "c2", 0, &[("q", "b")])]),
        ];
        let store = build(&inputs, &encoder, &BuildOptions::default()).unwrap();
        assert_eq!(store.stats().n_datasets, 2);
    }

    #[test]
    fn build_is_deterministic_and_input_order_invariant() {
        let encoder = HashEncoder::new(32).unwrap();
        let a = (
            meta("alpha", "", "first"),
            vec![row("alpha", "", 0, &[("q", "cats"), ("a", "dogs")])],
        );
        let b = (
            meta("beta", "", "second"),
            vec![row("beta", "", 0, &[("q", "fish"), ("a", "fowl")])],
        );
        let store1 = build(
            &[a.clone(), b.clone()],
            &encoder,
            &BuildOptions::default(),
        )
        .unwrap();
        let store2 = build(&[b, a], &encoder, &BuildOptions::default()).unwrap();
        assert_eq!(store1, store2);
    }

    #[test]
    fn stats_of_empty_store() {
        let store = Datastore::from_parts(8, vec![], vec![], vec![]).unwrap();
        let stats = store.stats();
        assert_eq!(stats.n_cells, 0);
        assert_eq!(stats.n_rows, 0);
        assert_eq!(stats.n_datasets, 0);
        assert_eq!(stats.dim, 8);
    }

    #[test]
    fn orphan_cell_rejected() {
        let cell = CellEntry {
            key: CellKey::new(SourceId::new("ghost", ""), 0, "q"),
            vector: EmbeddingVector::zeros(4),
        };
        assert!(matches!(
            Datastore::from_parts(4, vec![cell], vec![], vec![]),
            Err(StoreError::OrphanCell { .. })
        ));
    }

    /// Encoder wrapper that fails after a fixed number of embedded texts.
    struct FailAfter {
        inner: HashEncoder,
        budget: AtomicUsize,
    }

    impl Encoder for FailAfter {
        fn dim(&self) -> usize {
            self.inner.dim()
        }
        fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EncoderError> {
            if self.budget.fetch_sub(1, Ordering::SeqCst) == 0 {
                self.budget.store(0, Ordering::SeqCst);
                return Err(EncoderError::Unreachable {
                    detail: "budget exhausted".into(),
                });
            }
            self.inner.embed_text(text)
        }
    }

    #[test]
    fn aborted_build_reports_progress_and_resumes_from_checkpoint() {
        let tmp = tempfile::tempdir().unwrap();
        let checkpoint = tmp.path().join("build.ckpt");
        let opts = BuildOptions {
            checkpoint: Some(checkpoint.clone()),
            encode_batch: 2,
            ..Default::default()
        };
        let inputs = vec![(
            meta("d", "", "desc"),
            vec![
                row("d", "", 0, &[("q", "one"), ("a", "alpha")]),
                row("d", "", 1, &[("q", "two"), ("a", "beta")]),
                row("d", "", 2, &[("q", "three"), ("a", "gamma")]),
            ],
        )];

        let flaky = FailAfter {
            inner: HashEncoder::new(16).unwrap(),
            budget: AtomicUsize::new(4),
        };
        let err = build(&inputs, &flaky, &opts).unwrap_err();
        match err {
            StoreError::Encoder {
                cells_completed, ..
            } => assert_eq!(cells_completed, 4),
            other => panic!("unexpected error {other:?}"),
        }
        assert!(checkpoint.exists());

        // Resume with a working encoder: only the remaining cells encode.
        let counting = FailAfter {
            inner: HashEncoder::new(16).unwrap(),
            budget: AtomicUsize::new(usize::MAX),
        };
        let store = build(&inputs, &counting, &opts).unwrap();
        let spent = usize::MAX - counting.budget.load(Ordering::SeqCst);
        assert_eq!(spent, 3); // 2 remaining cells + 1 description
        assert!(!checkpoint.exists());

        // And the resumed store equals a clean one-shot build.
        let clean = build(
            &inputs,
            &HashEncoder::new(16).unwrap(),
            &BuildOptions::default(),
        )
        .unwrap();
        assert_eq!(store, clean);
    }
}
