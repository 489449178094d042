//! Single-file container for a [`Datastore`].
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic            b"RBDSTOR1"                      8 bytes
//! version          u32                              4
//! dim              u32                              4
//! n_cells          u64                              8
//! n_datasets       u64                              8
//! n_rows           u64                              8
//! key_table_len    u64 (bytes)                      8
//! dataset_tbl_len  u64 (bytes)                      8
//! row_block_len    u64 (bytes)                      8
//! vector block     (n_cells + n_datasets) × dim × f32
//! key table        per cell: str dataset_id, str config_name,
//!                  u64 row_num, str col_name   (str = u32 len + utf8)
//! dataset table    per dataset: u32 len + DatasetMeta json
//! row block        per row: u32 len + RowRecord json
//! ```
//!
//! Cell vectors come first in the vector block, in the store's canonical
//! key order; dataset vectors follow in source order. The expected file
//! length is fully determined by the header, so a truncated or overlong
//! file fails to load as a whole rather than producing a partial store.
//! Writes go to a sibling temp file renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{CellEntry, CellKey, DatasetEntry, Datastore, StoreError};
use crate::encoder::EmbeddingVector;
use crate::ingest::{DatasetMeta, RowRecord};
use crate::source::SourceId;

const MAGIC: &[u8; 8] = b"RBDSTOR1";
const VERSION: u32 = 1;
const CKPT_MAGIC: &[u8; 8] = b"RBDSCKP1";

fn io_err(path: &Path, source: std::io::Error) -> StoreError {
    StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn corrupt(detail: impl Into<String>) -> StoreError {
    StoreError::Corrupt {
        detail: detail.into(),
    }
}

fn push_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn push_vector(buf: &mut Vec<u8>, v: &EmbeddingVector) {
    for &x in v.values() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

fn encode_cell_key(buf: &mut Vec<u8>, key: &CellKey) {
    push_str(buf, &key.source.dataset_id);
    push_str(buf, &key.source.config_name);
    buf.extend_from_slice(&key.row_num.to_le_bytes());
    push_str(buf, &key.col_name);
}

/// Bounds-checked reader over a byte slice.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt("record overruns its section"))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String, StoreError> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| corrupt("invalid utf8 in key table"))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

fn read_cell_key(r: &mut Reader<'_>) -> Result<CellKey, StoreError> {
    let dataset_id = r.str()?;
    let config_name = r.str()?;
    let row_num = r.u64()?;
    let col_name = r.str()?;
    Ok(CellKey::new(
        SourceId::new(dataset_id, config_name),
        row_num,
        col_name,
    ))
}

fn read_vector(bytes: &[u8], dim: usize) -> Result<EmbeddingVector, StoreError> {
    let mut values = Vec::with_capacity(dim);
    for chunk in bytes.chunks_exact(4) {
        values.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    EmbeddingVector::new(values).map_err(|e| corrupt(format!("bad vector: {e}")))
}

/// Serializes and writes the store, replacing `path` atomically.
pub fn persist(store: &Datastore, path: &Path) -> Result<(), StoreError> {
    let dim = store.dim();

    let mut vectors = Vec::with_capacity((store.cells().len() + store.datasets().len()) * dim * 4);
    let mut key_table = Vec::new();
    for cell in store.cells() {
        push_vector(&mut vectors, &cell.vector);
        encode_cell_key(&mut key_table, &cell.key);
    }
    let mut dataset_table = Vec::new();
    for dataset in store.datasets() {
        push_vector(&mut vectors, &dataset.vector);
        let json = serde_json::to_vec(&dataset.meta).expect("meta serializes");
        dataset_table.extend_from_slice(&(json.len() as u32).to_le_bytes());
        dataset_table.extend_from_slice(&json);
    }
    let mut row_block = Vec::new();
    for row in store.rows() {
        let json = serde_json::to_vec(row).expect("row serializes");
        row_block.extend_from_slice(&(json.len() as u32).to_le_bytes());
        row_block.extend_from_slice(&json);
    }

    let mut header = Vec::with_capacity(64);
    header.extend_from_slice(MAGIC);
    header.extend_from_slice(&VERSION.to_le_bytes());
    header.extend_from_slice(&(dim as u32).to_le_bytes());
    header.extend_from_slice(&(store.cells().len() as u64).to_le_bytes());
    header.extend_from_slice(&(store.datasets().len() as u64).to_le_bytes());
    header.extend_from_slice(&(store.rows.len() as u64).to_le_bytes());
    header.extend_from_slice(&(key_table.len() as u64).to_le_bytes());
    header.extend_from_slice(&(dataset_table.len() as u64).to_le_bytes());
    header.extend_from_slice(&(row_block.len() as u64).to_le_bytes());

    let tmp = path.with_extension("tmp");
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
    }
    let mut file = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    for section in [&header, &vectors, &key_table, &dataset_table, &row_block] {
        file.write_all(section).map_err(|e| io_err(&tmp, e))?;
    }
    file.sync_all().map_err(|e| io_err(&tmp, e))?;
    drop(file);
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Loads a store, validating the header, the exact file length, and full
/// referential integrity. Vectors round-trip bit-identically.
pub fn load(path: &Path) -> Result<Datastore, StoreError> {
    let buf = fs::read(path).map_err(|e| io_err(path, e))?;
    if buf.len() < 64 {
        return Err(corrupt("file shorter than header"));
    }
    if &buf[..8] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let mut r = Reader::new(&buf[8..64]);
    let version = r.u32()?;
    if version != VERSION {
        return Err(StoreError::Version {
            want: VERSION,
            got: version,
        });
    }
    let dim = r.u32()? as usize;
    let n_cells = r.u64()? as usize;
    let n_datasets = r.u64()? as usize;
    let n_rows = r.u64()? as usize;
    let key_table_len = r.u64()? as usize;
    let dataset_table_len = r.u64()? as usize;
    let row_block_len = r.u64()? as usize;

    let vec_block_len = (n_cells + n_datasets) * dim * 4;
    let expected = 64 + vec_block_len + key_table_len + dataset_table_len + row_block_len;
    if buf.len() != expected {
        return Err(corrupt(format!(
            "file is {} bytes, header expects {expected}",
            buf.len()
        )));
    }

    let vec_block = &buf[64..64 + vec_block_len];
    let key_table = &buf[64 + vec_block_len..64 + vec_block_len + key_table_len];
    let dataset_table =
        &buf[64 + vec_block_len + key_table_len..64 + vec_block_len + key_table_len + dataset_table_len];
    let row_block = &buf[expected - row_block_len..];

    let vec_bytes = dim * 4;
    let mut cells = Vec::with_capacity(n_cells);
    let mut keys = Reader::new(key_table);
    for i in 0..n_cells {
        let key = read_cell_key(&mut keys)?;
        let vector = read_vector(&vec_block[i * vec_bytes..(i + 1) * vec_bytes], dim)?;
        cells.push(CellEntry { key, vector });
    }
    if keys.remaining() != 0 {
        return Err(corrupt("trailing bytes in key table"));
    }

    let mut datasets = Vec::with_capacity(n_datasets);
    let mut metas = Reader::new(dataset_table);
    for i in 0..n_datasets {
        let len = metas.u32()? as usize;
        let meta: DatasetMeta = serde_json::from_slice(metas.take(len)?)
            .map_err(|e| corrupt(format!("bad dataset meta: {e}")))?;
        let off = (n_cells + i) * vec_bytes;
        let vector = read_vector(&vec_block[off..off + vec_bytes], dim)?;
        datasets.push(DatasetEntry { meta, vector });
    }
    if metas.remaining() != 0 {
        return Err(corrupt("trailing bytes in dataset table"));
    }

    let mut rows = Vec::with_capacity(n_rows);
    let mut row_reader = Reader::new(row_block);
    for _ in 0..n_rows {
        let len = row_reader.u32()? as usize;
        let row: RowRecord = serde_json::from_slice(row_reader.take(len)?)
            .map_err(|e| corrupt(format!("bad row payload: {e}")))?;
        rows.push(row);
    }
    if row_reader.remaining() != 0 {
        return Err(corrupt("trailing bytes in row block"));
    }

    Datastore::from_parts(dim, cells, datasets, rows)
}

/// Append-only sidecar of encoded cell vectors, letting an aborted build
/// resume without re-encoding. A torn trailing record is ignored on open.
pub(crate) struct Checkpoint {
    path: PathBuf,
    entries: BTreeMap<CellKey, EmbeddingVector>,
    dim: usize,
}

impl Checkpoint {
    pub(crate) fn open(path: &Path, dim: usize) -> Result<Self, StoreError> {
        let mut entries = BTreeMap::new();
        if path.exists() {
            let buf = fs::read(path).map_err(|e| io_err(path, e))?;
            if buf.len() < 12 || &buf[..8] != CKPT_MAGIC {
                return Err(corrupt(format!(
                    "not a build checkpoint: {}",
                    path.display()
                )));
            }
            let ckpt_dim = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
            if ckpt_dim != dim {
                return Err(corrupt(format!(
                    "checkpoint dim {ckpt_dim} does not match build dim {dim}; remove {}",
                    path.display()
                )));
            }
            let mut r = Reader::new(&buf[12..]);
            loop {
                let mark = r.pos;
                match read_cell_key(&mut r).and_then(|key| {
                    let bytes = r.take(dim * 4)?;
                    Ok((key, read_vector(bytes, dim)?))
                }) {
                    Ok((key, vector)) => {
                        entries.insert(key, vector);
                    }
                    Err(_) => {
                        if mark != r.buf.len() {
                            log::warn!(
                                "ignoring torn trailing record in checkpoint {}",
                                path.display()
                            );
                        }
                        break;
                    }
                }
            }
        } else {
            let mut header = Vec::with_capacity(12);
            header.extend_from_slice(CKPT_MAGIC);
            header.extend_from_slice(&(dim as u32).to_le_bytes());
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
                }
            }
            fs::write(path, header).map_err(|e| io_err(path, e))?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries,
            dim,
        })
    }

    pub(crate) fn entries(&self) -> &BTreeMap<CellKey, EmbeddingVector> {
        &self.entries
    }

    pub(crate) fn append<'a>(
        &mut self,
        keys: impl Iterator<Item = &'a CellKey>,
        vectors: &[EmbeddingVector],
    ) -> Result<(), StoreError> {
        let mut buf = Vec::new();
        for (key, vector) in keys.zip(vectors) {
            encode_cell_key(&mut buf, key);
            push_vector(&mut buf, vector);
            debug_assert_eq!(vector.dim(), self.dim);
        }
        let mut file = fs::OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(|e| io_err(&self.path, e))?;
        file.write_all(&buf).map_err(|e| io_err(&self.path, e))?;
        file.sync_data().map_err(|e| io_err(&self.path, e))?;
        Ok(())
    }

    pub(crate) fn remove(self) -> Result<(), StoreError> {
        if self.path.exists() {
            fs::remove_file(&self.path).map_err(|e| io_err(&self.path, e))?;
        }
        Ok(())
    }
}
