//! On-disk dataset directories: `meta.json` + `rows.jsonl`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    columns_from_value, DatasetMeta, IngestError, IngestOutcome, RowRecord, SkippedRow,
};

#[derive(Serialize, Deserialize)]
struct MetaFile {
    dataset_id: String,
    #[serde(default)]
    config_name: String,
    #[serde(default)]
    description: Option<String>,
}

fn io_err(path: &Path, source: std::io::Error) -> IngestError {
    IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads a dataset directory. Row numbers are assigned 0..k−1 over the
/// successfully parsed lines in file order; unreadable lines are skipped and
/// reported. A missing `description` field yields an empty description with
/// a warning.
pub fn load_local(path: &Path) -> Result<IngestOutcome, IngestError> {
    let meta_path = path.join("meta.json");
    if !meta_path.exists() {
        return Err(IngestError::MissingMeta {
            path: path.to_path_buf(),
        });
    }
    let meta_bytes = fs::read(&meta_path).map_err(|e| io_err(&meta_path, e))?;
    let meta_file: MetaFile =
        serde_json::from_slice(&meta_bytes).map_err(|e| IngestError::BadMeta {
            path: meta_path.clone(),
            detail: e.to_string(),
        })?;
    let description = match meta_file.description {
        Some(d) => d,
        None => {
            log::warn!(
                "dataset {} has no description in {}; using empty description",
                meta_file.dataset_id,
                meta_path.display()
            );
            String::new()
        }
    };

    let rows_path = path.join("rows.jsonl");
    let file = fs::File::open(&rows_path).map_err(|e| io_err(&rows_path, e))?;
    let reader = BufReader::new(file);

    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (line_idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(&rows_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Result<serde_json::Value, _> = serde_json::from_str(&line);
        let columns = match parsed {
            Ok(value) => columns_from_value(&value),
            Err(e) => {
                skipped.push(SkippedRow {
                    index: line_idx as u64,
                    reason: format!("invalid json: {e}"),
                });
                continue;
            }
        };
        match columns {
            Some(columns) => rows.push(RowRecord {
                dataset_id: meta_file.dataset_id.clone(),
                config_name: meta_file.config_name.clone(),
                row_num: rows.len() as u64,
                columns,
            }),
            None => skipped.push(SkippedRow {
                index: line_idx as u64,
                reason: "row is not a json object".into(),
            }),
        }
    }

    let meta = DatasetMeta {
        dataset_id: meta_file.dataset_id,
        config_name: meta_file.config_name,
        description,
        row_count: rows.len() as u64,
    };
    Ok(IngestOutcome {
        meta,
        rows,
        skipped,
    })
}

/// Writes a dataset directory in the `load_local` format. Loading it back
/// reproduces `rows` exactly.
pub fn save_local(path: &Path, meta: &DatasetMeta, rows: &[RowRecord]) -> Result<(), IngestError> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))?;

    let meta_path = path.join("meta.json");
    let meta_file = MetaFile {
        dataset_id: meta.dataset_id.clone(),
        config_name: meta.config_name.clone(),
        description: Some(meta.description.clone()),
    };
    let meta_json = serde_json::to_vec_pretty(&meta_file).expect("meta serializes");
    fs::write(&meta_path, meta_json).map_err(|e| io_err(&meta_path, e))?;

    let rows_path = path.join("rows.jsonl");
    let mut out = std::io::BufWriter::new(
        fs::File::create(&rows_path).map_err(|e| io_err(&rows_path, e))?,
    );
    for row in rows {
        let line = serde_json::to_string(&row.columns).expect("columns serialize");
        writeln!(out, "{line}").map_err(|e| io_err(&rows_path, e))?;
    }
    out.flush().map_err(|e| io_err(&rows_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use indexmap::IndexMap;
    use std::fs;

    fn write_dataset(dir: &Path, meta: &str, rows: &str) {
        fs::create_dir_all(dir).unwrap();
        fs::write(dir.join("meta.json"), meta).unwrap();
        fs::write(dir.join("rows.jsonl"), rows).unwrap();
    }

    #[test]
    fn loads_two_rows() {
        let tmp = tempfile::tempdir().unwrap();
        write_dataset(
            tmp.path(),
            r#"{"dataset_id":"demo","config_name":"main","description":"a demo set"}"#,
            "{\"q\":\"one\",\"a\":1}\n{\"q\":\"two\",\"a\":2}\n",
        );
        let out = load_local(tmp.path()).unwrap();
        assert_eq!(out.meta.description, "a demo set");
        assert_eq!(out.meta.row_count, 2);
        assert_eq!(out.rows.len(), 2);
        assert!(out.skipped.is_empty());
        assert_eq!(out.rows[0].row_num, 0);
        assert_eq!(out.rows[1].row_num, 1);
        assert_eq!(out.rows[1].columns["a"], "2");
    }

    #[test]
    fn malformed_line_is_skipped_and_reported() {
        let tmp = tempfile::tempdir().unwrap();
        write_dataset(
            tmp.path(),
            r#"{"dataset_id":"demo"}"#,
            "{\"q\":\"one\"}\nnot json at all\n{\"q\":\"three\"}\n",
        );
        let out = load_local(tmp.path()).unwrap();
        assert_eq!(out.rows.len(), 2);
        assert_eq!(out.skipped.len(), 1);
        assert_eq!(out.skipped[0].index, 1);
        // Row numbers stay dense so the outcome round-trips losslessly.
        assert_eq!(out.rows[1].row_num, 1);
    }

    #[test]
    fn empty_rows_file_is_fine() {
        let tmp = tempfile::tempdir().unwrap();
        write_dataset(tmp.path(), r#"{"dataset_id":"demo"}"#, "");
        let out = load_local(tmp.path()).unwrap();
        assert!(out.rows.is_empty());
        assert!(out.skipped.is_empty());
    }

    #[test]
    fn missing_description_defaults_to_empty() {
        let tmp = tempfile::tempdir().unwrap();
        write_dataset(tmp.path(), r#"{"dataset_id":"demo","config_name":"c"}"#, "");
        let out = load_local(tmp.path()).unwrap();
        assert_eq!(out.meta.description, "");
    }

    #[test]
    fn loading_twice_is_identical() {
        let tmp = tempfile::tempdir().unwrap();
        write_dataset(
            tmp.path(),
            r#"{"dataset_id":"demo","description":"d"}"#,
            "{\"q\":\"one\",\"n\":1.5,\"flag\":true}\n{\"q\":\"two\"}\n",
        );
        assert_eq!(load_local(tmp.path()).unwrap(), load_local(tmp.path()).unwrap());
    }

    #[test]
    fn missing_meta_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(tmp.path().join("rows.jsonl"), "").unwrap();
        assert!(matches!(
            load_local(tmp.path()),
            Err(IngestError::MissingMeta { .. })
        ));
    }

    #[test]
    fn save_then_load_round_trips() {
        let tmp = tempfile::tempdir().unwrap();
        let meta = DatasetMeta {
            dataset_id: "rt".into(),
            config_name: "cfg".into(),
            description: "round trip".into(),
            row_count: 2,
        };
        let mut columns = IndexMap::new();
        columns.insert("z_first".to_string(), "42".to_string());
        columns.insert("a_second".to_string(), "".to_string());
        let rows = vec![
            RowRecord {
                dataset_id: "rt".into(),
                config_name: "cfg".into(),
                row_num: 0,
                columns: columns.clone(),
            },
            RowRecord {
                dataset_id: "rt".into(),
                config_name: "cfg".into(),
                row_num: 1,
                columns,
            },
        ];
        save_local(tmp.path(), &meta, &rows).unwrap();
        let out = load_local(tmp.path()).unwrap();
        assert_eq!(out.meta, meta);
        assert_eq!(out.rows, rows);
    }
}
