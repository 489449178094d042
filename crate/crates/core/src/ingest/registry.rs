//! HTTP client for a dataset-registry service.
//!
//! The registry is any HTTP service exposing two GET endpoints, described by
//! URL templates in [`RegistryConfig`]:
//!
//! - rows: returns either a bare JSON array of flat row objects or an object
//!   with a `rows` array; elements wrapped as `{"row": {...}}` are unwrapped.
//! - metadata: returns `{"description": "..."}`.
//!
//! When the rows template contains an `{offset}` placeholder, pages of
//! `{limit}` rows are requested until `max_rows` rows arrive or a short page
//! signals the end.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    columns_from_value, DatasetMeta, IngestError, IngestOutcome, RowRecord, SkippedRow,
};
use crate::source::SourceId;
use crate::util::{with_retries, Attempt};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistryConfig {
    /// Rows endpoint template. Placeholders: `{dataset_id}`, `{config_name}`,
    /// `{offset}`, `{limit}`.
    pub rows_url: String,
    /// Metadata endpoint template. Placeholders: `{dataset_id}`, `{config_name}`.
    pub meta_url: String,
    pub page_size: usize,
    /// Environment variable holding a bearer token, sent when set.
    pub token_env: String,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    pub timeout_ms: u64,
}

impl Default for RegistryConfig {
    fn default() -> Self {
        Self {
            rows_url: String::new(),
            meta_url: String::new(),
            page_size: 100,
            token_env: "REBASE_REGISTRY_TOKEN".into(),
            max_retries: 3,
            retry_backoff_ms: 250,
            timeout_ms: 30_000,
        }
    }
}

pub struct RegistryClient {
    cfg: RegistryConfig,
    token: Option<String>,
    http: reqwest::blocking::Client,
}

fn fill_template(template: &str, dataset_id: &str, config_name: &str) -> String {
    template
        .replace("{dataset_id}", dataset_id)
        .replace("{config_name}", config_name)
}

impl RegistryClient {
    pub fn new(cfg: RegistryConfig) -> Result<Self, IngestError> {
        if cfg.rows_url.is_empty() {
            return Err(IngestError::Config("registry rows_url is empty".into()));
        }
        let token = std::env::var(&cfg.token_env).ok();
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| IngestError::Config(format!("http client: {e}")))?;
        Ok(Self { cfg, token, http })
    }

    fn get_json(&self, url: &str, source: &SourceId) -> Result<Value, IngestError> {
        with_retries(
            self.cfg.max_retries.max(1),
            self.cfg.retry_backoff_ms,
            |_| {
                let mut req = self.http.get(url);
                if let Some(token) = &self.token {
                    req = req.bearer_auth(token);
                }
                let resp = req.send().map_err(|e| {
                    Attempt::Retry(IngestError::Network {
                        detail: e.to_string(),
                    })
                })?;
                let status = resp.status();
                if status == reqwest::StatusCode::NOT_FOUND {
                    return Err(Attempt::Fatal(IngestError::UnknownDataset {
                        dataset: source.clone(),
                    }));
                }
                if status.is_server_error() {
                    return Err(Attempt::Retry(IngestError::Network {
                        detail: format!("status {status} from {url}"),
                    }));
                }
                if !status.is_success() {
                    return Err(Attempt::Fatal(IngestError::MalformedPayload {
                        detail: format!("status {status} from {url}"),
                    }));
                }
                resp.json().map_err(|e| {
                    Attempt::Retry(IngestError::Network {
                        detail: format!("bad body from {url}: {e}"),
                    })
                })
            },
        )
    }

    fn fetch_description(&self, source: &SourceId) -> String {
        if self.cfg.meta_url.is_empty() {
            return String::new();
        }
        let url = fill_template(&self.cfg.meta_url, &source.dataset_id, &source.config_name);
        match self.get_json(&url, source) {
            Ok(value) => value
                .get("description")
                .and_then(Value::as_str)
                .unwrap_or_default()
                .to_string(),
            Err(e) => {
                log::warn!("no description for {source}: {e}");
                String::new()
            }
        }
    }

    /// Extracts the row objects from one rows-endpoint payload.
    fn page_elements(payload: Value) -> Result<Vec<Value>, IngestError> {
        match payload {
            Value::Array(items) => Ok(items),
            Value::Object(mut obj) => match obj.remove("rows") {
                Some(Value::Array(items)) => Ok(items),
                _ => Err(IngestError::MalformedPayload {
                    detail: "expected a rows array".into(),
                }),
            },
            _ => Err(IngestError::MalformedPayload {
                detail: "expected an array or object payload".into(),
            }),
        }
    }

    /// Fetches up to `max_rows` rows plus the dataset description. Row
    /// numbers are assigned 0..k−1 in served order; malformed elements are
    /// skipped and reported.
    pub fn fetch_dataset(
        &self,
        dataset_id: &str,
        config_name: &str,
        max_rows: usize,
    ) -> Result<IngestOutcome, IngestError> {
        let source = SourceId::new(dataset_id, config_name);
        let paginated = self.cfg.rows_url.contains("{offset}");
        let page_size = self.cfg.page_size.max(1);

        let mut rows: Vec<RowRecord> = Vec::new();
        let mut skipped: Vec<SkippedRow> = Vec::new();
        let mut offset = 0usize;
        let mut served_index = 0u64;

        loop {
            let limit = if paginated {
                page_size.min(max_rows - rows.len())
            } else {
                max_rows
            };
            let url = fill_template(&self.cfg.rows_url, dataset_id, config_name)
                .replace("{offset}", &offset.to_string())
                .replace("{limit}", &limit.to_string());
            let elements = Self::page_elements(self.get_json(&url, &source)?)?;
            let page_len = elements.len();

            for element in elements {
                if rows.len() >= max_rows {
                    break;
                }
                // Unwrap `{"row": {...}}` wrappers some registries serve.
                let flat = match element.get("row") {
                    Some(inner) if inner.is_object() => inner,
                    _ => &element,
                };
                match columns_from_value(flat) {
                    Some(columns) => rows.push(RowRecord {
                        dataset_id: dataset_id.to_string(),
                        config_name: config_name.to_string(),
                        row_num: rows.len() as u64,
                        columns,
                    }),
                    None => skipped.push(SkippedRow {
                        index: served_index,
                        reason: "row is not a json object".into(),
                    }),
                }
                served_index += 1;
            }

            offset += page_len;
            let done = !paginated || rows.len() >= max_rows || page_len < limit || page_len == 0;
            if done {
                break;
            }
        }

        let description = self.fetch_description(&source);
        let meta = DatasetMeta {
            dataset_id: dataset_id.to_string(),
            config_name: config_name.to_string(),
            description,
            row_count: rows.len() as u64,
        };
        Ok(IngestOutcome {
            meta,
            rows,
            skipped,
        })
    }
}
