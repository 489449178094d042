//! HTTP client for a remote embedding service.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::registry::EncoderSettings;
use super::{EmbeddingVector, Encoder, EncoderError};
use crate::util::{parallel_map_indexed, with_retries, Attempt};

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

/// Client for `POST {texts:[...]} → {vectors:[[...],...]}` services.
///
/// Requests are chunked to `batch_size` texts, with at most `concurrency`
/// chunks in flight. A chunk whose response is malformed or incomplete is
/// retried whole; when retries are exhausted the error names the input
/// indices that never embedded.
pub struct RemoteEncoder {
    dim: usize,
    endpoint: String,
    api_key: Option<String>,
    batch_size: usize,
    concurrency: usize,
    max_retries: u32,
    retry_backoff_ms: u64,
    http: reqwest::blocking::Client,
}

impl RemoteEncoder {
    pub fn from_settings(settings: &EncoderSettings) -> Result<Self, EncoderError> {
        if settings.dim == 0 {
            return Err(EncoderError::Config("dim must be positive".into()));
        }
        let endpoint = settings
            .endpoint
            .clone()
            .ok_or_else(|| EncoderError::Config("remote encoder requires an endpoint".into()))?;
        let api_key = std::env::var(&settings.api_key_env).ok();
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(settings.timeout_ms))
            .build()
            .map_err(|e| EncoderError::Config(format!("http client: {e}")))?;
        Ok(Self {
            dim: settings.dim,
            endpoint,
            api_key,
            batch_size: settings.batch_size.max(1),
            concurrency: settings.concurrency.max(1),
            max_retries: settings.max_retries,
            retry_backoff_ms: settings.retry_backoff_ms,
            http,
        })
    }

    /// One POST for one chunk. Incomplete responses count as retryable;
    /// wrong-width vectors are a permanent configuration error.
    fn embed_chunk(&self, start: usize, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EncoderError> {
        with_retries(self.max_retries.max(1), self.retry_backoff_ms, |attempt| {
            let mut req = self.http.post(&self.endpoint).json(&EmbedRequest { texts });
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let resp = req.send().map_err(|e| {
                Attempt::Retry(EncoderError::Unreachable {
                    detail: e.to_string(),
                })
            })?;
            let status = resp.status();
            if status.is_server_error() {
                return Err(Attempt::Retry(EncoderError::Unreachable {
                    detail: format!("status {status}"),
                }));
            }
            if !status.is_success() {
                return Err(Attempt::Fatal(EncoderError::Config(format!(
                    "embedding service rejected request: status {status}"
                ))));
            }
            let body: EmbedResponse = resp.json().map_err(|e| {
                Attempt::Retry(EncoderError::Unreachable {
                    detail: format!("malformed response: {e}"),
                })
            })?;
            if body.vectors.len() != texts.len() {
                let missing: Vec<usize> = (body.vectors.len()..texts.len())
                    .map(|i| start + i)
                    .collect();
                return Err(Attempt::Retry(EncoderError::BatchFailed {
                    indices: missing,
                    attempts: attempt,
                    detail: format!(
                        "service returned {} vectors for {} texts",
                        body.vectors.len(),
                        texts.len()
                    ),
                }));
            }
            let mut out = Vec::with_capacity(body.vectors.len());
            for values in body.vectors {
                if values.len() != self.dim {
                    return Err(Attempt::Fatal(EncoderError::DimMismatch {
                        want: self.dim,
                        got: values.len(),
                    }));
                }
                let vector = EmbeddingVector::new(values).map_err(Attempt::Fatal)?;
                out.push(vector.normalized());
            }
            Ok(out)
        })
    }
}

impl Encoder for RemoteEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EncoderError> {
        let mut vectors = self.embed_chunk(0, &[text])?;
        Ok(vectors.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EncoderError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let chunks: Vec<(usize, &[&str])> = texts
            .chunks(self.batch_size)
            .enumerate()
            .map(|(i, c)| (i * self.batch_size, c))
            .collect();
        let results = parallel_map_indexed(&chunks, self.concurrency, |_, (start, chunk)| {
            self.embed_chunk(*start, chunk)
        });
        let mut out = Vec::with_capacity(texts.len());
        for r in results {
            out.extend(r?);
        }
        Ok(out)
    }
}
