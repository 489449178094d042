//! HTTP completion client.
//!
//! Request: `POST {model, prompt, temperature, max_tokens}`.
//! Response: `{"text": "...", "usage": {"prompt_tokens": n, "completion_tokens": m}}`.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::registry::LlmSettings;
use super::{LlmClient, LlmError, LlmRequest, LlmResponse};
use crate::util::{with_retries, Attempt};

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Deserialize)]
struct WireResponse {
    text: String,
    #[serde(default)]
    usage: WireUsage,
}

pub struct HttpLlmClient {
    endpoint: String,
    api_key: Option<String>,
    max_retries: u32,
    retry_backoff_ms: u64,
    http: reqwest::blocking::Client,
}

impl HttpLlmClient {
    pub fn from_settings(settings: &LlmSettings) -> Result<Self, LlmError> {
        let endpoint = settings
            .endpoint
            .clone()
            .ok_or_else(|| LlmError::Config("http llm backend requires an endpoint".into()))?;
        let api_key = std::env::var(&settings.api_key_env).ok();
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(settings.timeout_ms))
            .build()
            .map_err(|e| LlmError::Config(format!("http client: {e}")))?;
        Ok(Self {
            endpoint,
            api_key,
            max_retries: settings.max_retries,
            retry_backoff_ms: settings.retry_backoff_ms,
            http,
        })
    }
}

impl LlmClient for HttpLlmClient {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        with_retries(self.max_retries.max(1), self.retry_backoff_ms, |_| {
            let body = WireRequest {
                model: &request.model_id,
                prompt: &request.prompt,
                temperature: request.temperature,
                max_tokens: request.max_tokens,
            };
            let mut req = self.http.post(&self.endpoint).json(&body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let resp = req.send().map_err(|e| {
                Attempt::Retry(LlmError::Transport {
                    detail: e.to_string(),
                })
            })?;
            let status = resp.status();
            if status.is_server_error() || status.as_u16() == 429 {
                return Err(Attempt::Retry(LlmError::Transport {
                    detail: format!("status {status}"),
                }));
            }
            if !status.is_success() {
                return Err(Attempt::Fatal(LlmError::Api {
                    detail: format!("status {status}"),
                }));
            }
            let wire: WireResponse = resp.json().map_err(|e| {
                Attempt::Retry(LlmError::Transport {
                    detail: format!("malformed response: {e}"),
                })
            })?;
            Ok(LlmResponse {
                text: wire.text,
                prompt_tokens: wire.usage.prompt_tokens,
                completion_tokens: wire.usage.completion_tokens,
            })
        })
    }
}
