//! Name-keyed registry of LLM backends.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::http::HttpLlmClient;
use super::mock::MockLlm;
use super::{LlmClient, LlmError};

/// Configuration surface shared by all LLM backends.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSettings {
    pub backend: String,
    pub model_id: String,
    pub endpoint: Option<String>,
    /// Environment variable holding the service API key.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    pub timeout_ms: u64,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            backend: "mock".into(),
            model_id: "mock-transformer".into(),
            endpoint: None,
            api_key_env: "REBASE_LLM_API_KEY".into(),
            temperature: 0.7,
            max_tokens: 1024,
            max_retries: 3,
            retry_backoff_ms: 250,
            timeout_ms: 60_000,
        }
    }
}

type LlmBuilder =
    Box<dyn Fn(&LlmSettings) -> Result<Arc<dyn LlmClient>, LlmError> + Send + Sync>;

/// Builds LLM clients by backend name. Ships with `"http"` and `"mock"`.
pub struct LlmRegistry {
    builders: BTreeMap<String, LlmBuilder>,
}

impl LlmRegistry {
    pub fn empty() -> Self {
        Self {
            builders: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register("mock", |_| Ok(Arc::new(MockLlm::new())));
        reg.register("http", |s| Ok(Arc::new(HttpLlmClient::from_settings(s)?)));
        reg
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        builder: impl Fn(&LlmSettings) -> Result<Arc<dyn LlmClient>, LlmError> + Send + Sync + 'static,
    ) {
        self.builders.insert(name.into(), Box::new(builder));
    }

    pub fn names(&self) -> Vec<&str> {
        self.builders.keys().map(String::as_str).collect()
    }

    pub fn build(&self, settings: &LlmSettings) -> Result<Arc<dyn LlmClient>, LlmError> {
        match self.builders.get(&settings.backend) {
            Some(builder) => builder(settings),
            None => Err(LlmError::Config(format!(
                "unknown llm backend `{}`; available: {}",
                settings.backend,
                self.names().join(", ")
            ))),
        }
    }
}

impl Default for LlmRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_backend_lists_available() {
        let reg = LlmRegistry::with_builtins();
        let err = reg
            .build(&LlmSettings {
                backend: "claude".into(),
                ..Default::default()
            })
            .err()
            .unwrap();
        let msg = err.to_string();
        assert!(msg.contains("claude") && msg.contains("http") && msg.contains("mock"));
    }

    #[test]
    fn http_backend_requires_endpoint() {
        let reg = LlmRegistry::with_builtins();
        let err = reg
            .build(&LlmSettings {
                backend: "http".into(),
                ..Default::default()
            })
            .err()
            .unwrap();
        assert!(err.to_string().contains("endpoint"));
    }
}
