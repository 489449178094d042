//! Name-keyed registry of encoder backends.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::hash::HashEncoder;
use super::remote::RemoteEncoder;
use super::{Encoder, EncoderError, DEFAULT_DIM};

/// Configuration surface shared by all encoder backends. Backends read the
/// fields they need and ignore the rest.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSettings {
    pub backend: String,
    pub dim: usize,
    pub endpoint: Option<String>,
    /// Environment variable holding the service API key.
    pub api_key_env: String,
    pub batch_size: usize,
    pub concurrency: usize,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    pub timeout_ms: u64,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        Self {
            backend: "hash".into(),
            dim: DEFAULT_DIM,
            endpoint: None,
            api_key_env: "REBASE_ENCODER_API_KEY".into(),
            batch_size: 64,
            concurrency: 4,
            max_retries: 3,
            retry_backoff_ms: 250,
            timeout_ms: 30_000,
        }
    }
}

type EncoderBuilder =
    Box<dyn Fn(&EncoderSettings) -> Result<Arc<dyn Encoder>, EncoderError> + Send + Sync>;

/// Builds encoders by backend name. Ships with `"hash"` and `"remote"`;
/// callers may register additional backends.
pub struct EncoderRegistry {
    builders: BTreeMap<String, EncoderBuilder>,
}

impl EncoderRegistry {
    pub fn empty() -> Self {
        Self {
            builders: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register("hash", |s| Ok(Arc::new(HashEncoder::new(s.dim)?)));
        reg.register("remote", |s| Ok(Arc::new(RemoteEncoder::from_settings(s)?)));
        reg
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        builder: impl Fn(&EncoderSettings) -> Result<Arc<dyn Encoder>, EncoderError>
            + Send
            + Sync
            + 'static,
    ) {
        self.builders.insert(name.into(), Box::new(builder));
    }

    pub fn names(&self) -> Vec<&str> {
        self.builders.keys().map(String::as_str).collect()
    }

    pub fn build(&self, settings: &EncoderSettings) -> Result<Arc<dyn Encoder>, EncoderError> {
        match self.builders.get(&settings.backend) {
            Some(builder) => builder(settings),
            None => Err(EncoderError::Config(format!(
                "unknown encoder backend `{}`; available: {}",
                settings.backend,
                self.names().join(", ")
            ))),
        }
    }
}

impl Default for EncoderRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_hash_backend() {
        let reg = EncoderRegistry::with_builtins();
        let enc = reg
            .build(&EncoderSettings {
                backend: "hash".into(),
                dim: 8,
                ..Default::default()
            })
            .unwrap();
        assert_eq!(enc.dim(), 8);
    }

    #[test]
    fn unknown_backend_lists_available() {
        let reg = EncoderRegistry::with_builtins();
        let err = reg
            .build(&EncoderSettings {
                backend: "bert".into(),
                ..Default::default()
            })
            .err()
            .unwrap();
        let msg = err.to_string();
        assert!(msg.contains("bert"));
        assert!(msg.contains("hash"));
        assert!(msg.contains("remote"));
    }

    #[test]
    fn remote_requires_endpoint() {
        let reg = EncoderRegistry::with_builtins();
        let err = reg
            .build(&EncoderSettings {
                backend: "remote".into(),
                ..Default::default()
            })
            .err()
            .unwrap();
        assert!(err.to_string().contains("endpoint"));
    }
}
