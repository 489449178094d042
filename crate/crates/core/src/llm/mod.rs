//! Completion-client abstraction used by the transform stage.
//!
//! Backends are registered by name in [`LlmRegistry`]: `"http"` for a
//! pluggable chat/completion HTTP endpoint and `"mock"` for the
//! deterministic offline stand-in.

pub mod http;
pub mod mock;
pub mod registry;

pub use registry::{LlmRegistry, LlmSettings};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    /// Transport-level failure; retryable.
    #[error("llm transport error: {detail}")]
    Transport { detail: String },
    /// The service answered with a non-retryable error status.
    #[error("llm service rejected the request: {detail}")]
    Api { detail: String },
    #[error("invalid llm configuration: {0}")]
    Config(String),
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, LlmError::Transport { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmRequest {
    pub model_id: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// A completion client. Implementations must be callable from many threads;
/// deterministic backends must be pure in the request content.
pub trait LlmClient: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError>;
}
