//! Text → fixed-dimension embedding vectors behind a pluggable interface.
//!
//! Two backends ship with the crate, registered by name in
//! [`EncoderRegistry`]:
//!
//! - `"hash"` — [`hash::HashEncoder`], a deterministic bag-of-tokens test
//!   double that is stable across processes and platforms.
//! - `"remote"` — [`remote::RemoteEncoder`], an HTTP client for an embedding
//!   service (`POST {texts:[...]} → {vectors:[[...]]}`).

pub mod hash;
pub mod registry;
pub mod remote;

pub use registry::{EncoderRegistry, EncoderSettings};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default embedding width; any positive dim works.
pub const DEFAULT_DIM: usize = 512;

#[derive(Debug, Error)]
pub enum EncoderError {
    /// Remote service could not be reached; callers may retry the operation.
    #[error("embedding service unreachable: {detail}")]
    Unreachable { detail: String },
    /// Service returned vectors of the wrong width; a configuration error.
    #[error("embedding service returned dim {got}, configured dim is {want}")]
    DimMismatch { want: usize, got: usize },
    /// A batch kept failing after retries; `indices` are the input positions
    /// that never produced a vector.
    #[error("embedding batch failed for indices {indices:?} after {attempts} attempts: {detail}")]
    BatchFailed {
        indices: Vec<usize>,
        attempts: u32,
        detail: String,
    },
    #[error("embedding contains a non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("invalid encoder configuration: {0}")]
    Config(String),
}

impl EncoderError {
    /// True when the failure is transient (service unreachable) rather than
    /// a configuration or data error.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            EncoderError::Unreachable { .. } | EncoderError::BatchFailed { .. }
        )
    }
}

/// A fixed-width vector of finite `f32` values.
///
/// Every stored vector is L2-normalized (norm within 1e-6 of 1) except the
/// all-zero fallback used for empty text, against which cosine similarity is
/// defined as 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    /// Wraps raw values, rejecting NaN and infinities.
    pub fn new(values: Vec<f32>) -> Result<Self, EncoderError> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(EncoderError::NonFinite { index });
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn l2_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Scales to unit L2 norm; the all-zero vector is returned unchanged.
    pub fn normalized(mut self) -> Self {
        let norm = self.l2_norm();
        if norm > 0.0 {
            for v in &mut self.values {
                *v = (f64::from(*v) / norm) as f32;
            }
        }
        self
    }
}

/// Deterministic text → vector mapping of a fixed width.
///
/// Implementations must be pure for a fixed configuration: the same text
/// yields the same vector on every call, from any thread.
pub trait Encoder: Send + Sync {
    /// Output vector width.
    fn dim(&self) -> usize;

    /// Encodes one text. Output is L2-normalized; empty or token-free text
    /// maps to the all-zero vector.
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EncoderError>;

    /// Encodes many texts, elementwise equal to mapping [`Encoder::embed_text`]
    /// with order preserved.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EncoderError> {
        texts.iter().map(|t| self.embed_text(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        let err = EmbeddingVector::new(vec![1.0, f32::NAN]).unwrap_err();
        assert!(matches!(err, EncoderError::NonFinite { index: 1 }));
    }

    #[test]
    fn normalization_leaves_zero_vector() {
        let v = EmbeddingVector::zeros(4).normalized();
        assert!(v.is_zero());
        assert_eq!(v.l2_norm(), 0.0);
    }

    #[test]
    fn normalization_hits_unit_norm() {
        let v = EmbeddingVector::new(vec![3.0, 4.0]).unwrap().normalized();
        assert!((v.l2_norm() - 1.0).abs() < 1e-6);
    }
}
