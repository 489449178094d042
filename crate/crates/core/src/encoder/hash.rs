//! Deterministic bag-of-tokens encoder used as the offline test double.

use super::{EmbeddingVector, Encoder, EncoderError};

/// Encodes text by lowercase-whitespace tokenizing and bumping one counter
/// per token at `fnv1a64(token) % dim`, then L2-normalizing. Empty text maps
/// to the all-zero vector.
///
/// The token hash is FNV-1a over UTF-8 bytes, so vectors are identical
/// across processes and platforms, and texts sharing tokens land on shared
/// indices, which gives retrieval tests real cosine structure.
#[derive(Debug, Clone)]
pub struct HashEncoder {
    dim: usize,
}

impl HashEncoder {
    pub fn new(dim: usize) -> Result<Self, EncoderError> {
        if dim == 0 {
            return Err(EncoderError::Config("dim must be positive".into()));
        }
        Ok(Self { dim })
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

impl Encoder for HashEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EncoderError> {
        let mut values = vec![0.0f32; self.dim];
        for token in text.to_lowercase().split_whitespace() {
            let idx = (fnv1a64(token.as_bytes()) % self.dim as u64) as usize;
            values[idx] += 1.0;
        }
        Ok(EmbeddingVector::new(values)?.normalized())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_across_calls() {
        let enc = HashEncoder::new(64).unwrap();
        assert_eq!(
            enc.embed_text("abc def").unwrap(),
            enc.embed_text("abc def").unwrap()
        );
    }

    #[test]
    fn empty_text_is_zero_vector() {
        let enc = HashEncoder::new(16).unwrap();
        let v = enc.embed_text("").unwrap();
        assert!(v.is_zero());
        assert_eq!(v.dim(), 16);
    }

    #[test]
    fn output_is_unit_norm() {
        let enc = HashEncoder::new(32).unwrap();
        let v = enc.embed_text("the quick brown fox").unwrap();
        assert!((v.l2_norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn case_and_spacing_insensitive() {
        let enc = HashEncoder::new(64).unwrap();
        assert_eq!(
            enc.embed_text("Hello  World").unwrap(),
            enc.embed_text("hello world").unwrap()
        );
    }

    #[test]
    fn shared_tokens_give_positive_similarity() {
        let enc = HashEncoder::new(256).unwrap();
        let a = enc.embed_text("shared token one").unwrap();
        let b = enc.embed_text("shared token two").unwrap();
        let dot: f64 = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| f64::from(*x) * f64::from(*y))
            .sum();
        assert!(dot > 0.0);
    }

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn zero_dim_rejected() {
        assert!(HashEncoder::new(0).is_err());
    }
}
