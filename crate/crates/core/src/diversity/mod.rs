//! Dataset-diversity metrics: ROUGE-L uniqueness, average unique n-grams
//! per example, source counting, and raw embedding dumps.

pub mod rouge;

pub use rouge::{rouge_l, rouge_l_tokens, tokenize};

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{Encoder, EncoderError};
use crate::source::SourceId;
use crate::transform::RowSource;

#[derive(Debug, Error)]
pub enum DiversityError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// The diversity report emitted by the analyze stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub unique_percent: f64,
    pub avg_unique_unigrams: f64,
    pub avg_unique_bigrams: f64,
    pub n_sources: usize,
    pub n_examples: usize,
    pub threshold: f64,
}

/// Percentage of examples whose ROUGE-L score against every other example
/// stays below `threshold`. Exhaustive O(n²) pairwise check; pairs with no
/// shared tokens are skipped (their score is provably 0) whenever
/// `threshold > 0`.
pub fn unique_percent(texts: &[String], threshold: f64) -> f64 {
    if texts.is_empty() {
        log::warn!("unique_percent over an empty corpus; defining it as 100.0");
        return 100.0;
    }
    let tokenized: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t)).collect();
    let token_sets: Vec<HashSet<&str>> = tokenized
        .iter()
        .map(|tokens| tokens.iter().map(String::as_str).collect())
        .collect();

    let unique_count = (0..texts.len())
        .into_par_iter()
        .filter(|&i| {
            (0..texts.len()).all(|j| {
                if i == j {
                    return true;
                }
                if threshold > 0.0 && token_sets[i].is_disjoint(&token_sets[j]) {
                    return true;
                }
                rouge_l_tokens(&tokenized[i], &tokenized[j]) < threshold
            })
        })
        .count();
    100.0 * unique_count as f64 / texts.len() as f64
}

/// Mean, over examples, of the number of n-grams that occur in exactly one
/// example's n-gram set. Repeats inside a single example do not spoil
/// uniqueness (sets, not multisets).
pub fn avg_unique_ngrams(texts: &[String], n: usize) -> f64 {
    assert!(n >= 1, "n-gram order must be at least 1");
    if texts.is_empty() {
        log::warn!("avg_unique_ngrams over an empty corpus; defining it as 0.0");
        return 0.0;
    }
    let grams_per_example: Vec<BTreeSet<String>> = texts
        .iter()
        .map(|text| {
            let tokens = tokenize(text);
            tokens
                .windows(n)
                .map(|w| w.join(" "))
                .collect::<BTreeSet<String>>()
        })
        .collect();

    let mut occurrences: HashMap<&str, u32> = HashMap::new();
    for grams in &grams_per_example {
        for gram in grams {
            let slot = occurrences.entry(gram.as_str()).or_insert(0);
            *slot = slot.saturating_add(1);
        }
    }

    let total: usize = grams_per_example
        .iter()
        .map(|grams| {
            grams
                .iter()
                .filter(|g| occurrences[g.as_str()] == 1)
                .count()
        })
        .sum();
    total as f64 / texts.len() as f64
}

/// Number of distinct (dataset_id, config_name) pairs among `sources`.
pub fn count_sources<'a>(sources: impl IntoIterator<Item = &'a RowSource>) -> usize {
    sources
        .into_iter()
        .map(|s| SourceId::new(s.dataset_id.clone(), s.config_name.clone()))
        .collect::<BTreeSet<_>>()
        .len()
}

/// Builds the full report for one generated dataset. `texts` is the field
/// selection used for uniqueness (by default input + "\n" + output).
pub fn analyze(texts: &[String], sources: &[RowSource], threshold: f64) -> DiversityReport {
    DiversityReport {
        unique_percent: unique_percent(texts, threshold),
        avg_unique_unigrams: avg_unique_ngrams(texts, 1),
        avg_unique_bigrams: avg_unique_ngrams(texts, 2),
        n_sources: count_sources(sources),
        n_examples: texts.len(),
        threshold,
    }
}

#[derive(Serialize, Deserialize)]
struct DumpHeader {
    dim: usize,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct DumpRecord {
    id: usize,
    vector: Vec<f32>,
}

/// Writes raw embeddings for external visualization tools: a JSONL file
/// with a `{dim, count}` header line followed by one `{id, vector}` record
/// per input text.
pub fn embedding_dump(
    texts: &[String],
    encoder: &dyn Encoder,
    path: &Path,
) -> Result<(), DiversityError> {
    let io = |source| DiversityError::Io {
        path: path.to_path_buf(),
        source,
    };
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let vectors = encoder.embed_batch(&refs)?;
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    let header = DumpHeader {
        dim: encoder.dim(),
        count: texts.len(),
    };
    writeln!(out, "{}", serde_json::to_string(&header).expect("header")).map_err(io)?;
    for (id, vector) in vectors.iter().enumerate() {
        let record = DumpRecord {
            id,
            vector: vector.values().to_vec(),
        };
        writeln!(out, "{}", serde_json::to_string(&record).expect("record")).map_err(io)?;
    }
    out.flush().map_err(io)?;
    Ok(())
}
