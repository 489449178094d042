//! Builds a column-level embedding datastore over many labeled datasets,
//! retrieves the rows most relevant to a task, and transforms them with an
//! LLM into a finetuning-ready `(input, output)` dataset.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`ingest`] — fetch dataset rows and descriptions from a registry HTTP
//!   API or local directories, normalized into [`ingest::RowRecord`]s.
//! - [`encoder`] — text → fixed-dimension embedding vectors behind a
//!   pluggable [`encoder::Encoder`] trait; backends are registered by name
//!   in an [`encoder::EncoderRegistry`].
//! - [`datastore`] — build, persist, and load the keyed collection of cell
//!   and dataset-description embeddings plus the raw row payloads.
//! - [`retrieval`] — per-cell query/answer scoring, row-level max, dataset
//!   score, and deterministic top-N selection.
//! - [`llm`] — completion-client abstraction with HTTP and deterministic
//!   mock backends, registered by name in an [`llm::LlmRegistry`].
//! - [`transform`] — prompt rendering, response parsing, the optional
//!   yes/no filter pass, and dataset export.
//! - [`diversity`] — ROUGE-L uniqueness, unique n-gram averages, source
//!   counting, and raw embedding dumps.

pub mod datastore;
pub mod diversity;
pub mod encoder;
pub mod ingest;
pub mod llm;
pub mod retrieval;
pub mod source;
pub mod transform;

mod util;
