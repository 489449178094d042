//! Deterministic offline completion backend.
//!
//! The mock is a pure function of the prompt text, so pipeline runs with it
//! are byte-reproducible and it is safe to call concurrently:
//!
//! - filter prompts (ending in the yes/no anchor) are answered `"Yes"`;
//! - transform prompts are answered with `{"input", "output"}` built from
//!   the first two non-empty fields of the serialized dataset row, which is
//!   the last JSON object in the prompt;
//! - token counts are whitespace token counts of prompt and response.

use super::{LlmClient, LlmError, LlmRequest, LlmResponse};
use crate::transform::prompt::{COT_EXAMPLE_NOTE, FILTER_ANCHOR};
use crate::util::balanced_json_objects;

#[derive(Debug, Default, Clone)]
pub struct MockLlm;

impl MockLlm {
    pub fn new() -> Self {
        Self
    }

    fn transform_reply(prompt: &str) -> String {
        let row_json = balanced_json_objects(prompt).into_iter().last();
        let mut fields: Vec<String> = Vec::new();
        if let Some(block) = row_json {
            if let Ok(serde_json::Value::Object(map)) = serde_json::from_str(block) {
                for value in map.values() {
                    if let Some(s) = value.as_str() {
                        if !s.trim().is_empty() {
                            fields.push(s.to_string());
                        }
                    }
                }
            }
        }
        let input = fields
            .first()
            .cloned()
            .unwrap_or_else(|| "(no source fields)".to_string());
        let mut output = fields.get(1).cloned().unwrap_or_else(|| input.clone());
        if prompt.contains(COT_EXAMPLE_NOTE) {
            output = format!(
                "Reading the retrieved fields step by step, the relevant value is `{output}`. Answer: {output}"
            );
        }
        serde_json::json!({ "input": input, "output": output }).to_string()
    }
}

impl LlmClient for MockLlm {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let prompt = request.prompt.trim_end();
        let text = if prompt.ends_with(FILTER_ANCHOR) {
            "Yes".to_string()
        } else {
            Self::transform_reply(prompt)
        };
        Ok(LlmResponse {
            prompt_tokens: request.prompt.split_whitespace().count() as u64,
            completion_tokens: text.split_whitespace().count() as u64,
            text,
        })
    }
}
