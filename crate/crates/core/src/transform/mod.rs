//! Turns retrieved rows into `(input, output)` training examples via an LLM:
//! prompt rendering, strict response parsing with retries, the optional
//! yes/no filter pass, and order-preserving parallel execution with
//! discard and cost accounting.

pub mod export;
pub mod prompt;

pub use export::{read_dataset_jsonl, write_dataset_jsonl, DatasetLine};

use std::collections::BTreeMap;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::ingest::RowRecord;
use crate::llm::{LlmClient, LlmRequest};
use crate::retrieval::TaskSpec;
use crate::util::parallel_map_indexed;
use prompt::{first_json_object, parse_yes_no, render_filter_prompt, render_transform_prompt};

/// Provenance of a transformed example: the retrieved row it came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RowSource {
    pub dataset_id: String,
    #[serde(default)]
    pub config_name: String,
    pub row_num: u64,
}

impl From<&RowRecord> for RowSource {
    fn from(row: &RowRecord) -> Self {
        Self {
            dataset_id: row.dataset_id.clone(),
            config_name: row.config_name.clone(),
            row_num: row.row_num,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt: u64,
    pub completion: u64,
}

impl AddAssign for TokenUsage {
    fn add_assign(&mut self, other: Self) {
        self.prompt += other.prompt;
        self.completion += other.completion;
    }
}

/// One finetuning-ready example with provenance and cost attribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformedExample {
    pub input: String,
    pub output: String,
    pub source: RowSource,
    pub cot: bool,
    pub llm_model_id: String,
    pub cost_tokens: TokenUsage,
    /// LLM calls spent on this row before a response parsed.
    pub attempts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    /// No response with exactly non-empty `input` and `output` within the
    /// retry budget.
    BadSchema,
    /// The model refused to answer.
    Refusal,
    /// Transport kept failing after the client's own retries.
    Transport,
    /// Dropped by the optional filter pass.
    Filtered,
}

impl DiscardReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            DiscardReason::BadSchema => "bad_schema",
            DiscardReason::Refusal => "refusal",
            DiscardReason::Transport => "transport",
            DiscardReason::Filtered => "filtered",
        }
    }
}

/// One dropped row, with the last raw response kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discard {
    pub source: RowSource,
    pub reason: DiscardReason,
    pub detail: Option<String>,
    pub last_response: Option<String>,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RowOutcome {
    Kept(TransformedExample),
    Discarded(Discard),
}

/// USD per token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    pub prompt: f64,
    pub completion: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostReport {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Present when a price table is configured.
    pub cost_usd: Option<f64>,
}

/// Per-reason discard accounting. `kept + discards.len()` always equals
/// `input_rows`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DiscardReport {
    pub input_rows: usize,
    pub kept: usize,
    pub counts: BTreeMap<String, usize>,
    pub discards: Vec<Discard>,
    /// Percentage of transform survivors that also survived the filter;
    /// `None` when filtering is off.
    pub filter_remaining_percent: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformOptions {
    pub cot: bool,
    /// Filter defaults to off; it is an opt-in ablation pass.
    pub filter_enabled: bool,
    /// Maximum LLM calls per row while the response fails to parse.
    pub retries: u32,
    pub concurrency: usize,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub price: Option<PriceTable>,
}

impl Default for TransformOptions {
    fn default() -> Self {
        Self {
            cot: false,
            filter_enabled: false,
            retries: 3,
            concurrency: 4,
            model_id: "mock-transformer".into(),
            temperature: 0.7,
            max_tokens: 1024,
            price: None,
        }
    }
}

enum ParseFailure {
    Refusal,
    Invalid(String),
}

const REFUSAL_OPENERS: &[&str] = &[
    "i cannot",
    "i can't",
    "i can not",
    "i won't",
    "i will not",
    "i'm sorry",
    "i am sorry",
    "i apologize",
    "as an ai",
];

fn looks_like_refusal(text: &str) -> bool {
    let lowered = text.trim_start().to_lowercase();
    REFUSAL_OPENERS.iter().any(|p| lowered.starts_with(p))
}

/// Extracts the `(input, output)` pair from a raw LLM response. The first
/// balanced JSON object must have exactly those two keys, both non-blank
/// strings; extra keys are a parse failure, not ignored.
fn parse_transform_response(text: &str) -> Result<(String, String), ParseFailure> {
    let block = match first_json_object(text) {
        Some(block) => block,
        None if looks_like_refusal(text) => return Err(ParseFailure::Refusal),
        None => return Err(ParseFailure::Invalid("no json object in response".into())),
    };
    let value: serde_json::Value = serde_json::from_str(block)
        .map_err(|e| ParseFailure::Invalid(format!("unparseable json object: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| ParseFailure::Invalid("response json is not an object".into()))?;
    if obj.len() != 2 || !obj.contains_key("input") || !obj.contains_key("output") {
        let keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        return Err(ParseFailure::Invalid(format!(
            "expected exactly the fields input and output, got [{}]",
            keys.join(", ")
        )));
    }
    let field = |name: &str| -> Result<String, ParseFailure> {
        let s = obj[name]
            .as_str()
            .ok_or_else(|| ParseFailure::Invalid(format!("{name} is not a string")))?;
        if s.trim().is_empty() {
            return Err(ParseFailure::Invalid(format!("{name} is empty")));
        }
        Ok(s.to_string())
    };
    Ok((field("input")?, field("output")?))
}

/// Transforms one row. Parse failures are retried up to `opts.retries`
/// total attempts; refusals discard immediately; transport failures that
/// survived the client's own retries discard the row so the rest of the
/// run can proceed.
pub fn transform_row(
    row: &RowRecord,
    task: &TaskSpec,
    llm: &dyn LlmClient,
    opts: &TransformOptions,
) -> (RowOutcome, TokenUsage) {
    let source = RowSource::from(row);
    let request = LlmRequest {
        model_id: opts.model_id.clone(),
        prompt: render_transform_prompt(task, row, opts.cot),
        temperature: opts.temperature,
        max_tokens: opts.max_tokens,
    };
    let mut usage = TokenUsage::default();
    let max_attempts = opts.retries.max(1);
    let mut last_response = None;
    let mut last_detail = None;

    for attempt in 1..=max_attempts {
        let response = match llm.complete(&request) {
            Ok(r) => r,
            Err(e) => {
                return (
                    RowOutcome::Discarded(Discard {
                        source,
                        reason: DiscardReason::Transport,
                        detail: Some(e.to_string()),
                        last_response: None,
                        attempts: attempt,
                    }),
                    usage,
                )
            }
        };
        usage += TokenUsage {
            prompt: response.prompt_tokens,
            completion: response.completion_tokens,
        };
        match parse_transform_response(&response.text) {
            Ok((input, output)) => {
                return (
                    RowOutcome::Kept(TransformedExample {
                        input,
                        output,
                        source,
                        cot: opts.cot,
                        llm_model_id: opts.model_id.clone(),
                        cost_tokens: usage,
                        attempts: attempt,
                    }),
                    usage,
                )
            }
            Err(ParseFailure::Refusal) => {
                return (
                    RowOutcome::Discarded(Discard {
                        source,
                        reason: DiscardReason::Refusal,
                        detail: Some("model refused".into()),
                        last_response: Some(response.text),
                        attempts: attempt,
                    }),
                    usage,
                )
            }
            Err(ParseFailure::Invalid(detail)) => {
                last_response = Some(response.text);
                last_detail = Some(detail);
            }
        }
    }

    (
        RowOutcome::Discarded(Discard {
            source,
            reason: DiscardReason::BadSchema,
            detail: last_detail,
            last_response,
            attempts: max_attempts,
        }),
        usage,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterDecision {
    Keep,
    Drop,
}

/// Asks the LLM whether `example` fits the task. Parsing is fail-open: an
/// unparseable verdict (or a dead transport) keeps the candidate, with a
/// logged warning.
pub fn filter_example(
    example: &TransformedExample,
    task: &TaskSpec,
    llm: &dyn LlmClient,
    retries: u32,
) -> (FilterDecision, TokenUsage) {
    let request = LlmRequest {
        model_id: example.llm_model_id.clone(),
        prompt: render_filter_prompt(task, &example.input, &example.output),
        temperature: 0.0,
        max_tokens: 16,
    };
    let mut usage = TokenUsage::default();
    for _ in 1..=retries.max(1) {
        let response = match llm.complete(&request) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("filter transport failed, keeping candidate: {e}");
                return (FilterDecision::Keep, usage);
            }
        };
        usage += TokenUsage {
            prompt: response.prompt_tokens,
            completion: response.completion_tokens,
        };
        match parse_yes_no(&response.text) {
            Some(true) => return (FilterDecision::Keep, usage),
            Some(false) => return (FilterDecision::Drop, usage),
            None => continue,
        }
    }
    log::warn!(
        "filter verdict unparseable after {retries} attempts, keeping candidate from {:?}",
        example.source
    );
    (FilterDecision::Keep, usage)
}

/// Everything `run_transform` produces.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformRun {
    pub examples: Vec<TransformedExample>,
    pub report: DiscardReport,
    pub cost: CostReport,
}

/// Transforms every row (input order preserved, up to `opts.concurrency`
/// in-flight LLM calls), optionally filters the survivors, and accounts for
/// every discard and every token spent.
pub fn run_transform(
    rows: &[RowRecord],
    task: &TaskSpec,
    llm: &dyn LlmClient,
    opts: &TransformOptions,
) -> TransformRun {
    let mut total = TokenUsage::default();
    let outcomes = parallel_map_indexed(rows, opts.concurrency, |_, row| {
        transform_row(row, task, llm, opts)
    });

    let mut examples = Vec::new();
    let mut discards = Vec::new();
    for (outcome, usage) in outcomes {
        total += usage;
        match outcome {
            RowOutcome::Kept(example) => examples.push(example),
            RowOutcome::Discarded(discard) => discards.push(discard),
        }
    }

    let mut filter_remaining_percent = None;
    if opts.filter_enabled {
        let candidates = std::mem::take(&mut examples);
        let entering = candidates.len();
        let decisions = parallel_map_indexed(&candidates, opts.concurrency, |_, example| {
            filter_example(example, task, llm, opts.retries)
        });
        for (example, (decision, usage)) in candidates.into_iter().zip(decisions) {
            total += usage;
            match decision {
                FilterDecision::Keep => examples.push(example),
                FilterDecision::Drop => discards.push(Discard {
                    source: example.source.clone(),
                    reason: DiscardReason::Filtered,
                    detail: None,
                    last_response: None,
                    attempts: 1,
                }),
            }
        }
        filter_remaining_percent = Some(if entering == 0 {
            100.0
        } else {
            100.0 * examples.len() as f64 / entering as f64
        });
    }

    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for discard in &discards {
        *counts.entry(discard.reason.as_str().to_string()).or_default() += 1;
    }
    let report = DiscardReport {
        input_rows: rows.len(),
        kept: examples.len(),
        counts,
        discards,
        filter_remaining_percent,
    };
    let cost = CostReport {
        prompt_tokens: total.prompt,
        completion_tokens: total.completion,
        cost_usd: opts.price.map(|p| {
            total.prompt as f64 * p.prompt + total.completion as f64 * p.completion
        }),
    };
    TransformRun {
        examples,
        report,
        cost,
    }
}

#[cfg(test)]
mod tests;
