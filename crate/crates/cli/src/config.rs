//! Pipeline configuration: one declarative TOML document holding the full
//! run recipe. Environment variables carry only secrets (API keys, bearer
//! tokens). Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use rebase_core::encoder::{EncoderRegistry, EncoderSettings};
use rebase_core::ingest::{RegistryConfig, DEFAULT_MAX_CELL_CHARS};
use rebase_core::llm::{LlmRegistry, LlmSettings};
use rebase_core::retrieval::TaskSpec;
use rebase_core::transform::{PriceTable, TransformOptions};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    task: Option<PathBuf>,
    cache_dir: Option<PathBuf>,
    n: Option<usize>,
    #[serde(default)]
    cot: bool,
    #[serde(default)]
    filter: bool,
    max_cell_chars: Option<usize>,
    threshold: Option<f64>,
    #[serde(default)]
    datasets: Vec<RawDataset>,
    registry: Option<RawRegistry>,
    encoder: Option<RawEncoder>,
    #[serde(default)]
    llm: RawLlm,
    #[serde(default)]
    transform: RawTransform,
    #[serde(default)]
    outputs: RawOutputs,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    id: String,
    #[serde(default)]
    config: String,
    max_rows: Option<usize>,
    local_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegistry {
    rows_url: String,
    #[serde(default)]
    meta_url: String,
    page_size: Option<usize>,
    token_env: Option<String>,
    max_retries: Option<u32>,
    retry_backoff_ms: Option<u64>,
    timeout_ms: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEncoder {
    backend: Option<String>,
    dim: Option<usize>,
    endpoint: Option<String>,
    api_key_env: Option<String>,
    batch_size: Option<usize>,
    concurrency: Option<usize>,
    max_retries: Option<u32>,
    retry_backoff_ms: Option<u64>,
    timeout_ms: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLlm {
    backend: Option<String>,
    model_id: Option<String>,
    endpoint: Option<String>,
    api_key_env: Option<String>,
    temperature: Option<f64>,
    max_tokens: Option<u32>,
    max_retries: Option<u32>,
    retry_backoff_ms: Option<u64>,
    timeout_ms: Option<u64>,
    price: Option<RawPrice>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPrice {
    prompt: f64,
    completion: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTransform {
    retries: Option<u32>,
    concurrency: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutputs {
    store: Option<PathBuf>,
    retrieved: Option<PathBuf>,
    dataset: Option<PathBuf>,
    report: Option<PathBuf>,
    embeddings: Option<PathBuf>,
}

/// One dataset to ingest: from a local directory when `local_path` is set,
/// from the registry otherwise.
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub id: String,
    pub config: String,
    pub max_rows: usize,
    pub local_path: Option<PathBuf>,
}

/// Output artifact locations.
#[derive(Debug, Clone)]
pub struct OutputPaths {
    pub store: PathBuf,
    pub retrieved: PathBuf,
    pub dataset: PathBuf,
    pub report: PathBuf,
    pub embeddings: Option<PathBuf>,
}

/// A fully validated run recipe.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub task_path: PathBuf,
    pub task: TaskSpec,
    /// Top-N override; the task file's `n` applies when absent.
    pub n: Option<usize>,
    pub cache_dir: PathBuf,
    pub datasets: Vec<DatasetSpec>,
    pub registry: Option<RegistryConfig>,
    pub encoder: EncoderSettings,
    pub llm: LlmSettings,
    pub transform: TransformOptions,
    pub max_cell_chars: usize,
    pub threshold: f64,
    pub outputs: OutputPaths,
}

impl ResolvedConfig {
    /// Effective top-N for retrieval.
    pub fn top_n(&self) -> usize {
        self.n.unwrap_or(self.task.n)
    }
}

fn resolve(base: &Path, path: PathBuf) -> PathBuf {
    if path.is_absolute() {
        path
    } else {
        base.join(path)
    }
}

/// Parses and validates a config file, collecting every problem rather than
/// stopping at the first.
pub fn validate_config(path: &Path) -> Result<ResolvedConfig, Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| vec![format!("cannot read config {}: {e}", path.display())])?;
    let raw: RawConfig =
        toml::from_str(&text).map_err(|e| vec![format!("config parse error: {e}")])?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();

    let mut errors = Vec::new();

    // Encoder section: backend and dim are required.
    let encoder = match &raw.encoder {
        None => {
            errors.push("encoder section is missing".to_string());
            EncoderSettings::default()
        }
        Some(enc) => {
            let defaults = EncoderSettings::default();
            let backend = match &enc.backend {
                Some(b) => b.clone(),
                None => {
                    errors.push("encoder.backend is missing".to_string());
                    defaults.backend.clone()
                }
            };
            let dim = match enc.dim {
                Some(0) => {
                    errors.push("encoder.dim must be positive".to_string());
                    defaults.dim
                }
                Some(d) => d,
                None => {
                    errors.push("encoder.dim is missing".to_string());
                    defaults.dim
                }
            };
            EncoderSettings {
                backend,
                dim,
                endpoint: enc.endpoint.clone(),
                api_key_env: enc.api_key_env.clone().unwrap_or(defaults.api_key_env),
                batch_size: enc.batch_size.unwrap_or(defaults.batch_size),
                concurrency: enc.concurrency.unwrap_or(defaults.concurrency),
                max_retries: enc.max_retries.unwrap_or(defaults.max_retries),
                retry_backoff_ms: enc.retry_backoff_ms.unwrap_or(defaults.retry_backoff_ms),
                timeout_ms: enc.timeout_ms.unwrap_or(defaults.timeout_ms),
            }
        }
    };
    let encoder_names = EncoderRegistry::with_builtins();
    if !encoder_names.names().contains(&encoder.backend.as_str()) {
        errors.push(format!(
            "unknown encoder backend `{}`; valid backends: {}",
            encoder.backend,
            encoder_names.names().join(", ")
        ));
    } else if encoder.backend == "remote" && encoder.endpoint.is_none() {
        errors.push("encoder.endpoint is required for the remote backend".to_string());
    }

    // LLM section: everything has defaults except http's endpoint.
    let llm_defaults = LlmSettings::default();
    let llm = LlmSettings {
        backend: raw.llm.backend.clone().unwrap_or(llm_defaults.backend),
        model_id: raw.llm.model_id.clone().unwrap_or(llm_defaults.model_id),
        endpoint: raw.llm.endpoint.clone(),
        api_key_env: raw.llm.api_key_env.clone().unwrap_or(llm_defaults.api_key_env),
        temperature: raw.llm.temperature.unwrap_or(llm_defaults.temperature),
        max_tokens: raw.llm.max_tokens.unwrap_or(llm_defaults.max_tokens),
        max_retries: raw.llm.max_retries.unwrap_or(llm_defaults.max_retries),
        retry_backoff_ms: raw
            .llm
            .retry_backoff_ms
            .unwrap_or(llm_defaults.retry_backoff_ms),
        timeout_ms: raw.llm.timeout_ms.unwrap_or(llm_defaults.timeout_ms),
    };
    let llm_names = LlmRegistry::with_builtins();
    if !llm_names.names().contains(&llm.backend.as_str()) {
        errors.push(format!(
            "unknown llm backend `{}`; valid backends: {}",
            llm.backend,
            llm_names.names().join(", ")
        ));
    } else if llm.backend == "http" && llm.endpoint.is_none() {
        errors.push("llm.endpoint is required for the http backend".to_string());
    }

    if raw.datasets.is_empty() {
        errors.push("datasets list is empty; at least one dataset is required".to_string());
    }
    let mut datasets = Vec::new();
    for (i, d) in raw.datasets.iter().enumerate() {
        if d.id.is_empty() {
            errors.push(format!("datasets[{i}].id is empty"));
        }
        let max_rows = d.max_rows.unwrap_or(1000);
        if max_rows == 0 {
            errors.push(format!("datasets[{i}].max_rows must be positive"));
        }
        if d.local_path.is_none() && raw.registry.is_none() {
            errors.push(format!(
                "datasets[{i}] has no local_path and no [registry] section is configured"
            ));
        }
        datasets.push(DatasetSpec {
            id: d.id.clone(),
            config: d.config.clone(),
            max_rows,
            local_path: d.local_path.clone().map(|p| resolve(&base, p)),
        });
    }

    let registry = raw.registry.as_ref().map(|r| {
        let defaults = RegistryConfig::default();
        RegistryConfig {
            rows_url: r.rows_url.clone(),
            meta_url: r.meta_url.clone(),
            page_size: r.page_size.unwrap_or(defaults.page_size),
            token_env: r.token_env.clone().unwrap_or(defaults.token_env),
            max_retries: r.max_retries.unwrap_or(defaults.max_retries),
            retry_backoff_ms: r.retry_backoff_ms.unwrap_or(defaults.retry_backoff_ms),
            timeout_ms: r.timeout_ms.unwrap_or(defaults.timeout_ms),
        }
    });
    if let Some(r) = &registry {
        if r.rows_url.is_empty() {
            errors.push("registry.rows_url is empty".to_string());
        }
    }

    if let Some(0) = raw.n {
        errors.push("n must be positive".to_string());
    }
    let threshold = raw.threshold.unwrap_or(0.7);
    if !(0.0..=1.0).contains(&threshold) {
        errors.push(format!("threshold {threshold} is outside [0, 1]"));
    }

    // Task file: must exist, parse, and validate.
    let task_path = match &raw.task {
        Some(p) => resolve(&base, p.clone()),
        None => {
            errors.push("task is missing (path to the task json)".to_string());
            PathBuf::new()
        }
    };
    let task = if task_path.as_os_str().is_empty() {
        None
    } else {
        match TaskSpec::from_json_file(&task_path) {
            Ok(task) => match task.validate() {
                Ok(()) => Some(task),
                Err(e) => {
                    errors.push(format!("task file {}: {e}", task_path.display()));
                    None
                }
            },
            Err(e) => {
                errors.push(format!("task file {}: {e}", task_path.display()));
                None
            }
        }
    };

    let transform = TransformOptions {
        cot: raw.cot,
        filter_enabled: raw.filter,
        retries: raw.transform.retries.unwrap_or(3),
        concurrency: raw.transform.concurrency.unwrap_or(4),
        model_id: llm.model_id.clone(),
        temperature: llm.temperature,
        max_tokens: llm.max_tokens,
        price: raw.llm.price.map(|p| PriceTable {
            prompt: p.prompt,
            completion: p.completion,
        }),
    };

    let cache_dir = resolve(&base, raw.cache_dir.clone().unwrap_or_else(|| ".rebase-cache".into()));
    let outputs = OutputPaths {
        store: resolve(&base, raw.outputs.store.clone().unwrap_or_else(|| "store.bin".into())),
        retrieved: resolve(
            &base,
            raw.outputs.retrieved.clone().unwrap_or_else(|| "retrieved.jsonl".into()),
        ),
        dataset: resolve(
            &base,
            raw.outputs.dataset.clone().unwrap_or_else(|| "dataset.jsonl".into()),
        ),
        report: resolve(
            &base,
            raw.outputs.report.clone().unwrap_or_else(|| "report.json".into()),
        ),
        embeddings: raw.outputs.embeddings.clone().map(|p| resolve(&base, p)),
    };

    if !errors.is_empty() {
        return Err(errors);
    }
    Ok(ResolvedConfig {
        task_path,
        task: task.expect("validated"),
        n: raw.n,
        cache_dir,
        datasets,
        registry,
        encoder,
        llm,
        transform,
        max_cell_chars: raw.max_cell_chars.unwrap_or(DEFAULT_MAX_CELL_CHARS),
        threshold,
        outputs,
    })
}
