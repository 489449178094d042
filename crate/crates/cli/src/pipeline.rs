//! Stage orchestration with content-hash caching and a run manifest.
//!
//! Stages run in order — ingest → build → retrieve → transform → analyze —
//! each keyed by a hash of its own inputs chained with the upstream stage's
//! hash, so changing any stage's configuration invalidates it and everything
//! downstream. A stage whose hash and outputs are both intact is skipped.
//! The manifest is rewritten after every stage, so a failed run records
//! exactly which stage died while earlier artifacts stay usable.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rebase_core::datastore::{self, BuildOptions, StoreError};
use rebase_core::diversity;
use rebase_core::encoder::{EncoderError, EncoderRegistry};
use rebase_core::ingest::{self, IngestError, IngestOutcome, RegistryClient};
use rebase_core::llm::LlmRegistry;
use rebase_core::retrieval::{self, RetrievalError};
use rebase_core::transform::{self, CostReport};

use crate::config::{DatasetSpec, ResolvedConfig};
use crate::events::EventLog;
use crate::exit;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Validation,
    Stage,
    External,
}

#[derive(Debug)]
pub struct PipelineError {
    pub stage: String,
    pub kind: FailureKind,
    pub message: String,
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            FailureKind::Validation => exit::VALIDATION,
            FailureKind::Stage => exit::STAGE,
            FailureKind::External => exit::EXTERNAL,
        }
    }
}

impl std::fmt::Display for PipelineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage {} failed: {}", self.stage, self.message)
    }
}

fn stage_err(stage: &str, kind: FailureKind, message: impl ToString) -> PipelineError {
    PipelineError {
        stage: stage.to_string(),
        kind,
        message: message.to_string(),
    }
}

fn classify_ingest(e: &IngestError) -> FailureKind {
    if e.is_retryable() {
        FailureKind::External
    } else {
        FailureKind::Stage
    }
}

fn classify_store(e: &StoreError) -> FailureKind {
    match e {
        StoreError::Encoder { source, .. } if source.is_retryable() => FailureKind::External,
        _ => FailureKind::Stage,
    }
}

fn classify_retrieval(e: &RetrievalError) -> FailureKind {
    match e {
        RetrievalError::Encoder(enc) if enc.is_retryable() => FailureKind::External,
        _ => FailureKind::Stage,
    }
}

fn classify_encoder(e: &EncoderError) -> FailureKind {
    if e.is_retryable() {
        FailureKind::External
    } else {
        FailureKind::Stage
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub input_hash: String,
    /// "ran", "skipped", or "failed".
    pub status: String,
    pub duration_ms: u64,
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub counters: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub stages: Vec<StageRecord>,
    #[serde(default)]
    pub cost: Option<CostReport>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Option<Self> {
        let bytes = fs::read(path).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    fn save(&self, path: &Path) {
        if let Ok(json) = serde_json::to_vec_pretty(self) {
            let _ = fs::write(path, json);
        }
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("serializable")
}

/// Directory name for one ingested dataset inside the cache.
pub fn dataset_dirname(id: &str, config: &str) -> String {
    let sanitize = |s: &str| -> String {
        s.chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
            .collect()
    };
    if config.is_empty() {
        sanitize(id)
    } else {
        format!("{}__{}", sanitize(id), sanitize(config))
    }
}

fn dataset_spec_fingerprint(spec: &DatasetSpec) -> serde_json::Value {
    serde_json::json!({
        "id": spec.id,
        "config": spec.config,
        "max_rows": spec.max_rows,
        "local": spec.local_path.is_some(),
    })
}

/// Hash of everything the ingest stage depends on: dataset specs, registry
/// settings, and the bytes of local source files.
fn ingest_input_hash(cfg: &ResolvedConfig) -> Result<String, PipelineError> {
    let mut parts: Vec<Vec<u8>> = vec![b"ingest".to_vec()];
    for spec in &cfg.datasets {
        parts.push(json_bytes(&dataset_spec_fingerprint(spec)));
        if let Some(path) = &spec.local_path {
            for file in ["meta.json", "rows.jsonl"] {
                let fp = path.join(file);
                let bytes = fs::read(&fp).map_err(|e| {
                    stage_err(
                        "ingest",
                        FailureKind::Validation,
                        format!("cannot read {}: {e}", fp.display()),
                    )
                })?;
                parts.push(bytes);
            }
        }
    }
    if let Some(registry) = &cfg.registry {
        parts.push(json_bytes(registry));
    }
    let refs: Vec<&[u8]> = parts.iter().map(Vec::as_slice).collect();
    Ok(sha256_hex(&refs))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IngestStageReport {
    pub datasets: Vec<IngestDatasetReport>,
    pub total_rows: usize,
    pub total_skipped: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IngestDatasetReport {
    pub dataset_id: String,
    pub config_name: String,
    pub rows: usize,
    pub skipped: usize,
    pub directory: String,
}

/// Ingests every configured dataset into `out_dir` (the on-disk local
/// format) and writes a skip report next to them.
pub fn stage_ingest(cfg: &ResolvedConfig, out_dir: &Path) -> Result<IngestStageReport, PipelineError> {
    let as_stage = |e: IngestError| stage_err("ingest", classify_ingest(&e), e);
    fs::create_dir_all(out_dir)
        .map_err(|e| stage_err("ingest", FailureKind::Stage, format!("mkdir: {e}")))?;

    let client = match &cfg.registry {
        Some(registry) => Some(RegistryClient::new(registry.clone()).map_err(as_stage)?),
        None => None,
    };

    let mut reports = Vec::new();
    let mut total_rows = 0;
    let mut total_skipped = 0;
    for spec in &cfg.datasets {
        let outcome: IngestOutcome = match &spec.local_path {
            Some(path) => {
                let mut out = ingest::load_local(path).map_err(as_stage)?;
                out.rows.truncate(spec.max_rows);
                out.meta.row_count = out.rows.len() as u64;
                // The configured identity wins over whatever the directory says.
                if out.meta.dataset_id != spec.id || out.meta.config_name != spec.config {
                    out.meta.dataset_id = spec.id.clone();
                    out.meta.config_name = spec.config.clone();
                    for row in &mut out.rows {
                        row.dataset_id = spec.id.clone();
                        row.config_name = spec.config.clone();
                    }
                }
                out
            }
            None => {
                let client = client.as_ref().ok_or_else(|| {
                    stage_err(
                        "ingest",
                        FailureKind::Validation,
                        format!("dataset {} needs a registry section", spec.id),
                    )
                })?;
                client
                    .fetch_dataset(&spec.id, &spec.config, spec.max_rows)
                    .map_err(as_stage)?
            }
        };

        let dirname = dataset_dirname(&spec.id, &spec.config);
        let dir = out_dir.join(&dirname);
        ingest::save_local(&dir, &outcome.meta, &outcome.rows).map_err(as_stage)?;
        total_rows += outcome.rows.len();
        total_skipped += outcome.skipped.len();
        reports.push(IngestDatasetReport {
            dataset_id: spec.id.clone(),
            config_name: spec.config.clone(),
            rows: outcome.rows.len(),
            skipped: outcome.skipped.len(),
            directory: dirname,
        });
    }

    let report = IngestStageReport {
        datasets: reports,
        total_rows,
        total_skipped,
    };
    let report_path = out_dir.join("ingest_report.json");
    fs::write(&report_path, serde_json::to_vec_pretty(&report).unwrap())
        .map_err(|e| stage_err("ingest", FailureKind::Stage, format!("write report: {e}")))?;
    Ok(report)
}

/// Loads previously ingested datasets back from the cache directory.
fn load_ingested(
    cfg: &ResolvedConfig,
    dir: &Path,
) -> Result<Vec<(ingest::DatasetMeta, Vec<ingest::RowRecord>)>, PipelineError> {
    let mut inputs = Vec::new();
    for spec in &cfg.datasets {
        let path = dir.join(dataset_dirname(&spec.id, &spec.config));
        let out = ingest::load_local(&path)
            .map_err(|e| stage_err("build", classify_ingest(&e), e))?;
        inputs.push((out.meta, out.rows));
    }
    Ok(inputs)
}

/// Builds the datastore from ingested datasets and persists it.
pub fn stage_build(
    cfg: &ResolvedConfig,
    ingested_dir: &Path,
    store_path: &Path,
    checkpoint: Option<PathBuf>,
) -> Result<datastore::StoreStats, PipelineError> {
    let inputs = load_ingested(cfg, ingested_dir)?;
    let encoder = EncoderRegistry::with_builtins()
        .build(&cfg.encoder)
        .map_err(|e| stage_err("build", classify_encoder(&e), e))?;
    let opts = BuildOptions {
        max_cell_chars: cfg.max_cell_chars,
        checkpoint,
        ..Default::default()
    };
    let store = datastore::build(&inputs, encoder.as_ref(), &opts)
        .map_err(|e| stage_err("build", classify_store(&e), e))?;
    datastore::persist(&store, store_path)
        .map_err(|e| stage_err("build", classify_store(&e), e))?;
    Ok(store.stats())
}

/// Retrieves the top-N rows for the task and writes `retrieved.jsonl`.
pub fn stage_retrieve(
    cfg: &ResolvedConfig,
    store_path: &Path,
    out_path: &Path,
) -> Result<usize, PipelineError> {
    let store = datastore::load(store_path)
        .map_err(|e| stage_err("retrieve", classify_store(&e), e))?;
    let encoder = EncoderRegistry::with_builtins()
        .build(&cfg.encoder)
        .map_err(|e| stage_err("retrieve", classify_encoder(&e), e))?;
    let mut task = cfg.task.clone();
    task.n = cfg.top_n();
    let results = retrieval::retrieve_top_n(&store, &task, encoder.as_ref())
        .map_err(|e| stage_err("retrieve", classify_retrieval(&e), e))?;
    retrieval::write_retrieved_jsonl(out_path, &results)
        .map_err(|e| stage_err("retrieve", FailureKind::Stage, e))?;
    Ok(results.len())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TransformStageReport {
    pub report: transform::DiscardReport,
    pub cost: CostReport,
}

/// Transforms retrieved rows into the exported dataset.
pub fn stage_transform(
    cfg: &ResolvedConfig,
    retrieved_path: &Path,
    dataset_path: &Path,
    report_path: Option<&Path>,
) -> Result<TransformStageReport, PipelineError> {
    let retrieved = retrieval::read_retrieved_jsonl(retrieved_path)
        .map_err(|e| stage_err("transform", FailureKind::Stage, e))?;
    let rows: Vec<_> = retrieved.iter().map(|r| r.row_record()).collect();
    let llm = LlmRegistry::with_builtins()
        .build(&cfg.llm)
        .map_err(|e| stage_err("transform", FailureKind::Stage, e))?;
    let run = transform::run_transform(&rows, &cfg.task, llm.as_ref(), &cfg.transform);
    transform::write_dataset_jsonl(dataset_path, &run.examples)
        .map_err(|e| stage_err("transform", FailureKind::Stage, e))?;
    let stage_report = TransformStageReport {
        report: run.report,
        cost: run.cost,
    };
    if let Some(path) = report_path {
        fs::write(path, serde_json::to_vec_pretty(&stage_report).unwrap())
            .map_err(|e| stage_err("transform", FailureKind::Stage, format!("write report: {e}")))?;
    }
    Ok(stage_report)
}

/// Diversity analysis over the exported dataset, plus the optional raw
/// embedding dump.
pub fn stage_analyze(
    cfg: &ResolvedConfig,
    dataset_path: &Path,
    report_path: &Path,
    embeddings_path: Option<&Path>,
) -> Result<diversity::DiversityReport, PipelineError> {
    let lines = transform::read_dataset_jsonl(dataset_path)
        .map_err(|e| stage_err("analyze", FailureKind::Stage, e))?;
    let texts: Vec<String> = lines
        .iter()
        .map(|l| format!("{}\n{}", l.input, l.output))
        .collect();
    let sources: Vec<_> = lines.iter().map(|l| l.source.clone()).collect();
    let report = diversity::analyze(&texts, &sources, cfg.threshold);
    fs::write(report_path, serde_json::to_vec_pretty(&report).unwrap())
        .map_err(|e| stage_err("analyze", FailureKind::Stage, format!("write report: {e}")))?;
    if let Some(path) = embeddings_path {
        let encoder = EncoderRegistry::with_builtins()
            .build(&cfg.encoder)
            .map_err(|e| stage_err("analyze", classify_encoder(&e), e))?;
        diversity::embedding_dump(&texts, encoder.as_ref(), path)
            .map_err(|e| stage_err("analyze", FailureKind::Stage, e))?;
    }
    Ok(report)
}

#[derive(Debug)]
pub struct RunSummary {
    pub manifest: RunManifest,
    pub manifest_path: PathBuf,
}

struct StageCtx<'a> {
    manifest: RunManifest,
    manifest_path: PathBuf,
    previous: Option<RunManifest>,
    events: &'a EventLog,
}

impl StageCtx<'_> {
    /// Runs (or skips) one stage. Skip requires an unchanged input hash in
    /// the previous manifest, a non-failed previous status, and every
    /// declared output present on disk.
    fn run<F>(
        &mut self,
        name: &str,
        input_hash: String,
        outputs: &[&Path],
        f: F,
    ) -> Result<(), PipelineError>
    where
        F: FnOnce() -> Result<serde_json::Value, PipelineError>,
    {
        let reusable = self
            .previous
            .as_ref()
            .and_then(|m| m.stage(name))
            .map(|s| s.input_hash == input_hash && s.status != "failed")
            .unwrap_or(false);
        let outputs_exist = outputs.iter().all(|p| p.exists());
        if reusable && outputs_exist {
            let prev = self
                .previous
                .as_ref()
                .and_then(|m| m.stage(name))
                .expect("checked");
            self.events.emit(name, "skipped", serde_json::json!({}));
            self.manifest.stages.push(StageRecord {
                name: name.to_string(),
                input_hash,
                status: "skipped".into(),
                duration_ms: 0,
                error: None,
                counters: prev.counters.clone(),
            });
            self.manifest.save(&self.manifest_path);
            return Ok(());
        }

        self.events.emit(name, "start", serde_json::json!({}));
        let start = Instant::now();
        match f() {
            Ok(counters) => {
                let duration_ms = start.elapsed().as_millis() as u64;
                self.events.emit(name, "complete", counters.clone());
                self.manifest.stages.push(StageRecord {
                    name: name.to_string(),
                    input_hash,
                    status: "ran".into(),
                    duration_ms,
                    error: None,
                    counters,
                });
                self.manifest.save(&self.manifest_path);
                Ok(())
            }
            Err(e) => {
                let duration_ms = start.elapsed().as_millis() as u64;
                self.events
                    .emit(name, "failed", serde_json::json!({ "error": e.message }));
                self.manifest.stages.push(StageRecord {
                    name: name.to_string(),
                    input_hash,
                    status: "failed".into(),
                    duration_ms,
                    error: Some(e.message.clone()),
                    counters: serde_json::Value::Null,
                });
                self.manifest.save(&self.manifest_path);
                Err(e)
            }
        }
    }
}

/// Runs the whole pipeline. Every stage is individually resumable from
/// cached artifacts; the manifest records config hash, per-stage hashes,
/// timings, and token costs.
pub fn run_pipeline(cfg: &ResolvedConfig) -> Result<RunSummary, PipelineError> {
    fs::create_dir_all(&cfg.cache_dir)
        .map_err(|e| stage_err("setup", FailureKind::Stage, format!("mkdir cache: {e}")))?;
    let events = EventLog::open(&cfg.cache_dir.join("events.jsonl"))
        .map_err(|e| stage_err("setup", FailureKind::Stage, format!("open events: {e}")))?;
    let manifest_path = cfg.cache_dir.join("manifest.json");
    let previous = RunManifest::load(&manifest_path);

    let task_bytes = fs::read(&cfg.task_path)
        .map_err(|e| stage_err("setup", FailureKind::Validation, format!("task file: {e}")))?;

    let ingest_hash = ingest_input_hash(cfg)?;
    let build_hash = sha256_hex(&[
        b"build",
        ingest_hash.as_bytes(),
        &json_bytes(&cfg.encoder),
        &json_bytes(&cfg.max_cell_chars),
    ]);
    let retrieve_hash = sha256_hex(&[
        b"retrieve",
        build_hash.as_bytes(),
        &task_bytes,
        &json_bytes(&cfg.top_n()),
        &json_bytes(&cfg.encoder),
    ]);
    let transform_hash = sha256_hex(&[
        b"transform",
        retrieve_hash.as_bytes(),
        &task_bytes,
        &json_bytes(&cfg.llm),
        &json_bytes(&cfg.transform),
    ]);
    let analyze_hash = sha256_hex(&[
        b"analyze",
        transform_hash.as_bytes(),
        &json_bytes(&cfg.threshold),
        &json_bytes(&cfg.outputs.embeddings.is_some()),
        &json_bytes(&cfg.encoder),
    ]);

    let mut ctx = StageCtx {
        manifest: RunManifest {
            config_hash: sha256_hex(&[&json_bytes(&ingest_hash), &task_bytes]),
            stages: Vec::new(),
            cost: None,
        },
        manifest_path: manifest_path.clone(),
        previous,
        events: &events,
    };

    let ingested_dir = cfg.cache_dir.join("ingested");
    let ingest_outputs: Vec<PathBuf> = cfg
        .datasets
        .iter()
        .map(|s| ingested_dir.join(dataset_dirname(&s.id, &s.config)).join("rows.jsonl"))
        .chain([ingested_dir.join("ingest_report.json")])
        .collect();
    let ingest_refs: Vec<&Path> = ingest_outputs.iter().map(PathBuf::as_path).collect();
    ctx.run("ingest", ingest_hash, &ingest_refs, || {
        let report = stage_ingest(cfg, &ingested_dir)?;
        Ok(serde_json::json!({
            "datasets": report.datasets.len(),
            "rows": report.total_rows,
            "skipped": report.total_skipped,
        }))
    })?;

    ctx.run("build", build_hash, &[&cfg.outputs.store], || {
        let stats = stage_build(
            cfg,
            &ingested_dir,
            &cfg.outputs.store,
            Some(cfg.cache_dir.join("build.checkpoint")),
        )?;
        Ok(serde_json::to_value(stats).unwrap())
    })?;

    ctx.run("retrieve", retrieve_hash, &[&cfg.outputs.retrieved], || {
        let n = stage_retrieve(cfg, &cfg.outputs.store, &cfg.outputs.retrieved)?;
        Ok(serde_json::json!({ "retrieved": n, "requested": cfg.top_n() }))
    })?;

    let transform_report_path = cfg.cache_dir.join("transform_report.json");
    ctx.run("transform", transform_hash, &[&cfg.outputs.dataset], || {
        let out = stage_transform(
            cfg,
            &cfg.outputs.retrieved,
            &cfg.outputs.dataset,
            Some(&transform_report_path),
        )?;
        Ok(serde_json::json!({
            "kept": out.report.kept,
            "discarded": out.report.discards.len(),
            "counts": out.report.counts,
            "filter_remaining_percent": out.report.filter_remaining_percent,
            "prompt_tokens": out.cost.prompt_tokens,
            "completion_tokens": out.cost.completion_tokens,
            "cost_usd": out.cost.cost_usd,
        }))
    })?;
    // Token costs belong in the manifest whether the stage ran or was skipped.
    if let Ok(bytes) = fs::read(&transform_report_path) {
        if let Ok(report) = serde_json::from_slice::<TransformStageReport>(&bytes) {
            ctx.manifest.cost = Some(report.cost);
        }
    }

    let mut analyze_outputs: Vec<&Path> = vec![&cfg.outputs.report];
    if let Some(p) = &cfg.outputs.embeddings {
        analyze_outputs.push(p);
    }
    ctx.run("analyze", analyze_hash, &analyze_outputs, || {
        let report = stage_analyze(
            cfg,
            &cfg.outputs.dataset,
            &cfg.outputs.report,
            cfg.outputs.embeddings.as_deref(),
        )?;
        Ok(serde_json::to_value(report).unwrap())
    })?;

    ctx.manifest.save(&manifest_path);
    Ok(RunSummary {
        manifest: ctx.manifest,
        manifest_path,
    })
}
