use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rebase_cli::config::{validate_config, ResolvedConfig};
use rebase_cli::exit;
use rebase_cli::pipeline::{
    self, run_pipeline, stage_ingest, stage_transform, PipelineError,
};
use rebase_core::datastore;
use rebase_core::diversity;
use rebase_core::encoder::{EncoderRegistry, EncoderSettings};
use rebase_core::llm::LlmSettings;
use rebase_core::retrieval::{self, TaskSpec};
use rebase_core::transform::TransformOptions;

#[derive(Parser)]
#[command(
    name = "rebase",
    version,
    about = "Builds a column-level embedding datastore over labeled datasets, retrieves the rows most relevant to a task, and transforms them with an LLM into a finetuning-ready dataset."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config file and report every problem found.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fetch configured datasets into the on-disk format.
    Ingest {
        #[arg(long)]
        config: PathBuf,
        /// Target directory; defaults to <cache_dir>/ingested.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Datastore construction and inspection.
    Datastore {
        #[command(subcommand)]
        command: DatastoreCommand,
    },
    /// Score the datastore against a task and keep the top-N rows.
    Retrieve {
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        store: PathBuf,
        /// Overrides the task file's n.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Config file supplying encoder settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        encoder: EncoderArgs,
    },
    /// Transform retrieved rows into (input, output) training examples.
    Transform {
        #[arg(long)]
        task: PathBuf,
        #[arg(long = "in", value_name = "RETRIEVED")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Ask for step-by-step reasoning in outputs.
        #[arg(long)]
        cot: bool,
        /// Enable the LLM yes/no filter pass.
        #[arg(long)]
        filter: bool,
        /// Config file supplying LLM settings; defaults to the mock backend.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Diversity metrics over an exported dataset.
    Analyze {
        #[arg(long = "in", value_name = "DATASET")]
        input: PathBuf,
        #[arg(long, default_value_t = 0.7)]
        threshold: f64,
        #[arg(long)]
        report: PathBuf,
        /// Which field(s) feed the uniqueness metric.
        #[arg(long, value_enum, default_value_t = FieldSelector::Both)]
        field: FieldSelector,
        /// Also dump raw embeddings for external visualization.
        #[arg(long)]
        dump_embeddings: Option<PathBuf>,
        #[command(flatten)]
        encoder: EncoderArgs,
    },
    /// Run ingest → build → retrieve → transform → analyze end to end.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum DatastoreCommand {
    /// Ingest (from cache when fresh) and build the persisted datastore.
    Build {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the config's outputs.store.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print summary counts for a persisted datastore.
    Stats {
        #[arg(long)]
        store: PathBuf,
    },
}

#[derive(Args)]
struct EncoderArgs {
    /// Encoder backend.
    #[arg(long, value_enum)]
    encoder: Option<EncoderBackend>,
    /// Embedding width; defaults to the store's dim where one is at hand.
    #[arg(long)]
    dim: Option<usize>,
    /// Remote encoder endpoint.
    #[arg(long)]
    encoder_endpoint: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncoderBackend {
    Hash,
    Remote,
}

impl EncoderBackend {
    fn as_str(self) -> &'static str {
        match self {
            EncoderBackend::Hash => "hash",
            EncoderBackend::Remote => "remote",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FieldSelector {
    Both,
    Input,
    Output,
}

fn fail_validation(errors: &[String]) -> ExitCode {
    for e in errors {
        eprintln!("error: {e}");
    }
    ExitCode::from(exit::VALIDATION as u8)
}

fn fail_pipeline(e: &PipelineError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn load_config(path: &Path) -> Result<ResolvedConfig, ExitCode> {
    validate_config(path).map_err(|errors| fail_validation(&errors))
}

/// Encoder settings from an optional config file plus flag overrides.
fn encoder_settings(
    config: Option<&ResolvedConfig>,
    args: &EncoderArgs,
    fallback_dim: Option<usize>,
) -> EncoderSettings {
    let mut settings = config.map(|c| c.encoder.clone()).unwrap_or_default();
    if let Some(backend) = args.encoder {
        settings.backend = backend.as_str().to_string();
    }
    if let Some(dim) = args.dim.or(fallback_dim) {
        settings.dim = dim;
    }
    if let Some(endpoint) = &args.encoder_endpoint {
        settings.endpoint = Some(endpoint.clone());
    }
    settings
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    ExitCode::from(exit::OK as u8)
                }
                _ => ExitCode::from(exit::VALIDATION as u8),
            };
        }
    };

    match cli.command {
        Command::Validate { config } => match validate_config(&config) {
            Ok(_) => {
                println!("ok");
                ExitCode::from(exit::OK as u8)
            }
            Err(errors) => fail_validation(&errors),
        },

        Command::Ingest { config, out } => {
            let cfg = match load_config(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let out_dir = out.unwrap_or_else(|| cfg.cache_dir.join("ingested"));
            match stage_ingest(&cfg, &out_dir) {
                Ok(report) => {
                    println!(
                        "ingested {} datasets, {} rows ({} skipped) into {}",
                        report.datasets.len(),
                        report.total_rows,
                        report.total_skipped,
                        out_dir.display()
                    );
                    ExitCode::from(exit::OK as u8)
                }
                Err(e) => fail_pipeline(&e),
            }
        }

        Command::Datastore { command } => match command {
            DatastoreCommand::Build { config, out } => {
                let cfg = match load_config(&config) {
                    Ok(c) => c,
                    Err(code) => return code,
                };
                let store_path = out.unwrap_or_else(|| cfg.outputs.store.clone());
                let ingested = cfg.cache_dir.join("ingested");
                let result = stage_ingest(&cfg, &ingested).and_then(|_| {
                    pipeline::stage_build(
                        &cfg,
                        &ingested,
                        &store_path,
                        Some(cfg.cache_dir.join("build.checkpoint")),
                    )
                });
                match result {
                    Ok(stats) => {
                        println!("{}", serde_json::to_string_pretty(&stats).unwrap());
                        ExitCode::from(exit::OK as u8)
                    }
                    Err(e) => fail_pipeline(&e),
                }
            }
            DatastoreCommand::Stats { store } => match datastore::load(&store) {
                Ok(store) => {
                    println!(
                        "{}",
                        serde_json::to_string_pretty(&store.stats()).unwrap()
                    );
                    ExitCode::from(exit::OK as u8)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(exit::STAGE as u8)
                }
            },
        },

        Command::Retrieve {
            task,
            store,
            n,
            out,
            config,
            encoder,
        } => {
            let cfg = match config.as_deref().map(load_config).transpose() {
                Ok(c) => c,
                Err(code) => return code,
            };
            let loaded = match datastore::load(&store) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(exit::STAGE as u8);
                }
            };
            let settings = encoder_settings(cfg.as_ref(), &encoder, Some(loaded.dim()));
            let mut task = match TaskSpec::from_json_file(&task) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(exit::VALIDATION as u8);
                }
            };
            if let Some(n) = n {
                task.n = n;
            }
            if let Err(e) = task.validate() {
                eprintln!("error: {e}");
                return ExitCode::from(exit::VALIDATION as u8);
            }
            let enc = match EncoderRegistry::with_builtins().build(&settings) {
                Ok(e) => e,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(exit::VALIDATION as u8);
                }
            };
            match retrieval::retrieve_top_n(&loaded, &task, enc.as_ref()) {
                Ok(results) => {
                    if let Err(e) = retrieval::write_retrieved_jsonl(&out, &results) {
                        eprintln!("error: {e}");
                        return ExitCode::from(exit::STAGE as u8);
                    }
                    println!("retrieved {} rows into {}", results.len(), out.display());
                    ExitCode::from(exit::OK as u8)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    let code = match &e {
                        retrieval::RetrievalError::Encoder(err) if err.is_retryable() => {
                            exit::EXTERNAL
                        }
                        _ => exit::STAGE,
                    };
                    ExitCode::from(code as u8)
                }
            }
        }

        Command::Transform {
            task,
            input,
            out,
            cot,
            filter,
            config,
        } => {
            let cfg = match config.as_deref().map(load_config).transpose() {
                Ok(c) => c,
                Err(code) => return code,
            };
            let task = match TaskSpec::from_json_file(&task).and_then(|t| {
                t.validate()?;
                Ok(t)
            }) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(exit::VALIDATION as u8);
                }
            };
            // Flag-driven runs default to the deterministic mock backend.
            let (llm, mut transform_opts) = match &cfg {
                Some(c) => (c.llm.clone(), c.transform.clone()),
                None => (LlmSettings::default(), TransformOptions::default()),
            };
            transform_opts.cot = cot || transform_opts.cot;
            transform_opts.filter_enabled = filter || transform_opts.filter_enabled;
            let synthetic = ResolvedConfig {
                task_path: PathBuf::new(),
                task,
                n: None,
                cache_dir: PathBuf::new(),
                datasets: Vec::new(),
                registry: None,
                encoder: EncoderSettings::default(),
                llm,
                transform: transform_opts,
                max_cell_chars: rebase_core::ingest::DEFAULT_MAX_CELL_CHARS,
                threshold: 0.7,
                outputs: rebase_cli::config::OutputPaths {
                    store: PathBuf::new(),
                    retrieved: input.clone(),
                    dataset: out.clone(),
                    report: PathBuf::new(),
                    embeddings: None,
                },
            };
            match stage_transform(&synthetic, &input, &out, None) {
                Ok(result) => {
                    println!(
                        "kept {} examples ({} discarded) into {}",
                        result.report.kept,
                        result.report.discards.len(),
                        out.display()
                    );
                    if let Some(pct) = result.report.filter_remaining_percent {
                        println!("filter kept {pct:.1}% of candidates");
                    }
                    ExitCode::from(exit::OK as u8)
                }
                Err(e) => fail_pipeline(&e),
            }
        }

        Command::Analyze {
            input,
            threshold,
            report,
            field,
            dump_embeddings,
            encoder,
        } => {
            let lines = match rebase_core::transform::read_dataset_jsonl(&input) {
                Ok(l) => l,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(exit::STAGE as u8);
                }
            };
            let texts: Vec<String> = lines
                .iter()
                .map(|l| match field {
                    FieldSelector::Both => format!("{}\n{}", l.input, l.output),
                    FieldSelector::Input => l.input.clone(),
                    FieldSelector::Output => l.output.clone(),
                })
                .collect();
            let sources: Vec<_> = lines.iter().map(|l| l.source.clone()).collect();
            let summary = diversity::analyze(&texts, &sources, threshold);
            if let Err(e) = std::fs::write(
                &report,
                serde_json::to_vec_pretty(&summary).unwrap(),
            ) {
                eprintln!("error: cannot write {}: {e}", report.display());
                return ExitCode::from(exit::STAGE as u8);
            }
            if let Some(dump) = dump_embeddings {
                let settings = encoder_settings(None, &encoder, None);
                let enc = match EncoderRegistry::with_builtins().build(&settings) {
                    Ok(e) => e,
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::from(exit::VALIDATION as u8);
                    }
                };
                if let Err(e) = diversity::embedding_dump(&texts, enc.as_ref(), &dump) {
                    eprintln!("error: {e}");
                    return ExitCode::from(exit::STAGE as u8);
                }
            }
            println!("{}", serde_json::to_string_pretty(&summary).unwrap());
            ExitCode::from(exit::OK as u8)
        }

        Command::Pipeline { config } => {
            let cfg = match load_config(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            match run_pipeline(&cfg) {
                Ok(summary) => {
                    for stage in &summary.manifest.stages {
                        println!(
                            "{:<10} {:<8} {:>6} ms",
                            stage.name, stage.status, stage.duration_ms
                        );
                    }
                    if let Some(cost) = &summary.manifest.cost {
                        match cost.cost_usd {
                            Some(usd) => println!(
                                "tokens: {} prompt / {} completion (≈ ${usd:.4})",
                                cost.prompt_tokens, cost.completion_tokens
                            ),
                            None => println!(
                                "tokens: {} prompt / {} completion",
                                cost.prompt_tokens, cost.completion_tokens
                            ),
                        }
                    }
                    println!("manifest: {}", summary.manifest_path.display());
                    ExitCode::from(exit::OK as u8)
                }
                Err(e) => fail_pipeline(&e),
            }
        }
    }
}
