//! `annotator` operator CLI.
//!
//! Exit codes: 0 success, 1 validation or parse error, 2 runtime error.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use annotator_core::agents::{AgentId, AgentStatus};
use annotator_core::audit::AuditStore;
use annotator_core::config::{load_config, ProviderKind};
use annotator_core::evaluation::{self, load_gold, parse_variants, render_table, EvalContext, EvalError};
use annotator_core::judge::{ConsensusStrength, JudgeSource};
use annotator_core::knowledge_base::{ingest_catalog, load_training, EmbeddingMode};
use annotator_core::pipeline::{load_or_build_index, index_file_name, BatchError, BatchManager, EngineOptions, PipelineError, RoutingAction};
use annotator_core::prompting::Confidence;
use annotator_core::provider::{HttpProvider, HttpProviderSettings};
use annotator_core::{AnnotationConfig, AnnotationResult, Catalog, Engine, MockProvider, ModelProvider, SystemClock, TrainingExample};
use annotator_service::{AppState, ReviewQueue, ServiceOptions};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "annotator", version, about = "Multi-agent annotation engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Annotation config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Model backend; overrides the config.
    #[arg(long)]
    provider: Option<ProviderKind>,
    /// Seed for sampling and the mock provider; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Machine-readable output.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate and summarize the catalog and training pool.
    Ingest {
        #[command(flatten)]
        common: Common,
    },
    /// Embed the catalog and write index sidecars.
    Index {
        #[command(flatten)]
        common: Common,
        /// Sidecar directory (default: `index/` next to the catalog).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Annotate a single utterance.
    Annotate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        utterance: String,
        /// Domain context for the planner.
        #[arg(long)]
        context: Option<String>,
    },
    /// Annotate a JSONL file of `{id, utterance}` rows.
    Batch {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// Output directory for `<job_id>.jsonl`.
        #[arg(long, default_value = "batch_out")]
        out: PathBuf,
    },
    /// Run ablation variants over a gold set.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated variants.
        #[arg(long, default_value = "full,no_planner,no_judge,no_embeddings,single")]
        variants: String,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, env = "ANNOTATOR_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "ANNOTATOR_HOST", default_value = "127.0.0.1")]
        host: String,
        /// Require `Authorization: Bearer <token>` on /v1 routes.
        #[arg(long, env = "ANNOTATOR_TOKEN")]
        token: Option<String>,
        #[arg(long)]
        cors_origin: Option<String>,
        /// JSONL event log for the review queue (in-memory when unset).
        #[arg(long)]
        review_log: Option<PathBuf>,
        /// Batch output directory.
        #[arg(long, default_value = "batch_out")]
        out: PathBuf,
    },
    /// Move audit records past retention to the cold archive.
    PurgeAudit {
        #[command(flatten)]
        common: Common,
        /// Delete instead of archiving.
        #[arg(long)]
        no_archive: bool,
    },
}

#[derive(Debug)]
enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Validation(_) => 1,
            Self::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Validation(m) | Self::Runtime(m) => f.write_str(m),
        }
    }
}

fn validation(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(tracing::Level::WARN)
        .init();
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match rt.block_on(run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

struct Loaded {
    config: AnnotationConfig,
    catalog: Catalog,
    training: Vec<TrainingExample>,
    provider: Arc<dyn ModelProvider>,
}

fn load(common: &Common) -> Result<Loaded, CliError> {
    let mut config = load_config(&common.config).map_err(validation)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(p) = common.provider {
        config.runtime.provider_kind = p;
    }
    let catalog_path = config
        .catalog_path
        .clone()
        .ok_or_else(|| validation("config has no catalog_path"))?;
    let catalog = ingest_catalog(&catalog_path, &config).map_err(validation)?;
    let training = match &config.training_path {
        Some(p) => load_training(p, &catalog).map_err(validation)?,
        None => Vec::new(),
    };
    let provider: Arc<dyn ModelProvider> = match config.runtime.provider_kind {
        ProviderKind::Mock => Arc::new(MockProvider::new(config.seed)),
        ProviderKind::Http => {
            let settings = HttpProviderSettings::from_env().map_err(validation)?;
            Arc::new(HttpProvider::new(settings).map_err(validation)?)
        }
    };
    Ok(Loaded {
        config,
        catalog,
        training,
        provider,
    })
}

fn default_index_dir(config: &AnnotationConfig) -> Option<PathBuf> {
    config
        .catalog_path
        .as_ref()
        .and_then(|p| p.parent())
        .map(|d| d.join("index"))
}

async fn build_engine(l: &Loaded, options: EngineOptions, with_audit: bool) -> Result<Engine, CliError> {
    let mut b = Engine::builder(l.config.clone(), l.catalog.clone(), l.provider.clone())
        .training(l.training.clone())
        .options(options);
    if let Some(dir) = default_index_dir(&l.config).filter(|d| d.is_dir()) {
        b = b.index_dir(dir);
    }
    if with_audit {
        if let Some(path) = &l.config.audit_path {
            let store = AuditStore::open(path, Arc::new(SystemClock)).map_err(runtime)?;
            b = b.audit(Arc::new(store));
        }
    }
    b.build().await.map_err(runtime)
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    println!("{}", serde_json::to_string_pretty(value).map_err(runtime)?);
    Ok(())
}

/// Plain aligned table; first column left-aligned, numbers right-aligned.
fn table(header: &[&str], rows: &[Vec<String>], right: &[usize]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: Vec<String>| {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if right.contains(&i) {
                    format!("{c:>w$}", w = widths[i])
                } else {
                    format!("{c:<w$}", w = widths[i])
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = vec![line(header.iter().map(|s| s.to_string()).collect())];
    out.extend(rows.iter().map(|r| line(r.clone())));
    out.join("\n")
}

#[derive(Debug, Serialize)]
struct IngestReport {
    annotation_type: String,
    entries: usize,
    with_secondary: usize,
    training_examples: usize,
    source_digest: String,
}

#[derive(Debug, Serialize)]
struct IndexReport {
    dir: PathBuf,
    indices: Vec<IndexEntry>,
}

#[derive(Debug, Serialize)]
struct IndexEntry {
    mode: String,
    dims: usize,
    entries: usize,
    file: String,
}

#[derive(Debug, Serialize)]
struct CliCandidate {
    rank: usize,
    annotation_id: String,
    title: String,
    final_score: u8,
    support: usize,
}

#[derive(Debug, Serialize)]
struct CliPlan {
    intent: String,
    needs_expansion: bool,
    expanded_query: String,
}

/// Annotate output. Latency is left out so runs compare byte for byte.
#[derive(Debug, Serialize)]
struct CliAnnotation {
    utterance_id: String,
    utterance: String,
    band: Confidence,
    action: RoutingAction,
    consensus_strength: ConsensusStrength,
    source: JudgeSource,
    degraded: bool,
    plan: CliPlan,
    top: Vec<CliCandidate>,
    agent_statuses: BTreeMap<AgentId, AgentStatus>,
}

impl CliAnnotation {
    fn new(r: &AnnotationResult, catalog: &Catalog) -> Self {
        Self {
            utterance_id: r.utterance_id.clone(),
            utterance: r.utterance.clone(),
            band: r.routing.band,
            action: r.routing.action,
            consensus_strength: r.judge.consensus_strength,
            source: r.judge.source,
            degraded: r.degraded,
            plan: CliPlan {
                intent: r.plan.intent.clone(),
                needs_expansion: r.plan.needs_expansion,
                expanded_query: r.plan.expanded_query.clone(),
            },
            top: r
                .judge
                .ranked
                .iter()
                .enumerate()
                .map(|(i, c)| CliCandidate {
                    rank: i + 1,
                    annotation_id: c.annotation_id.clone(),
                    title: catalog
                        .get(&c.annotation_id)
                        .map(|e| e.primary_text.clone())
                        .unwrap_or_default(),
                    final_score: c.final_score,
                    support: c.support,
                })
                .collect(),
            agent_statuses: r.agent_statuses(),
        }
    }
}

#[derive(Debug, Serialize)]
struct BatchReport {
    job_id: String,
    status: annotator_core::pipeline::BatchStatus,
    total_items: usize,
    completed: usize,
    failed: usize,
    expired: usize,
    output_path: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct PurgeReport {
    purged: usize,
    retention_days: u32,
    archive: Option<PathBuf>,
}

async fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Ingest { common } => {
            let l = load(&common)?;
            let report = IngestReport {
                annotation_type: l.config.annotation_type.clone(),
                entries: l.catalog.len(),
                with_secondary: l.catalog.entries().iter().filter(|e| e.secondary_text.is_some()).count(),
                training_examples: l.training.len(),
                source_digest: l.catalog.source_digest().to_string(),
            };
            if common.json {
                print_json(&report)
            } else {
                println!(
                    "{} catalog: {} entries ({} with secondary text), {} training examples\ndigest {}",
                    report.annotation_type, report.entries, report.with_secondary, report.training_examples, report.source_digest
                );
                Ok(())
            }
        }
        Command::Index { common, out } => {
            let l = load(&common)?;
            let dir = out
                .or_else(|| default_index_dir(&l.config))
                .ok_or_else(|| validation("no index directory"))?;
            let mut indices = Vec::new();
            if l.config.enable_embeddings {
                for mode in [EmbeddingMode::PrimaryOnly, EmbeddingMode::FullContext] {
                    let idx = load_or_build_index(&l.catalog, mode, &l.config, l.provider.as_ref(), Some(&dir))
                        .await
                        .map_err(runtime)?;
                    indices.push(IndexEntry {
                        mode: mode.as_str().into(),
                        dims: idx.dims(),
                        entries: idx.len(),
                        file: index_file_name(mode, idx.dims()),
                    });
                }
            }
            let report = IndexReport { dir, indices };
            if common.json {
                print_json(&report)
            } else {
                for i in &report.indices {
                    println!("{} {}d {} entries -> {}", i.mode, i.dims, i.entries, report.dir.join(&i.file).display());
                }
                if report.indices.is_empty() {
                    println!("embeddings disabled; nothing to index");
                }
                Ok(())
            }
        }
        Command::Annotate {
            common,
            utterance,
            context,
        } => {
            let l = load(&common)?;
            let engine = build_engine(&l, EngineOptions::default(), true).await?;
            let r = engine.annotate(&utterance, context.as_deref()).await.map_err(|e| match e {
                PipelineError::EmptyUtterance => validation(e),
                PipelineError::AllAgentsFailed { ref statuses } => runtime(format!(
                    "all agents failed: {}",
                    statuses
                        .iter()
                        .map(|s| format!("{}={}", s.agent_id, s.status.as_str()))
                        .collect::<Vec<_>>()
                        .join(", ")
                )),
            })?;
            let out = CliAnnotation::new(&r, engine.catalog());
            if common.json {
                return print_json(&out);
            }
            println!(
                "{:?} -> {} / {} ({}, {})",
                out.utterance,
                out.band,
                out.action.as_str(),
                match out.source {
                    JudgeSource::Judge => "judge",
                    JudgeSource::FallbackAggregation => "fallback aggregation",
                },
                serde_json::to_value(out.consensus_strength)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default()
            );
            let rows: Vec<Vec<String>> = out
                .top
                .iter()
                .map(|c| {
                    vec![
                        c.rank.to_string(),
                        c.annotation_id.clone(),
                        c.final_score.to_string(),
                        c.support.to_string(),
                        c.title.clone(),
                    ]
                })
                .collect();
            println!("{}", table(&["rank", "id", "score", "support", "title"], &rows, &[2, 3]));
            if out.degraded {
                println!("degraded: some agents did not return a usable result");
            }
            Ok(())
        }
        Command::Batch { common, dataset, out } => {
            let l = load(&common)?;
            let engine = build_engine(&l, EngineOptions::default(), true).await?;
            let manager = BatchManager::new(engine, Some(out));
            let job = manager.submit_file(&dataset).map_err(|e| match e {
                BatchError::Io(_) | BatchError::Parse { .. } | BatchError::DuplicateId(_) => validation(e),
                other => runtime(other),
            })?;
            let job = manager.run(&job.job_id).await.map_err(runtime)?;
            let report = BatchReport {
                job_id: job.job_id.clone(),
                status: job.status,
                total_items: job.total_items,
                completed: job.groups.iter().map(|g| g.completed).sum(),
                failed: job.groups.iter().map(|g| g.failed).sum(),
                expired: job.expired_pending.len(),
                output_path: job.output_path.clone(),
            };
            if common.json {
                print_json(&report)
            } else {
                println!(
                    "{}: {} items, {} completed, {} failed, {} expired",
                    report.job_id, report.total_items, report.completed, report.failed, report.expired
                );
                if let Some(p) = &report.output_path {
                    println!("results: {}", p.display());
                }
                Ok(())
            }
        }
        Command::Evaluate {
            common,
            dataset,
            variants,
            out,
        } => {
            let l = load(&common)?;
            let variants = parse_variants(&variants).map_err(validation)?;
            if variants.is_empty() {
                return Err(validation("no variants given"));
            }
            let gold = load_gold(&dataset).map_err(validation)?;
            if let Some(bad) = gold.iter().find(|g| !l.catalog.contains(&g.gold_id)) {
                return Err(validation(format!("gold id `{}` is not in the catalog", bad.gold_id)));
            }
            let ctx = EvalContext {
                config: l.config.clone(),
                catalog: l.catalog.clone(),
                training: l.training.clone(),
                provider: l.provider.clone(),
                clock: Arc::new(SystemClock),
            };
            let report = evaluation::run_eval(&ctx, &gold, &variants).await.map_err(|e| match e {
                EvalError::EmptyDataset | EvalError::Parse { .. } | EvalError::UnknownVariant(_) => validation(e),
                other => runtime(other),
            })?;
            if let Some(path) = &out {
                let text = serde_json::to_string_pretty(&report).map_err(runtime)?;
                std::fs::write(path, text + "\n").map_err(runtime)?;
            }
            if common.json {
                return print_json(&report);
            }
            println!("{}", render_table(&report));
            println!();
            println!("{}", serde_json::to_string_pretty(&report.significance).map_err(runtime)?);
            Ok(())
        }
        Command::Serve {
            common,
            port,
            host,
            token,
            cors_origin,
            review_log,
            out,
        } => {
            let l = load(&common)?;
            let addr: SocketAddr = format!("{host}:{port}").parse().map_err(validation)?;
            let engine = build_engine(&l, EngineOptions::default(), true).await?;
            let review = match &review_log {
                Some(p) => ReviewQueue::open(p).map_err(runtime)?,
                None => ReviewQueue::in_memory(),
            };
            let batches = BatchManager::new(engine.clone(), Some(out));
            let state = AppState::new(engine, review, batches);
            let options = ServiceOptions {
                bearer_token: token,
                cors_origin,
            };
            tracing::info!(%addr, "starting service");
            annotator_service::serve(addr, state, options).await.map_err(runtime)
        }
        Command::PurgeAudit { common, no_archive } => {
            let config = load_config(&common.config).map_err(validation)?;
            let path = config
                .audit_path
                .clone()
                .ok_or_else(|| validation("config has no audit_path"))?;
            if !Path::new(&path).exists() {
                return Err(validation(format!("audit log {} does not exist", path.display())));
            }
            let store = AuditStore::open(&path, Arc::new(SystemClock)).map_err(runtime)?;
            let retention = config.runtime.audit_retention_days;
            let purged = store.purge(store.now_ms(), retention, !no_archive).map_err(runtime)?;
            let report = PurgeReport {
                purged,
                retention_days: retention,
                archive: (!no_archive).then(|| store.cold_path()),
            };
            if common.json {
                print_json(&report)
            } else {
                println!("purged {} record(s) older than {} days", report.purged, report.retention_days);
                Ok(())
            }
        }
    }
}
