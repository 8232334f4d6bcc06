//! `stancerag`: every pipeline stage and evaluation protocol from the shell.
//!
//! Exit status: 0 ok, 2 usage or configuration, 3 provider, 4 data.

mod args;
mod providers;

use std::collections::BTreeSet;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;
use stancerag_core::chunker::{chunk_document, read_chunks, write_chunks};
use stancerag_core::config::AppConfig;
use stancerag_core::corpus::{load_dataset, load_payloads};
use stancerag_core::harness::{build_report, observe, render_report, Artifacts, EvalConfig, EvalInputs, ReportFormat, Stage};
use stancerag_core::index::VectorIndex;
use stancerag_core::rerank::rerank;
use stancerag_core::stance::{build_prompt_text, generate_stance, select_evidence, EvidenceSelection, QueryId};
use stancerag_core::{synth, Error};
use tracing::info;

use args::{Cli, Command, EvalCommand, EvalKind, OutputFormat, QueryArgs};
use providers::ProviderSet;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Provider(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Provider(_) => 3,
            CliError::Core(e) if e.is_provider_error() => 3,
            CliError::Core(Error::InvalidConfig(_)) => 2,
            CliError::Core(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(Error::Json(e))
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("STANCERAG_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(if cli.verbose { "info" } else { "warn" })),
        )
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_config(cli: &Cli) -> CliResult<AppConfig> {
    Ok(AppConfig::resolve(cli.config.as_deref())?)
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::GenCorpus { out, docs_per_language } => {
            let corpus = synth::generate(cli.seed, *docs_per_language);
            corpus.write_to(out)?;
            println!("{}", json!({ "out": out, "records": corpus.records.len(), "payloads": corpus.payloads.len() }));
            Ok(())
        }
        Command::Ingest { docs, out } => {
            let payloads = load_payloads(docs)?;
            let parsed = payloads.iter().map(|p| p.ingest()).collect::<Result<Vec<_>, _>>()?;
            stancerag_core::harness::write_jsonl(out, &parsed)?;
            println!("{}", json!({ "out": out, "documents": parsed.len() }));
            Ok(())
        }
        Command::Chunk { docs, out, method, chunker } => {
            chunker.apply(&mut cfg.eval);
            let method = method.unwrap_or(cfg.eval.chunk_method);
            let p = ProviderSet::build(cli.provider, &cfg, cli.stub_reranker)?;
            let payloads = load_payloads(docs)?;
            let mut all = Vec::new();
            for pl in &payloads {
                all.extend(chunk_document(&pl.ingest()?, method, &cfg.eval.chunker, p.embedder.as_ref())?);
            }
            write_chunks(out, &all)?;
            println!("{}", json!({ "out": out, "chunks": all.len(), "method": method }));
            Ok(())
        }
        Command::Index { chunks, out } => {
            let p = ProviderSet::build(cli.provider, &cfg, cli.stub_reranker)?;
            let chunks = read_chunks(chunks)?;
            let mut index = VectorIndex::new();
            index.index_chunks(&chunks, p.embedder.as_ref(), cfg.eval.chunker.embed_batch_size)?;
            index.persist(out)?;
            println!("{}", json!({ "out": out, "chunks": index.len(), "model_id": index.model_id() }));
            Ok(())
        }
        Command::Retrieve(q) => {
            let p = ProviderSet::build(cli.provider, &cfg, cli.stub_reranker)?;
            let (query, hits) = retrieve(q, &cfg, &p)?;
            let reranked = rerank(&query, &hits, p.reranker.as_deref(), cfg.eval.rerank_fallback)?;
            println!("{}", serde_json::to_string_pretty(&json!({ "query": query, "fell_back": reranked.fell_back, "hits": reranked.hits }))?);
            Ok(())
        }
        Command::Answer { query, mode, prompt_strategy } => {
            let p = ProviderSet::build(cli.provider, &cfg, cli.stub_reranker)?;
            if mode.needs_gold() {
                return Err(CliError::Usage(format!("evidence mode {mode} needs gold evidence; use FR or AR")));
            }
            let (text, hits) = retrieve(query, &cfg, &p)?;
            let reranked = rerank(&text, &hits, p.reranker.as_deref(), cfg.eval.rerank_fallback)?;
            let texts: Vec<&str> = reranked.hits.iter().map(|h| h.chunk.text.as_str()).collect();
            let evidence = select_evidence(&EvidenceSelection::new(*mode, query.k.unwrap_or(cfg.eval.k)), &texts, None)?;
            let strategy = prompt_strategy.unwrap_or(cfg.eval.prompt_strategy);
            let result = generate_stance(&build_prompt_text(strategy, &text, &evidence), strategy, p.chat.as_ref(), cfg.eval.retries)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
            Ok(())
        }
        Command::Eval(e) => eval(&cli, cfg, e),
        Command::Report { run, format } => {
            let (report_text, _) = replay(run, (*format).into())?;
            print!("{report_text}");
            Ok(())
        }
        Command::Serve { bind, data_dir } => {
            if let Some(b) = bind {
                cfg.service.bind = b.clone();
            }
            if let Some(d) = data_dir {
                cfg.service.data_dir = d.clone();
            }
            // Blocking HTTP clients must be built outside the async runtime.
            let p = ProviderSet::build(cli.provider, &cfg, cli.stub_reranker)?;
            let bind = cfg.service.bind.clone();
            let state = stancerag_service::AppState::open(cfg, p.into_service())?;
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(stancerag_service::serve(state, &bind))?;
            Ok(())
        }
    }
}

fn retrieve(q: &QueryArgs, cfg: &AppConfig, p: &ProviderSet) -> CliResult<(String, Vec<stancerag_core::index::RetrievalHit>)> {
    let query = match (q.query_id, &q.query) {
        (Some(id), None) => QueryId::new(id)?.query().text.to_string(),
        (None, Some(t)) => t.clone(),
        _ => return Err(CliError::Usage("give exactly one of --query-id or --query".into())),
    };
    let index = VectorIndex::load(&q.index)?;
    let filter: Option<BTreeSet<String>> = (!q.doc_id.is_empty()).then(|| q.doc_id.iter().cloned().collect());
    let hits = index.search(&query, q.k.unwrap_or(cfg.eval.k), filter.as_ref(), p.embedder.as_ref())?;
    Ok((query, hits))
}

fn stages_for(kind: EvalKind) -> Vec<Stage> {
    match kind {
        EvalKind::Parse => vec![Stage::Parse, Stage::Chunk],
        EvalKind::Chunk => vec![Stage::Chunk],
        EvalKind::Retrieve => vec![Stage::Retrieve],
        EvalKind::Rerank => vec![Stage::Rerank],
        EvalKind::Stance => vec![Stage::Stance],
        EvalKind::Pipeline | EvalKind::Outperform => vec![Stage::Pipeline],
    }
}

/// Rebuilds a report from a run directory without touching any provider.
fn replay(run: &Path, format: ReportFormat) -> CliResult<(String, stancerag_core::EvalReport)> {
    let art = Artifacts::load(&run.join("artifacts"))?;
    let cfg_path = run.join("config.json");
    let cfg: EvalConfig = serde_json::from_slice(&std::fs::read(&cfg_path)?)?;
    let report = build_report(&art, &cfg);
    Ok((render_report(&report, format), report))
}

fn eval(cli: &Cli, mut cfg: AppConfig, e: &EvalCommand) -> CliResult<()> {
    let format: ReportFormat = e.format.into();
    if let Some(run) = &e.replay {
        let (text, _) = replay(run, format)?;
        return write_output(&text, e.out.as_deref());
    }
    e.flags.apply(&mut cfg.eval)?;
    cfg.eval.validate()?;

    let inputs = match (&e.dataset, &e.docs) {
        (Some(d), Some(docs)) => EvalInputs { records: load_dataset(d)?, payloads: load_payloads(docs)? },
        (None, None) => {
            let c = synth::generate(cli.seed, e.docs_per_language);
            EvalInputs { records: c.records, payloads: c.payloads }
        }
        _ => return Err(CliError::Usage("--dataset and --docs go together".into())),
    };
    let p = ProviderSet::build(cli.provider, &cfg, cli.stub_reranker)?;
    let started = chrono::Utc::now();
    let stages = stages_for(e.kind);
    let art = observe(&inputs, &cfg.eval, &stages, &p.as_refs())?;
    let report = build_report(&art, &cfg.eval);

    let run_dir = e.run_dir.clone().unwrap_or_else(|| {
        PathBuf::from("stancerag-runs").join(format!("{}-{}", e.kind, started.format("%Y%m%dT%H%M%S%.3fZ")))
    });
    art.persist(&run_dir.join("artifacts"))?;
    std::fs::write(run_dir.join("config.json"), serde_json::to_vec_pretty(&cfg.eval)?)?;
    std::fs::write(run_dir.join("report.json"), render_report(&report, ReportFormat::Structured))?;
    std::fs::write(run_dir.join("report.txt"), render_report(&report, ReportFormat::TableText))?;
    let run_meta = json!({
        "command": format!("eval {}", e.kind),
        "started_at": started.to_rfc3339(),
        "finished_at": chrono::Utc::now().to_rfc3339(),
        "provider": cli.provider,
        "seed": cli.seed,
        "dataset": e.dataset,
        "docs": e.docs,
        "records": art.records.len(),
        "partial": report.partial,
    });
    std::fs::write(run_dir.join("run.json"), serde_json::to_string_pretty(&run_meta)? + "\n")?;
    info!(run_dir = %run_dir.display(), "run written");
    eprintln!("run directory: {}", run_dir.display());

    write_output(&render_report(&report, format), e.out.as_deref())?;
    if report.partial {
        return Err(CliError::Provider(format!(
            "run incomplete: {}",
            report.error.as_deref().unwrap_or("provider failure")
        )));
    }
    Ok(())
}

fn write_output(text: &str, out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

impl From<OutputFormat> for ReportFormat {
    fn from(f: OutputFormat) -> Self {
        match f {
            OutputFormat::Table => ReportFormat::TableText,
            OutputFormat::Json => ReportFormat::Structured,
        }
    }
}
