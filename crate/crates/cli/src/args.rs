use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use stancerag_core::chunker::ChunkMethod;
use stancerag_core::corpus::{LanguageGroup, ParserStyle};
use stancerag_core::harness::EvalConfig;
use stancerag_core::stance::{EvidenceMode, PromptStrategy};
use stancerag_core::synth;

#[derive(Debug, Parser)]
#[command(name = "stancerag", version, about = "Climate-policy evidence retrieval and stance evaluation")]
pub struct Cli {
    /// TOML configuration file; STANCERAG_* environment variables override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = ProviderMode::Stub)]
    pub provider: ProviderMode,
    #[arg(long, global = true, default_value_t = synth::DEFAULT_SEED)]
    pub seed: u64,
    /// Adds the lexical-overlap stub reranker when running with stub providers.
    #[arg(long, global = true)]
    pub stub_reranker: bool,
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderMode {
    Stub,
    Http,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OutputFormat {
    Table,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse upload payloads into block-structured documents.
    Ingest {
        #[arg(long)]
        docs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Chunk documents with the layout or semantic chunker.
    Chunk {
        #[arg(long)]
        docs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        method: Option<ChunkMethod>,
        #[command(flatten)]
        chunker: ChunkerFlags,
    },
    /// Embed chunks into a persisted vector index.
    Index {
        #[arg(long)]
        chunks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Top-k retrieval (and optional reranking) for one query.
    Retrieve(QueryArgs),
    /// Retrieve evidence and generate a stance for one query.
    Answer {
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long, default_value = "FR")]
        mode: EvidenceMode,
        #[arg(long)]
        prompt_strategy: Option<PromptStrategy>,
    },
    /// Run one evaluation protocol and write a run directory.
    Eval(EvalCommand),
    /// Rebuild a report from a run directory without providers.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value_t = OutputFormat::Table)]
        format: OutputFormat,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Write the seeded synthetic corpus (dataset plus both parser outputs).
    GenCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = synth::DEFAULT_DOCS_PER_LANGUAGE)]
        docs_per_language: usize,
    },
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub query_id: Option<i64>,
    #[arg(long)]
    pub query: Option<String>,
    /// Restrict retrieval to these documents (repeatable).
    #[arg(long)]
    pub doc_id: Vec<String>,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalKind {
    Parse,
    Chunk,
    Retrieve,
    Rerank,
    Stance,
    Pipeline,
    Outperform,
}

impl std::fmt::Display for EvalKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.to_possible_value().expect("no skipped variants").get_name())
    }
}

#[derive(Debug, Args)]
pub struct EvalCommand {
    #[arg(value_enum)]
    pub kind: EvalKind,
    /// Gold dataset; without it the seeded synthetic corpus is used.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Upload payloads (file or directory of .jsonl files).
    #[arg(long)]
    pub docs: Option<PathBuf>,
    #[arg(long, default_value_t = synth::DEFAULT_DOCS_PER_LANGUAGE)]
    pub docs_per_language: usize,
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Rebuild from an existing run directory instead of calling providers.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Table)]
    pub format: OutputFormat,
    #[command(flatten)]
    pub flags: EvalFlags,
}

/// One flag per evaluation config field.
#[derive(Debug, Args)]
pub struct EvalFlags {
    #[arg(long)]
    pub sigma_threshold: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<u8>,
    #[arg(long, value_delimiter = ',')]
    pub strategies: Option<Vec<EvidenceMode>>,
    #[arg(long, value_delimiter = ',')]
    pub language_groups: Option<Vec<LanguageGroup>>,
    #[arg(long, value_delimiter = ',')]
    pub parser_styles: Option<Vec<ParserStyle>>,
    #[arg(long)]
    pub parser_style: Option<ParserStyle>,
    #[arg(long, value_delimiter = ',')]
    pub chunk_methods: Option<Vec<ChunkMethod>>,
    #[arg(long)]
    pub chunk_method: Option<ChunkMethod>,
    #[arg(long, value_delimiter = ',')]
    pub prompt_strategies: Option<Vec<PromptStrategy>>,
    #[arg(long)]
    pub prompt_strategy: Option<PromptStrategy>,
    #[arg(long)]
    pub retries: Option<usize>,
    #[arg(long)]
    pub faithfulness_fallback: Option<bool>,
    #[arg(long)]
    pub rerank_fallback: Option<bool>,
    #[command(flatten)]
    pub chunker: ChunkerFlags,
}

#[derive(Debug, Args)]
pub struct ChunkerFlags {
    #[arg(long)]
    pub min_chunk_words: Option<usize>,
    #[arg(long)]
    pub semantic_similarity_threshold: Option<f64>,
    #[arg(long)]
    pub semantic_double_pass: Option<bool>,
    #[arg(long)]
    pub max_chunk_tokens: Option<usize>,
    #[arg(long)]
    pub embed_batch_size: Option<usize>,
}

fn set<T>(slot: &mut T, v: &Option<T>)
where
    T: Clone,
{
    if let Some(v) = v {
        *slot = v.clone();
    }
}

impl ChunkerFlags {
    pub fn apply(&self, cfg: &mut EvalConfig) {
        let c = &mut cfg.chunker;
        set(&mut c.min_chunk_words, &self.min_chunk_words);
        set(&mut c.semantic_similarity_threshold, &self.semantic_similarity_threshold);
        set(&mut c.semantic_double_pass, &self.semantic_double_pass);
        set(&mut c.max_chunk_tokens, &self.max_chunk_tokens);
        set(&mut c.embed_batch_size, &self.embed_batch_size);
    }
}

impl EvalFlags {
    pub fn apply(&self, cfg: &mut EvalConfig) -> stancerag_core::Result<()> {
        set(&mut cfg.sigma_threshold, &self.sigma_threshold);
        set(&mut cfg.k, &self.k);
        set(&mut cfg.tolerance, &self.tolerance);
        set(&mut cfg.strategies, &self.strategies);
        set(&mut cfg.language_groups, &self.language_groups);
        set(&mut cfg.parser_styles, &self.parser_styles);
        set(&mut cfg.parser_style, &self.parser_style);
        set(&mut cfg.chunk_methods, &self.chunk_methods);
        set(&mut cfg.chunk_method, &self.chunk_method);
        set(&mut cfg.prompt_strategies, &self.prompt_strategies);
        set(&mut cfg.prompt_strategy, &self.prompt_strategy);
        set(&mut cfg.retries, &self.retries);
        set(&mut cfg.faithfulness_fallback, &self.faithfulness_fallback);
        set(&mut cfg.rerank_fallback, &self.rerank_fallback);
        self.chunker.apply(cfg);
        cfg.validate()
    }
}
