//! Component and pipeline evaluation.
//!
//! A run has two halves. [`observe`] calls the providers and records every
//! provider-dependent observation as [`Artifacts`]; [`build_report`] is a pure
//! function from artifacts and config to an [`EvalReport`], so a report can be
//! rebuilt from persisted artifacts without any provider.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::{info, warn};

use crate::chunker::{chunk_document, ChunkMethod, ChunkerConfig};
use crate::corpus::{load_dataset, write_dataset, EvidenceRecord, LanguageGroup, ParsedDocument, ParserStyle, UploadPayload};
use crate::error::{Error, Result};
use crate::index::VectorIndex;
use crate::metrics::{
    conciseness, exact_match, faithfulness, first_relevant_rank, helpfulness, hit_rate_tolerance, nlcs_chunk, nlcs_parse,
    Faithfulness, TokenSequence,
};
use crate::providers::{AlignmentProvider, ChatProvider, EmbeddingProvider, RerankProvider};
use crate::rerank::rerank;
use crate::stance::{build_prompt, generate_stance, score_completion, select_evidence, EvidenceMode, EvidenceSelection, PromptStrategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Relevance and filtering threshold on gold-normalized nLCS (strict `>`).
    pub sigma_threshold: f64,
    pub k: usize,
    pub tolerance: u8,
    pub strategies: Vec<EvidenceMode>,
    pub language_groups: Vec<LanguageGroup>,
    /// Parser styles compared by the parsing and chunking stages.
    pub parser_styles: Vec<ParserStyle>,
    /// Parser style feeding retrieval, reranking and the pipeline.
    pub parser_style: ParserStyle,
    /// Chunk methods compared by the chunking, retrieval and rerank stages.
    pub chunk_methods: Vec<ChunkMethod>,
    /// Chunk method feeding the pipeline.
    pub chunk_method: ChunkMethod,
    pub prompt_strategies: Vec<PromptStrategy>,
    pub prompt_strategy: PromptStrategy,
    pub retries: usize,
    pub faithfulness_fallback: bool,
    pub rerank_fallback: bool,
    pub chunker: ChunkerConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            sigma_threshold: 0.5,
            k: crate::index::DEFAULT_K,
            tolerance: 1,
            strategies: EvidenceMode::ALL.to_vec(),
            language_groups: LanguageGroup::ALL.to_vec(),
            parser_styles: ParserStyle::ALL.to_vec(),
            parser_style: ParserStyle::LayoutMarkdown,
            chunk_methods: ChunkMethod::ALL.to_vec(),
            chunk_method: ChunkMethod::Layout,
            prompt_strategies: PromptStrategy::ALL.to_vec(),
            prompt_strategy: PromptStrategy::FsFewQueryFewStance,
            retries: crate::stance::DEFAULT_RETRIES,
            faithfulness_fallback: true,
            rerank_fallback: false,
            chunker: ChunkerConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let s = self.sigma_threshold;
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::InvalidConfig(format!("sigma_threshold must be in (0, 1), got {s}")));
        }
        if self.k < 1 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        if self.strategies.is_empty() || self.language_groups.is_empty() || self.parser_styles.is_empty() {
            return Err(Error::InvalidConfig("strategy, language group and parser style lists must be non-empty".into()));
        }
        if self.chunk_methods.is_empty() || self.prompt_strategies.is_empty() {
            return Err(Error::InvalidConfig("chunk method and prompt strategy lists must be non-empty".into()));
        }
        self.chunker.validate()
    }

    /// SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&json))
    }

    fn retrieval_methods(&self) -> Vec<ChunkMethod> {
        let mut m: BTreeSet<ChunkMethod> = self.chunk_methods.iter().copied().collect();
        m.insert(self.chunk_method);
        m.into_iter().collect()
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Parse,
    Chunk,
    Retrieve,
    Rerank,
    Stance,
    Pipeline,
}

impl Stage {
    /// The stage plus everything it depends on.
    pub fn closure(stages: &[Stage]) -> BTreeSet<Stage> {
        let mut out = BTreeSet::new();
        for s in stages {
            out.insert(*s);
            match s {
                Stage::Parse | Stage::Stance => {}
                Stage::Chunk | Stage::Retrieve => {
                    out.insert(Stage::Parse);
                }
                Stage::Rerank => {
                    out.extend([Stage::Parse, Stage::Retrieve]);
                }
                Stage::Pipeline => {
                    out.extend([Stage::Parse, Stage::Retrieve, Stage::Rerank]);
                }
            }
        }
        out
    }
}

pub struct Providers<'a> {
    pub embedder: &'a dyn EmbeddingProvider,
    pub reranker: Option<&'a dyn RerankProvider>,
    pub chat: &'a dyn ChatProvider,
    pub aligner: Option<&'a dyn AlignmentProvider>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderIds {
    pub embedding: String,
    pub rerank: Option<String>,
    pub chat: String,
    pub alignment: Option<String>,
}

impl Providers<'_> {
    pub fn ids(&self) -> ProviderIds {
        ProviderIds {
            embedding: self.embedder.model_id().to_string(),
            rerank: self.reranker.map(|r| r.model_id().to_string()),
            chat: self.chat.model_id().to_string(),
            alignment: self.aligner.map(|a| a.model_id().to_string()),
        }
    }
}

/// Evaluation inputs: gold records and the uploaded parser outputs.
#[derive(Debug, Clone, Default)]
pub struct EvalInputs {
    pub records: Vec<EvidenceRecord>,
    pub payloads: Vec<UploadPayload>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub stages: Vec<Stage>,
    pub providers: ProviderIds,
    pub partial: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseObs {
    pub record: usize,
    pub parser_style: ParserStyle,
    /// `None` when the record's document is missing or failed to ingest.
    pub p_nlcs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkCountObs {
    pub doc_id: String,
    pub language: String,
    pub parser_style: ParserStyle,
    pub method: ChunkMethod,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkingObs {
    pub record: usize,
    pub parser_style: ParserStyle,
    pub method: ChunkMethod,
    pub c_nlcs: f64,
}

pub const ARM_RETRIEVAL: &str = "retrieval";
pub const ARM_NONE: &str = "none";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitObs {
    pub chunk_id: String,
    pub text: String,
    pub similarity: f64,
    pub score: f64,
    pub rank: usize,
    pub original_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitsObs {
    pub record: usize,
    pub method: ChunkMethod,
    /// `retrieval`, `none`, or the reranker's model id.
    pub arm: String,
    pub fell_back: bool,
    pub hits: Vec<HitObs>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StancePhase {
    Component,
    Pipeline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum StanceOutcome {
    Ok { score: i8, reason: String, attempts: usize, model_id: String },
    Failed { kind: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StanceObs {
    pub record: usize,
    pub phase: StancePhase,
    pub prompt_strategy: PromptStrategy,
    pub evidence_mode: EvidenceMode,
    pub evidence: Option<String>,
    pub outcome: StanceOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleObs {
    pub record: usize,
    pub evidence_mode: EvidenceMode,
    pub p_gold: Option<f64>,
    pub p_evidence: Option<f64>,
    pub faithfulness: Option<Faithfulness>,
    pub conciseness: Option<f64>,
}

/// Every provider-dependent observation of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub meta: RunMeta,
    pub records: Vec<EvidenceRecord>,
    pub parse: Vec<ParseObs>,
    pub chunk_counts: Vec<ChunkCountObs>,
    pub chunking: Vec<ChunkingObs>,
    pub hits: Vec<HitsObs>,
    pub stance: Vec<StanceObs>,
    pub oracle: Vec<OracleObs>,
}

impl Artifacts {
    fn empty(records: Vec<EvidenceRecord>, stages: Vec<Stage>, providers: ProviderIds) -> Self {
        Self {
            meta: RunMeta { stages, providers, partial: false, error: None },
            records,
            parse: Vec::new(),
            chunk_counts: Vec::new(),
            chunking: Vec::new(),
            hits: Vec::new(),
            stance: Vec::new(),
            oracle: Vec::new(),
        }
    }

    /// Writes one file per stage under `dir`.
    pub fn persist(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&self.meta)? + "\n")?;
        write_dataset(&dir.join("records.jsonl"), &self.records)?;
        write_jsonl(&dir.join("parse.jsonl"), &self.parse)?;
        write_jsonl(&dir.join("chunk_counts.jsonl"), &self.chunk_counts)?;
        write_jsonl(&dir.join("chunking.jsonl"), &self.chunking)?;
        write_jsonl(&dir.join("hits.jsonl"), &self.hits)?;
        write_jsonl(&dir.join("stance.jsonl"), &self.stance)?;
        write_jsonl(&dir.join("oracle.jsonl"), &self.oracle)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let meta: RunMeta = serde_json::from_str(&std::fs::read_to_string(&meta_path)?)
            .map_err(|e| Error::format(meta_path.display(), e))?;
        Ok(Self {
            meta,
            records: load_dataset(&dir.join("records.jsonl"))?,
            parse: read_jsonl(&dir.join("parse.jsonl"))?,
            chunk_counts: read_jsonl(&dir.join("chunk_counts.jsonl"))?,
            chunking: read_jsonl(&dir.join("chunking.jsonl"))?,
            hits: read_jsonl(&dir.join("hits.jsonl"))?,
            stance: read_jsonl(&dir.join("stance.jsonl"))?,
            oracle: read_jsonl(&dir.join("oracle.jsonl"))?,
        })
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(format!("{}:{}", path.display(), i + 1), e)))
        .collect()
}

fn ingest_all(payloads: &[UploadPayload], style: ParserStyle) -> BTreeMap<String, ParsedDocument> {
    payloads
        .iter()
        .filter(|p| p.parser_style == style)
        .filter_map(|p| match p.ingest() {
            Ok(d) => Some((d.doc_id.clone(), d)),
            Err(e) => {
                warn!(doc_id = %p.doc_id, error = %e, "document failed to ingest");
                None
            }
        })
        .collect()
}

fn passes(parse: &[ParseObs], record: usize, style: ParserStyle, sigma: f64) -> bool {
    parse.iter().any(|p| p.record == record && p.parser_style == style && p.p_nlcs.is_some_and(|v| v > sigma))
}

/// Records whose parsing score under `style` exceeds sigma.
pub fn filtered_records(parse: &[ParseObs], style: ParserStyle, sigma: f64) -> Vec<usize> {
    let mut v: Vec<usize> = parse
        .iter()
        .filter(|p| p.parser_style == style && p.p_nlcs.is_some_and(|x| x > sigma))
        .map(|p| p.record)
        .collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn outcome(result: Result<crate::stance::StanceResult>) -> StanceOutcome {
    match result {
        Ok(r) => StanceOutcome::Ok { score: r.score.value(), reason: r.reason, attempts: r.attempts, model_id: r.model_id },
        Err(e) => StanceOutcome::Failed { kind: error_kind(&e).into(), message: e.to_string() },
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::ProviderUnavailable(_) => "provider_unavailable",
        Error::MalformedToolCall(_) => "malformed_tool_call",
        Error::ScoreOutOfRange(_) => "score_out_of_range",
        Error::MissingGold => "missing_gold",
        Error::NoHits => "no_hits",
        Error::EmptyGold => "empty_gold",
        _ => "other",
    }
}

/// Runs the requested stages (plus their dependencies) against live
/// providers. A fatal provider failure stops the run and marks it partial;
/// everything observed up to that point is kept.
pub fn observe(inputs: &EvalInputs, cfg: &EvalConfig, stages: &[Stage], providers: &Providers<'_>) -> Result<Artifacts> {
    cfg.validate()?;
    let stages = Stage::closure(stages);
    let mut art = Artifacts::empty(inputs.records.clone(), stages.iter().copied().collect(), providers.ids());
    if let Err(e) = observe_into(&mut art, inputs, cfg, &stages, providers) {
        if !e.is_provider_error() {
            return Err(e);
        }
        warn!(error = %e, "run stopped on provider failure");
        art.meta.partial = true;
        art.meta.error = Some(e.to_string());
    }
    Ok(art)
}

fn observe_into(
    art: &mut Artifacts,
    inputs: &EvalInputs,
    cfg: &EvalConfig,
    stages: &BTreeSet<Stage>,
    providers: &Providers<'_>,
) -> Result<()> {
    let records = &inputs.records;
    let mut styles: Vec<ParserStyle> = cfg.parser_styles.clone();
    if !styles.contains(&cfg.parser_style) {
        styles.push(cfg.parser_style);
    }
    let docs: BTreeMap<ParserStyle, BTreeMap<String, ParsedDocument>> = if stages.contains(&Stage::Parse) {
        styles.iter().map(|s| (*s, ingest_all(&inputs.payloads, *s))).collect()
    } else {
        BTreeMap::new()
    };

    if stages.contains(&Stage::Parse) {
        info!(records = records.len(), "parsing stage");
        for style in &styles {
            let docs = &docs[style];
            let full: HashMap<&str, TokenSequence> =
                docs.iter().map(|(id, d)| (id.as_str(), TokenSequence::from_text(&d.full_text()))).collect();
            let obs: Vec<ParseObs> = records
                .par_iter()
                .enumerate()
                .map(|(i, r)| {
                    let g = TokenSequence::from_text(&r.gold_evidence);
                    let p_nlcs = full.get(r.doc_id.as_str()).and_then(|p| nlcs_parse(p, &g).ok());
                    ParseObs { record: i, parser_style: *style, p_nlcs }
                })
                .collect();
            art.parse.extend(obs);
        }
    }

    if stages.contains(&Stage::Chunk) {
        info!("chunking stage");
        for style in &cfg.parser_styles {
            for method in &cfg.chunk_methods {
                let chunked: Vec<(String, String, Vec<crate::chunker::Chunk>)> = docs[style]
                    .par_iter()
                    .map(|(id, d)| {
                        chunk_document(d, *method, &cfg.chunker, providers.embedder).map(|c| (id.clone(), d.metadata.language.clone(), c))
                    })
                    .collect::<Result<_>>()?;
                let by_doc: HashMap<&str, &Vec<crate::chunker::Chunk>> =
                    chunked.iter().map(|(id, _, c)| (id.as_str(), c)).collect();
                art.chunk_counts.extend(chunked.iter().map(|(id, lang, c)| ChunkCountObs {
                    doc_id: id.clone(),
                    language: lang.clone(),
                    parser_style: *style,
                    method: *method,
                    count: c.len(),
                }));
                let obs: Vec<ChunkingObs> = (0..records.len())
                    .into_par_iter()
                    .filter(|i| passes(&art.parse, *i, *style, cfg.sigma_threshold))
                    .filter_map(|i| {
                        let g = TokenSequence::from_text(&records[i].gold_evidence);
                        let chunks = by_doc.get(records[i].doc_id.as_str())?;
                        let best = chunks
                            .iter()
                            .filter_map(|c| nlcs_chunk(&TokenSequence::from_text(&c.text), &g).ok())
                            .fold(0.0f64, f64::max);
                        Some(ChunkingObs { record: i, parser_style: *style, method: *method, c_nlcs: best })
                    })
                    .collect();
                art.chunking.extend(obs);
            }
        }
    }

    if stages.contains(&Stage::Retrieve) {
        let kept = filtered_records(&art.parse, cfg.parser_style, cfg.sigma_threshold);
        for method in cfg.retrieval_methods() {
            info!(%method, records = kept.len(), "retrieval stage");
            let chunks: Vec<Vec<crate::chunker::Chunk>> = docs[&cfg.parser_style]
                .par_iter()
                .map(|(_, d)| chunk_document(d, method, &cfg.chunker, providers.embedder))
                .collect::<Result<_>>()?;
            let all: Vec<crate::chunker::Chunk> = chunks.into_iter().flatten().collect();
            let mut index = VectorIndex::new();
            index.index_chunks(&all, providers.embedder, cfg.chunker.embed_batch_size)?;

            let per_record: Vec<(usize, Vec<crate::index::RetrievalHit>)> = kept
                .par_iter()
                .map(|&i| {
                    let r = &records[i];
                    let filter: BTreeSet<String> = [r.doc_id.clone()].into();
                    index.search(r.query_id.query().text, cfg.k, Some(&filter), providers.embedder).map(|h| (i, h))
                })
                .collect::<Result<_>>()?;

            for (i, hits) in &per_record {
                art.hits.push(HitsObs {
                    record: *i,
                    method,
                    arm: ARM_RETRIEVAL.into(),
                    fell_back: false,
                    hits: hits
                        .iter()
                        .map(|h| HitObs {
                            chunk_id: h.chunk.chunk_id.clone(),
                            text: h.chunk.text.clone(),
                            similarity: h.similarity,
                            score: h.similarity,
                            rank: h.rank,
                            original_rank: h.rank,
                        })
                        .collect(),
                });
            }

            if stages.contains(&Stage::Rerank) {
                let mut arms: Vec<(String, Option<&dyn RerankProvider>)> = vec![(ARM_NONE.into(), None)];
                if let Some(r) = providers.reranker {
                    arms.push((r.model_id().to_string(), Some(r)));
                }
                for (arm, provider) in arms {
                    let reranked: Vec<HitsObs> = per_record
                        .par_iter()
                        .map(|(i, hits)| {
                            let q = records[*i].query_id.query().text;
                            rerank(q, hits, provider, cfg.rerank_fallback).map(|rr| HitsObs {
                                record: *i,
                                method,
                                arm: arm.clone(),
                                fell_back: rr.fell_back,
                                hits: rr
                                    .hits
                                    .into_iter()
                                    .map(|h| HitObs {
                                        chunk_id: h.chunk.chunk_id,
                                        text: h.chunk.text,
                                        similarity: h.similarity,
                                        score: h.rerank_score,
                                        rank: h.new_rank,
                                        original_rank: h.original_rank,
                                    })
                                    .collect(),
                            })
                        })
                        .collect::<Result<_>>()?;
                    art.hits.extend(reranked);
                }
            }
        }
    }

    if stages.contains(&Stage::Stance) {
        for strategy in &cfg.prompt_strategies {
            info!(%strategy, "stance stage");
            let obs: Vec<StanceObs> = records
                .par_iter()
                .enumerate()
                .map(|(i, r)| {
                    let req = build_prompt(*strategy, &r.query_id.query(), &r.gold_evidence);
                    StanceObs {
                        record: i,
                        phase: StancePhase::Component,
                        prompt_strategy: *strategy,
                        evidence_mode: EvidenceMode::GT,
                        evidence: Some(r.gold_evidence.clone()),
                        outcome: outcome(generate_stance(&req, *strategy, providers.chat, cfg.retries)),
                    }
                })
                .collect();
            art.stance.extend(obs);
        }
    }

    if stages.contains(&Stage::Pipeline) {
        let arm = pipeline_arm(&art.meta.providers);
        let hit_lists: HashMap<usize, &HitsObs> = art
            .hits
            .iter()
            .filter(|h| h.method == cfg.chunk_method && h.arm == arm)
            .map(|h| (h.record, h))
            .collect();
        let kept = filtered_records(&art.parse, cfg.parser_style, cfg.sigma_threshold);
        let strategy = cfg.prompt_strategy;
        info!(records = kept.len(), %strategy, "pipeline stage");
        let per_record: Vec<(Vec<StanceObs>, Vec<OracleObs>)> = kept
            .par_iter()
            .map(|&i| {
                let r = &records[i];
                let query = r.query_id.query();
                let texts: Vec<&str> = hit_lists.get(&i).map(|h| h.hits.iter().map(|x| x.text.as_str()).collect()).unwrap_or_default();
                let gold_req = build_prompt(strategy, &query, &r.gold_evidence);
                let mut p_gold: Option<Option<f64>> = None;
                let mut stance = Vec::new();
                let mut oracle = Vec::new();
                for mode in &cfg.strategies {
                    let sel = EvidenceSelection::new(*mode, cfg.k);
                    let evidence = select_evidence(&sel, &texts, Some(&r.gold_evidence));
                    let (ev, out) = match evidence {
                        Ok(ev) => {
                            let req = build_prompt(strategy, &query, &ev);
                            let out = outcome(generate_stance(&req, strategy, providers.chat, cfg.retries));
                            if *mode != EvidenceMode::GT {
                                let pg = *p_gold.get_or_insert_with(|| score_completion(&gold_req, r.stance, providers.chat).ok());
                                let pe = score_completion(&req, r.stance, providers.chat).ok();
                                let faith = faithfulness(&ev, &r.gold_evidence, providers.aligner, cfg.faithfulness_fallback)
                                    .ok()
                                    .flatten();
                                let conc = conciseness(&ev, &r.gold_evidence, providers.embedder).ok();
                                oracle.push(OracleObs {
                                    record: i,
                                    evidence_mode: *mode,
                                    p_gold: pg,
                                    p_evidence: pe,
                                    faithfulness: faith,
                                    conciseness: conc,
                                });
                            }
                            (Some(ev), out)
                        }
                        Err(e) => (None, StanceOutcome::Failed { kind: error_kind(&e).into(), message: e.to_string() }),
                    };
                    stance.push(StanceObs {
                        record: i,
                        phase: StancePhase::Pipeline,
                        prompt_strategy: strategy,
                        evidence_mode: *mode,
                        evidence: ev,
                        outcome: out,
                    });
                }
                (stance, oracle)
            })
            .collect();
        for (s, o) in per_record {
            art.stance.extend(s);
            art.oracle.extend(o);
        }
    }
    Ok(())
}

/// Hit list the pipeline draws evidence from: the reranker's when one is
/// configured, otherwise the no-op arm.
pub fn pipeline_arm(ids: &ProviderIds) -> String {
    ids.rerank.clone().unwrap_or_else(|| ARM_NONE.to_string())
}

// ---------------------------------------------------------------- report

/// A mean together with its sample count; `None` when nothing was measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mean {
    pub mean: Option<f64>,
    pub n: usize,
}

impl Mean {
    pub fn of<I: IntoIterator<Item = f64>>(values: I) -> Self {
        let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        Mean { mean: (n > 0).then(|| sum / n as f64), n }
    }

    fn of_bools<I: IntoIterator<Item = bool>>(values: I) -> Self {
        Self::of(values.into_iter().map(|b| if b { 1.0 } else { 0.0 }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsingRow {
    pub group: LanguageGroup,
    pub parser_style: ParserStyle,
    pub p_nlcs: Mean,
    pub skipped: usize,
    pub chunks_per_doc: BTreeMap<ChunkMethod, Mean>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkingRow {
    pub group: LanguageGroup,
    pub parser_style: ParserStyle,
    pub method: ChunkMethod,
    pub c_nlcs: Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRow {
    pub group: LanguageGroup,
    pub method: ChunkMethod,
    /// Best gold-normalized nLCS among the top-k hits.
    pub nlcs: Mean,
    pub recall: Mean,
    /// Best chunk-normalized nLCS among the top-k hits.
    pub c_nlcs: Mean,
    pub mrr: Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankRow {
    pub group: LanguageGroup,
    pub method: ChunkMethod,
    pub reranker: String,
    pub mrr: Mean,
    pub fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StanceRow {
    pub group: LanguageGroup,
    pub prompt_strategy: PromptStrategy,
    pub evidence_mode: EvidenceMode,
    pub model_id: String,
    pub em: Mean,
    pub hrt: Mean,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub group: LanguageGroup,
    pub evidence_mode: EvidenceMode,
    pub faithfulness: Mean,
    pub faithfulness_lexical_fallback: usize,
    pub helpfulness: Mean,
    pub conciseness: Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutperformRow {
    pub evidence_mode: EvidenceMode,
    pub wins: usize,
    /// `wins` over the wins of all strategies, so shares sum to one.
    pub share: Option<f64>,
    pub faithfulness: Mean,
    pub helpfulness: Mean,
    pub conciseness: Mean,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Outperformance {
    /// Records where GT evidence gave a wrong stance and some other strategy a right one.
    pub cases: usize,
    pub rows: Vec<OutperformRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub providers: ProviderIds,
    pub stages: Vec<Stage>,
    pub partial: bool,
    pub error: Option<String>,
    pub records: usize,
    pub sigma_threshold: f64,
    pub k: usize,
    pub tolerance: u8,
    pub parsing: Vec<ParsingRow>,
    pub chunking: Vec<ChunkingRow>,
    pub retrieval: Vec<RetrievalRow>,
    pub rerank: Vec<RerankRow>,
    pub stance: Vec<StanceRow>,
    pub pipeline: Vec<StanceRow>,
    pub oracle: Vec<OracleRow>,
    pub outperformance: Option<Outperformance>,
    pub notes: Vec<String>,
}

fn in_group(records: &[EvidenceRecord], i: usize, g: LanguageGroup) -> bool {
    g.contains(&records[i].metadata.language)
}

pub fn parsing_rows(art: &Artifacts, cfg: &EvalConfig) -> Vec<ParsingRow> {
    let styles: BTreeSet<ParserStyle> = art.parse.iter().map(|p| p.parser_style).collect();
    let mut rows = Vec::new();
    for style in cfg.parser_styles.iter().filter(|s| styles.contains(s)) {
        for g in &cfg.language_groups {
            let obs = art.parse.iter().filter(|p| p.parser_style == *style && in_group(&art.records, p.record, *g));
            let (found, missing): (Vec<&ParseObs>, Vec<&ParseObs>) = obs.partition(|p| p.p_nlcs.is_some());
            let mut chunks_per_doc = BTreeMap::new();
            for method in &cfg.chunk_methods {
                let counts: Vec<f64> = art
                    .chunk_counts
                    .iter()
                    .filter(|c| c.parser_style == *style && c.method == *method && g.contains(&c.language))
                    .map(|c| c.count as f64)
                    .collect();
                if !counts.is_empty() {
                    chunks_per_doc.insert(*method, Mean::of(counts));
                }
            }
            rows.push(ParsingRow {
                group: *g,
                parser_style: *style,
                p_nlcs: Mean::of(found.iter().filter_map(|p| p.p_nlcs)),
                skipped: missing.len(),
                chunks_per_doc,
            });
        }
    }
    rows
}

pub fn chunking_rows(art: &Artifacts, cfg: &EvalConfig) -> Vec<ChunkingRow> {
    let mut rows = Vec::new();
    if art.chunking.is_empty() && !art.meta.stages.contains(&Stage::Chunk) {
        return rows;
    }
    for style in &cfg.parser_styles {
        for method in &cfg.chunk_methods {
            for g in &cfg.language_groups {
                let vals = art
                    .chunking
                    .iter()
                    .filter(|c| c.parser_style == *style && c.method == *method && in_group(&art.records, c.record, *g))
                    .map(|c| c.c_nlcs);
                rows.push(ChunkingRow { group: *g, parser_style: *style, method: *method, c_nlcs: Mean::of(vals) });
            }
        }
    }
    rows
}

struct HitScores {
    nlcs: f64,
    recall: bool,
    c_nlcs: f64,
    rr: f64,
}

fn score_hits(obs: &HitsObs, gold: &str, sigma: f64) -> Option<HitScores> {
    let g = TokenSequence::from_text(gold);
    if g.is_empty() {
        return None;
    }
    let seqs: Vec<TokenSequence> = obs.hits.iter().map(|h| TokenSequence::from_text(&h.text)).collect();
    let nlcs = seqs.iter().filter_map(|s| nlcs_parse(s, &g).ok()).fold(0.0f64, f64::max);
    let c_nlcs = seqs.iter().filter_map(|s| nlcs_chunk(s, &g).ok()).fold(0.0f64, f64::max);
    let rank = first_relevant_rank(&seqs, &g, sigma).ok()?;
    Some(HitScores { nlcs, recall: rank.is_some(), c_nlcs, rr: rank.map_or(0.0, |r| 1.0 / r as f64) })
}

pub fn retrieval_rows(art: &Artifacts, cfg: &EvalConfig) -> Vec<RetrievalRow> {
    let methods: BTreeSet<ChunkMethod> =
        art.hits.iter().filter(|h| h.arm == ARM_RETRIEVAL).map(|h| h.method).collect();
    let mut rows = Vec::new();
    for method in methods {
        let scored: Vec<(usize, HitScores)> = art
            .hits
            .iter()
            .filter(|h| h.arm == ARM_RETRIEVAL && h.method == method)
            .filter_map(|h| score_hits(h, &art.records[h.record].gold_evidence, cfg.sigma_threshold).map(|s| (h.record, s)))
            .collect();
        for g in &cfg.language_groups {
            let sel: Vec<&HitScores> = scored.iter().filter(|(i, _)| in_group(&art.records, *i, *g)).map(|(_, s)| s).collect();
            rows.push(RetrievalRow {
                group: *g,
                method,
                nlcs: Mean::of(sel.iter().map(|s| s.nlcs)),
                recall: Mean::of_bools(sel.iter().map(|s| s.recall)),
                c_nlcs: Mean::of(sel.iter().map(|s| s.c_nlcs)),
                mrr: Mean::of(sel.iter().map(|s| s.rr)),
            });
        }
    }
    rows
}

pub fn rerank_rows(art: &Artifacts, cfg: &EvalConfig) -> Vec<RerankRow> {
    let arms: BTreeSet<(ChunkMethod, String)> =
        art.hits.iter().filter(|h| h.arm != ARM_RETRIEVAL).map(|h| (h.method, h.arm.clone())).collect();
    let mut rows = Vec::new();
    for (method, arm) in arms {
        let obs: Vec<&HitsObs> = art.hits.iter().filter(|h| h.method == method && h.arm == arm).collect();
        for g in &cfg.language_groups {
            let sel: Vec<&&HitsObs> = obs.iter().filter(|h| in_group(&art.records, h.record, *g)).collect();
            rows.push(RerankRow {
                group: *g,
                method,
                reranker: arm.clone(),
                mrr: Mean::of(
                    sel.iter().filter_map(|h| score_hits(h, &art.records[h.record].gold_evidence, cfg.sigma_threshold)).map(|s| s.rr),
                ),
                fallbacks: sel.iter().filter(|h| h.fell_back).count(),
            });
        }
    }
    rows
}

fn stance_rows_for(art: &Artifacts, cfg: &EvalConfig, phase: StancePhase) -> Vec<StanceRow> {
    let keys: BTreeSet<(PromptStrategy, EvidenceMode)> =
        art.stance.iter().filter(|s| s.phase == phase).map(|s| (s.prompt_strategy, s.evidence_mode)).collect();
    let mode_order = |m: &EvidenceMode| cfg.strategies.iter().position(|x| x == m).unwrap_or(usize::MAX);
    let mut keys: Vec<_> = keys.into_iter().collect();
    keys.sort_by_key(|(p, m)| (*p, mode_order(m), *m));
    let mut rows = Vec::new();
    for (strategy, mode) in keys {
        let obs: Vec<&StanceObs> =
            art.stance.iter().filter(|s| s.phase == phase && s.prompt_strategy == strategy && s.evidence_mode == mode).collect();
        for g in &cfg.language_groups {
            let mut em = Vec::new();
            let mut hrt = Vec::new();
            let mut failures = 0;
            for s in obs.iter().filter(|s| in_group(&art.records, s.record, *g)) {
                match &s.outcome {
                    StanceOutcome::Ok { score, .. } => {
                        let gold = art.records[s.record].stance;
                        let pred = crate::corpus::Stance::new(*score as i64).expect("validated at generation");
                        em.push(exact_match(gold, pred));
                        hrt.push(hit_rate_tolerance(gold, pred, cfg.tolerance));
                    }
                    StanceOutcome::Failed { .. } => failures += 1,
                }
            }
            rows.push(StanceRow {
                group: *g,
                prompt_strategy: strategy,
                evidence_mode: mode,
                model_id: art.meta.providers.chat.clone(),
                em: Mean::of_bools(em),
                hrt: Mean::of_bools(hrt),
                failures,
            });
        }
    }
    rows
}

pub fn stance_rows(art: &Artifacts, cfg: &EvalConfig) -> Vec<StanceRow> {
    stance_rows_for(art, cfg, StancePhase::Component)
}

pub fn pipeline_rows(art: &Artifacts, cfg: &EvalConfig) -> Vec<StanceRow> {
    stance_rows_for(art, cfg, StancePhase::Pipeline)
}

fn helpfulness_of(o: &OracleObs) -> Option<f64> {
    match (o.p_gold, o.p_evidence) {
        (Some(g), Some(e)) => helpfulness(g, e).ok(),
        _ => None,
    }
}

pub fn oracle_rows(art: &Artifacts, cfg: &EvalConfig) -> Vec<OracleRow> {
    let modes: Vec<EvidenceMode> =
        cfg.strategies.iter().copied().filter(|m| art.oracle.iter().any(|o| o.evidence_mode == *m)).collect();
    let mut rows = Vec::new();
    for mode in modes {
        for g in &cfg.language_groups {
            let sel: Vec<&OracleObs> =
                art.oracle.iter().filter(|o| o.evidence_mode == mode && in_group(&art.records, o.record, *g)).collect();
            rows.push(OracleRow {
                group: *g,
                evidence_mode: mode,
                faithfulness: Mean::of(sel.iter().filter_map(|o| o.faithfulness.map(|f| f.score))),
                faithfulness_lexical_fallback: sel.iter().filter(|o| o.faithfulness.is_some_and(|f| f.lexical_fallback)).count(),
                helpfulness: Mean::of(sel.iter().filter_map(|o| helpfulness_of(o))),
                conciseness: Mean::of(sel.iter().filter_map(|o| o.conciseness)),
            });
        }
    }
    rows
}

/// Records where the GT snippet led to a wrong stance while at least one
/// other strategy was exactly right. Each winning (record, strategy) pair
/// counts once; shares are normalized over all wins.
pub fn outperformance_analysis(art: &Artifacts, cfg: &EvalConfig) -> Outperformance {
    let pipe: Vec<&StanceObs> = art.stance.iter().filter(|s| s.phase == StancePhase::Pipeline).collect();
    let correct = |s: &StanceObs| match &s.outcome {
        StanceOutcome::Ok { score, .. } => *score == art.records[s.record].stance.value(),
        StanceOutcome::Failed { .. } => false,
    };
    let gt_wrong: BTreeSet<usize> = pipe
        .iter()
        .filter(|s| s.evidence_mode == EvidenceMode::GT && matches!(s.outcome, StanceOutcome::Ok { .. }) && !correct(s))
        .map(|s| s.record)
        .collect();
    let modes: Vec<EvidenceMode> = cfg.strategies.iter().copied().filter(|m| *m != EvidenceMode::GT).collect();
    let mut wins: BTreeMap<EvidenceMode, Vec<usize>> = modes.iter().map(|m| (*m, Vec::new())).collect();
    for s in pipe.iter().filter(|s| s.evidence_mode != EvidenceMode::GT && gt_wrong.contains(&s.record) && correct(s)) {
        if let Some(v) = wins.get_mut(&s.evidence_mode) {
            v.push(s.record);
        }
    }
    let cases: BTreeSet<usize> = wins.values().flatten().copied().collect();
    let total: usize = wins.values().map(Vec::len).sum();
    let rows = modes
        .iter()
        .map(|m| {
            let recs = &wins[m];
            let obs: Vec<&OracleObs> =
                art.oracle.iter().filter(|o| o.evidence_mode == *m && recs.contains(&o.record)).collect();
            OutperformRow {
                evidence_mode: *m,
                wins: recs.len(),
                share: (total > 0).then(|| recs.len() as f64 / total as f64),
                faithfulness: Mean::of(obs.iter().filter_map(|o| o.faithfulness.map(|f| f.score))),
                helpfulness: Mean::of(obs.iter().filter_map(|o| helpfulness_of(o))),
                conciseness: Mean::of(obs.iter().filter_map(|o| o.conciseness)),
            }
        })
        .collect();
    Outperformance { cases: cases.len(), rows }
}

pub fn build_report(art: &Artifacts, cfg: &EvalConfig) -> EvalReport {
    let pipeline_ran = art.meta.stages.contains(&Stage::Pipeline);
    EvalReport {
        config_hash: cfg.hash(),
        providers: art.meta.providers.clone(),
        stages: art.meta.stages.clone(),
        partial: art.meta.partial,
        error: art.meta.error.clone(),
        records: art.records.len(),
        sigma_threshold: cfg.sigma_threshold,
        k: cfg.k,
        tolerance: cfg.tolerance,
        parsing: parsing_rows(art, cfg),
        chunking: chunking_rows(art, cfg),
        retrieval: retrieval_rows(art, cfg),
        rerank: rerank_rows(art, cfg),
        stance: stance_rows(art, cfg),
        pipeline: pipeline_rows(art, cfg),
        oracle: oracle_rows(art, cfg),
        outperformance: pipeline_ran.then(|| outperformance_analysis(art, cfg)),
        notes: vec![
            "token counts are whitespace words".into(),
            "nLCS is computed over whitespace word tokens".into(),
            "conciseness is (1 + cosine) / 2 of the evidence and gold embeddings".into(),
            "faithfulness_lexical_fallback counts scores taken from chunk-normalized nLCS".into(),
        ],
    }
}

// ------------------------------------------------------- stage wrappers

pub fn eval_parsing(inputs: &EvalInputs, cfg: &EvalConfig, providers: &Providers<'_>) -> Result<Vec<ParsingRow>> {
    Ok(parsing_rows(&observe(inputs, cfg, &[Stage::Parse, Stage::Chunk], providers)?, cfg))
}

pub fn eval_chunking(inputs: &EvalInputs, cfg: &EvalConfig, providers: &Providers<'_>) -> Result<Vec<ChunkingRow>> {
    Ok(chunking_rows(&observe(inputs, cfg, &[Stage::Chunk], providers)?, cfg))
}

pub fn eval_retrieval(inputs: &EvalInputs, cfg: &EvalConfig, providers: &Providers<'_>) -> Result<Vec<RetrievalRow>> {
    Ok(retrieval_rows(&observe(inputs, cfg, &[Stage::Retrieve], providers)?, cfg))
}

pub fn eval_reranker(inputs: &EvalInputs, cfg: &EvalConfig, providers: &Providers<'_>) -> Result<Vec<RerankRow>> {
    Ok(rerank_rows(&observe(inputs, cfg, &[Stage::Rerank], providers)?, cfg))
}

pub fn eval_stance(inputs: &EvalInputs, cfg: &EvalConfig, providers: &Providers<'_>) -> Result<Vec<StanceRow>> {
    Ok(stance_rows(&observe(inputs, cfg, &[Stage::Stance], providers)?, cfg))
}

pub fn eval_pipeline(inputs: &EvalInputs, cfg: &EvalConfig, providers: &Providers<'_>) -> Result<EvalReport> {
    Ok(build_report(&observe(inputs, cfg, &[Stage::Pipeline], providers)?, cfg))
}

// ---------------------------------------------------------------- emit

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    TableText,
    Structured,
}

pub fn render_structured(report: &EvalReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes") + "\n"
}

fn fmt_mean(m: &Mean) -> String {
    match m.mean {
        Some(v) => format!("{v:.3} (n={})", m.n),
        None => format!("- (n={})", m.n),
    }
}

fn table(out: &mut String, title: &str, header: &[&str], rows: Vec<Vec<String>>) {
    if rows.is_empty() {
        return;
    }
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<String>| {
        cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect::<Vec<_>>().join("  ").trim_end().to_string()
    };
    let _ = writeln!(out, "{title}");
    let _ = writeln!(out, "{}", line(header.iter().map(|s| s.to_string()).collect()));
    let _ = writeln!(out, "{}", line(widths.iter().map(|w| "-".repeat(*w)).collect()));
    for r in rows {
        let _ = writeln!(out, "{}", line(r));
    }
    out.push('\n');
}

pub fn render_table_text(r: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "records: {}  sigma: {}  k: {}  tolerance: {}", r.records, r.sigma_threshold, r.k, r.tolerance);
    let _ = writeln!(out, "config: {}", r.config_hash);
    let _ = writeln!(
        out,
        "providers: embedding={} rerank={} chat={} alignment={}",
        r.providers.embedding,
        r.providers.rerank.as_deref().unwrap_or("-"),
        r.providers.chat,
        r.providers.alignment.as_deref().unwrap_or("-")
    );
    if r.partial {
        let _ = writeln!(out, "PARTIAL: {}", r.error.as_deref().unwrap_or("run incomplete"));
    }
    out.push('\n');
    table(
        &mut out,
        "Parsing",
        &["group", "parser", "P_nLCS", "skipped", "chunks/doc"],
        r.parsing
            .iter()
            .map(|x| {
                vec![
                    x.group.to_string(),
                    x.parser_style.to_string(),
                    fmt_mean(&x.p_nlcs),
                    x.skipped.to_string(),
                    x.chunks_per_doc.iter().map(|(m, v)| format!("{m}={}", fmt_mean(v))).collect::<Vec<_>>().join(" "),
                ]
            })
            .collect(),
    );
    table(
        &mut out,
        "Chunking",
        &["group", "parser", "method", "C_nLCS"],
        r.chunking
            .iter()
            .map(|x| vec![x.group.to_string(), x.parser_style.to_string(), x.method.to_string(), fmt_mean(&x.c_nlcs)])
            .collect(),
    );
    table(
        &mut out,
        "Retrieval",
        &["group", "method", "nLCS", "Recall@k", "C_nLCS", "MRR"],
        r.retrieval
            .iter()
            .map(|x| {
                vec![x.group.to_string(), x.method.to_string(), fmt_mean(&x.nlcs), fmt_mean(&x.recall), fmt_mean(&x.c_nlcs), fmt_mean(&x.mrr)]
            })
            .collect(),
    );
    table(
        &mut out,
        "Reranking",
        &["group", "method", "reranker", "MRR", "fallbacks"],
        r.rerank
            .iter()
            .map(|x| vec![x.group.to_string(), x.method.to_string(), x.reranker.clone(), fmt_mean(&x.mrr), x.fallbacks.to_string()])
            .collect(),
    );
    let stance_table = |out: &mut String, title: &str, rows: &[StanceRow]| {
        table(
            out,
            title,
            &["group", "prompt", "evidence", "model", "EM", "HRT", "failures"],
            rows.iter()
                .map(|x| {
                    vec![
                        x.group.to_string(),
                        x.prompt_strategy.to_string(),
                        x.evidence_mode.to_string(),
                        x.model_id.clone(),
                        fmt_mean(&x.em),
                        fmt_mean(&x.hrt),
                        x.failures.to_string(),
                    ]
                })
                .collect(),
        )
    };
    stance_table(&mut out, "Stance (gold evidence)", &r.stance);
    stance_table(&mut out, "Pipeline", &r.pipeline);
    table(
        &mut out,
        "Oracle diagnostics",
        &["group", "evidence", "faithfulness", "helpfulness", "conciseness"],
        r.oracle
            .iter()
            .map(|x| {
                vec![
                    x.group.to_string(),
                    x.evidence_mode.to_string(),
                    fmt_mean(&x.faithfulness),
                    fmt_mean(&x.helpfulness),
                    fmt_mean(&x.conciseness),
                ]
            })
            .collect(),
    );
    if let Some(o) = &r.outperformance {
        let _ = writeln!(out, "Outperforming cases: {}", o.cases);
        table(
            &mut out,
            "Outperformance",
            &["evidence", "wins", "share", "faithfulness", "helpfulness", "conciseness"],
            o.rows
                .iter()
                .map(|x| {
                    vec![
                        x.evidence_mode.to_string(),
                        x.wins.to_string(),
                        x.share.map_or("-".into(), |s| format!("{:.1}%", s * 100.0)),
                        fmt_mean(&x.faithfulness),
                        fmt_mean(&x.helpfulness),
                        fmt_mean(&x.conciseness),
                    ]
                })
                .collect(),
        );
    }
    for n in &r.notes {
        let _ = writeln!(out, "note: {n}");
    }
    out
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::TableText => render_table_text(report),
        ReportFormat::Structured => render_structured(report),
    }
}

pub fn emit_report(report: &EvalReport, format: ReportFormat, path: &Path) -> Result<()> {
    std::fs::write(path, render_report(report, format))?;
    Ok(())
}
