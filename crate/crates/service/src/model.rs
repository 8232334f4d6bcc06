//! Request, response and artifact types.

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use stancerag_core::chunker::Chunk;
use stancerag_core::corpus::{DocumentMetadata, EvidenceRecord, ParserStyle, Stance, UploadPayload};
use stancerag_core::harness::{EvalConfig, EvalReport, Stage};
use stancerag_core::stance::{PromptStrategy, QueryId};
use stancerag_core::ProviderKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredDocument {
    pub payload: UploadPayload,
    pub content_hash: String,
    pub chunks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentSummary {
    pub doc_id: String,
    pub parser_style: ParserStyle,
    pub metadata: DocumentMetadata,
    pub content_hash: String,
    pub chunks: usize,
}

impl From<&StoredDocument> for DocumentSummary {
    fn from(d: &StoredDocument) -> Self {
        Self {
            doc_id: d.payload.doc_id.clone(),
            parser_style: d.payload.parser_style,
            metadata: d.payload.metadata.clone(),
            content_hash: d.content_hash.clone(),
            chunks: d.chunks,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UploadStatus {
    Created,
    Unchanged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadResponse {
    pub doc_id: String,
    pub status: UploadStatus,
    pub chunks: usize,
}

/// Either `query_id` (one of the canonical queries) or free-text `query`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    pub query_id: Option<i64>,
    pub query: Option<String>,
    /// Restricts retrieval to these documents; absent means corpus-wide.
    pub doc_ids: Option<Vec<String>>,
    pub k: Option<usize>,
    pub prompt_strategy: Option<PromptStrategy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderFailure {
    pub provider: ProviderKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ItemStance {
    Ok { score: Stance, reason: String, attempts: usize },
    Failed { kind: String, message: String },
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHit {
    pub chunk: Chunk,
    pub similarity: f64,
    pub rerank_score: f64,
    pub rank: usize,
    pub original_rank: usize,
    pub stance: ItemStance,
}

/// Everything observed while answering one query. The HTTP response is a
/// pure function of this record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRun {
    pub run_id: String,
    pub created_at: DateTime<Utc>,
    pub query_id: Option<QueryId>,
    pub query: String,
    pub doc_filter: Option<BTreeSet<String>>,
    pub k: usize,
    pub prompt_strategy: PromptStrategy,
    pub embedding_model: String,
    pub rerank_model: Option<String>,
    pub rerank_fell_back: bool,
    pub chat_model: String,
    pub hits: Vec<RunHit>,
    pub provider_error: Option<ProviderFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StanceView {
    pub score: Stance,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub rank: usize,
    pub chunk_id: String,
    pub doc_id: String,
    pub block_span: [usize; 2],
    pub text: String,
    pub similarity: f64,
    pub rerank_score: f64,
    pub stance: Option<StanceView>,
    pub stance_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub run_id: String,
    pub query_id: Option<QueryId>,
    pub query: String,
    pub k: usize,
    pub prompt_strategy: PromptStrategy,
    pub rerank_fell_back: bool,
    pub items: Vec<EvidenceItem>,
}

/// Body of a 503 answer: the failing provider plus retrieval-only results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradedResponse {
    pub error: String,
    pub provider: ProviderKind,
    pub run_id: String,
    pub partial: QueryResponse,
}

impl QueryRun {
    pub fn response(&self) -> QueryResponse {
        QueryResponse {
            run_id: self.run_id.clone(),
            query_id: self.query_id,
            query: self.query.clone(),
            k: self.k,
            prompt_strategy: self.prompt_strategy,
            rerank_fell_back: self.rerank_fell_back,
            items: self
                .hits
                .iter()
                .map(|h| {
                    let (stance, stance_error) = match &h.stance {
                        ItemStance::Ok { score, reason, .. } => (Some(StanceView { score: *score, reason: reason.clone() }), None),
                        ItemStance::Failed { message, .. } => (None, Some(message.clone())),
                        ItemStance::Skipped => (None, None),
                    };
                    EvidenceItem {
                        rank: h.rank,
                        chunk_id: h.chunk.chunk_id.clone(),
                        doc_id: h.chunk.doc_id.clone(),
                        block_span: h.chunk.block_span,
                        text: h.chunk.text.clone(),
                        similarity: h.similarity,
                        rerank_score: h.rerank_score,
                        stance,
                        stance_error,
                    }
                })
                .collect(),
        }
    }

    pub fn degraded(&self) -> Option<DegradedResponse> {
        self.provider_error.as_ref().map(|f| DegradedResponse {
            error: f.message.clone(),
            provider: f.provider,
            run_id: self.run_id.clone(),
            partial: self.response(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject,
    Correct,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Accept => "accept",
            Verdict::Reject => "reject",
            Verdict::Correct => "correct",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackRequest {
    pub run_id: String,
    pub chunk_id: String,
    pub verdict: Verdict,
    pub analyst_stance: Option<i64>,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEntry {
    pub entry_id: String,
    pub run_id: String,
    pub query_id: QueryId,
    pub doc_id: String,
    pub chunk_id: String,
    pub chunk_text: String,
    pub shown_stance: Option<Stance>,
    pub analyst_stance: Option<Stance>,
    pub verdict: Verdict,
    pub note: String,
    pub timestamp: DateTime<Utc>,
}

impl FeedbackEntry {
    /// The stance this entry asserts for its chunk.
    pub fn resolved_stance(&self) -> Stance {
        match self.verdict {
            Verdict::Correct => self.analyst_stance.expect("validated on entry"),
            _ => self.shown_stance.unwrap_or_else(|| Stance::new(0).expect("0 is a stance")),
        }
    }

    pub fn to_record(&self, metadata: DocumentMetadata) -> EvidenceRecord {
        let shown = self.shown_stance.map_or("none".to_string(), |s| s.to_string());
        EvidenceRecord {
            doc_id: self.doc_id.clone(),
            query_id: self.query_id,
            gold_evidence: self.chunk_text.clone(),
            stance: self.resolved_stance(),
            comment: format!("feedback {} verdict={} shown_stance={shown}", self.entry_id, self.verdict),
            metadata,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRequest {
    pub records: Vec<EvidenceRecord>,
    #[serde(default = "default_stages")]
    pub stages: Vec<Stage>,
    pub config: Option<EvalConfig>,
}

fn default_stages() -> Vec<Stage> {
    vec![Stage::Pipeline]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Query,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunBundle {
    pub run_id: String,
    pub kind: RunKind,
    pub status: RunStatus,
    pub partial: bool,
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query: Option<QueryRun>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response: Option<QueryResponse>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub artifacts: Option<stancerag_core::Artifacts>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<EvalReport>,
}
