//! Deterministic stand-in providers.
//!
//! None of these touch the network; identical inputs always give identical
//! outputs, which is what makes stub-provider evaluation runs byte-reproducible.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{
    AlignmentProvider, ChatProvider, ChatRequest, ChatResponse, EmbeddingProvider, RerankProvider, ToolCall,
};
use crate::error::{Error, Result};

/// 64-bit FNV-1a; stable across platforms and compiler versions.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Lowercased alphanumeric word tokens.
pub fn lexical_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Bag-of-words feature hashing: identical texts map to identical vectors and
/// lexical overlap yields positive cosine similarity.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
    model_id: String,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim: dim.max(1), model_id: format!("stub-hash-{dim}") }
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(512)
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        Ok(texts
            .iter()
            .map(|t| {
                let mut v = vec![0f32; self.dim];
                for tok in lexical_tokens(t) {
                    let h = fnv1a(tok.as_bytes());
                    let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
                    v[(h % self.dim as u64) as usize] += sign;
                }
                v
            })
            .collect())
    }
}

/// Pseudo-random vector per distinct text: identical texts agree, everything
/// else is uncorrelated, so retrieval order is effectively shuffled.
#[derive(Debug, Clone)]
pub struct ShufflingEmbedder {
    dim: usize,
    seed: u64,
    model_id: String,
}

impl ShufflingEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim: dim.max(1), seed, model_id: format!("stub-shuffle-{dim}-{seed}") }
    }
}

impl EmbeddingProvider for ShufflingEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        Ok(texts
            .iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(t.as_bytes()) ^ self.seed);
                (0..self.dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
            })
            .collect())
    }
}

/// Embedder backed by a closure, for tests that need exact vectors.
pub struct FnEmbedder<F> {
    model_id: String,
    f: F,
}

impl<F: Fn(&str) -> Vec<f32> + Send + Sync> FnEmbedder<F> {
    pub fn new(model_id: impl Into<String>, f: F) -> Self {
        Self { model_id: model_id.into(), f }
    }
}

impl<F: Fn(&str) -> Vec<f32> + Send + Sync> EmbeddingProvider for FnEmbedder<F> {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        Ok(texts.iter().map(|t| (self.f)(t)).collect())
    }
}

/// A provider that is always down.
#[derive(Debug, Clone, Default)]
pub struct Unavailable;

impl EmbeddingProvider for Unavailable {
    fn model_id(&self) -> &str {
        "unavailable"
    }
    fn embed(&self, _texts: &[String]) -> Result<Vec<Vec<f32>>> {
        Err(Error::EmbeddingUnavailable("stub provider is down".into()))
    }
}

impl RerankProvider for Unavailable {
    fn model_id(&self) -> &str {
        "unavailable"
    }
    fn score(&self, _query: &str, _documents: &[String]) -> Result<Vec<f64>> {
        Err(Error::RerankUnavailable("stub provider is down".into()))
    }
}

impl ChatProvider for Unavailable {
    fn model_id(&self) -> &str {
        "unavailable"
    }
    fn complete(&self, _request: &ChatRequest) -> Result<ChatResponse> {
        Err(Error::ProviderUnavailable("stub provider is down".into()))
    }
}

impl AlignmentProvider for Unavailable {
    fn model_id(&self) -> &str {
        "unavailable"
    }
    fn align(&self, _claim: &str, _context: &str) -> Result<f64> {
        Err(Error::ScorerUnavailable("stub provider is down".into()))
    }
}

/// Scores documents by query-term overlap, damped by document length.
#[derive(Debug, Clone, Default)]
pub struct OverlapReranker;

impl RerankProvider for OverlapReranker {
    fn model_id(&self) -> &str {
        "stub-overlap"
    }

    fn score(&self, query: &str, documents: &[String]) -> Result<Vec<f64>> {
        let q: std::collections::BTreeSet<String> = lexical_tokens(query).into_iter().collect();
        Ok(documents
            .iter()
            .map(|d| {
                let toks = lexical_tokens(d);
                if toks.is_empty() {
                    return 0.0;
                }
                let hits = toks.iter().filter(|t| q.contains(*t)).count() as f64;
                hits / (toks.len() as f64).sqrt()
            })
            .collect())
    }
}

pub struct FnReranker<F> {
    f: F,
}

impl<F: Fn(&str, &str) -> f64 + Send + Sync> FnReranker<F> {
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<F: Fn(&str, &str) -> f64 + Send + Sync> RerankProvider for FnReranker<F> {
    fn model_id(&self) -> &str {
        "stub-fn"
    }

    fn score(&self, query: &str, documents: &[String]) -> Result<Vec<f64>> {
        Ok(documents.iter().map(|d| (self.f)(query, d)).collect())
    }
}

/// Stance cue phrases recognized by [`KeywordStanceChat`], per language.
pub const STANCE_CUES: &[(i8, &[&str])] = &[
    (2, &["strongly advocates", "fordert nachdrücklich", "plaide fermement pour", "aboga firmemente por"]),
    (1, &["supports", "unterstützt", "soutient", "apoya"]),
    (0, &["takes note of", "nimmt zur kenntnis", "prend acte de", "toma nota de"]),
    (-1, &["has reservations about", "hat vorbehalte gegen", "émet des réserves sur", "tiene reservas sobre"]),
    (-2, &["opposes", "lehnt entschieden ab", "s'oppose à", "se opone a"]),
];

/// Cue phrase for a stance in a language (falls back to English).
pub fn stance_cue(score: i8, language: &str) -> &'static str {
    let idx = match language {
        "de" => 1,
        "fr" => 2,
        "es" => 3,
        _ => 0,
    };
    STANCE_CUES.iter().find(|(s, _)| *s == score).map(|(_, c)| c[idx]).unwrap_or("takes note of")
}

/// Earliest stance cue in `text`; longer phrases win ties.
pub fn detect_cue(text: &str) -> Option<(i8, &'static str)> {
    let lower = text.to_lowercase();
    let mut best: Option<(usize, usize, i8, &'static str)> = None;
    for (score, cues) in STANCE_CUES {
        for cue in *cues {
            if let Some(pos) = lower.find(cue) {
                let better = match best {
                    None => true,
                    Some((p, len, _, _)) => pos < p || (pos == p && cue.len() > len),
                };
                if better {
                    best = Some((pos, cue.len(), *score, cue));
                }
            }
        }
    }
    best.map(|(_, _, s, c)| (s, c))
}

/// Reads the `Context:` section of the user message and reports the stance of
/// the earliest cue phrase found there (0 when none).
#[derive(Debug, Clone, Default)]
pub struct KeywordStanceChat;

impl KeywordStanceChat {
    fn predict(request: &ChatRequest) -> (i8, String) {
        let user = request.user_message().unwrap_or_default();
        let context = user.split_once("Context:").map(|(_, c)| c).unwrap_or(user);
        match detect_cue(context) {
            Some((s, cue)) => (s, format!("the evidence states that the company {cue} the measure")),
            None => (0, "the evidence does not state a clear position".to_string()),
        }
    }
}

impl ChatProvider for KeywordStanceChat {
    fn model_id(&self) -> &str {
        "stub-keyword-chat"
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        let (score, reason) = Self::predict(request);
        Ok(tool_call_response(json!(score), &reason))
    }

    /// One token per label; 0.6 on the predicted label, 0.1 on each other.
    fn completion_logprobs(&self, request: &ChatRequest, completion: &str) -> Result<Vec<f64>> {
        let (score, _) = Self::predict(request);
        let p = if completion.trim().trim_start_matches('+') == score.to_string() { 0.6f64 } else { 0.1 };
        Ok(vec![p.ln()])
    }
}

/// A response carrying one `report_stance` call with the given score value.
pub fn tool_call_response(score: serde_json::Value, reason: &str) -> ChatResponse {
    ChatResponse {
        content: None,
        tool_calls: vec![ToolCall {
            name: "report_stance".into(),
            arguments: json!({ "score": score, "reason": reason }).to_string(),
        }],
    }
}

/// A plain-text response with no tool call.
pub fn text_response(text: &str) -> ChatResponse {
    ChatResponse { content: Some(text.into()), tool_calls: vec![] }
}

/// Replays queued responses in order (repeating the last) and counts calls.
pub struct ScriptedChat {
    queue: Mutex<VecDeque<ChatResponse>>,
    last: Mutex<Option<ChatResponse>>,
    calls: AtomicUsize,
    logprobs: Option<Vec<f64>>,
}

impl ScriptedChat {
    pub fn new(responses: impl IntoIterator<Item = ChatResponse>) -> Self {
        Self {
            queue: Mutex::new(responses.into_iter().collect()),
            last: Mutex::new(None),
            calls: AtomicUsize::new(0),
            logprobs: None,
        }
    }

    pub fn with_logprobs(mut self, logprobs: Vec<f64>) -> Self {
        self.logprobs = Some(logprobs);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatProvider for ScriptedChat {
    fn model_id(&self) -> &str {
        "stub-scripted"
    }

    fn complete(&self, _request: &ChatRequest) -> Result<ChatResponse> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let next = self.queue.lock().unwrap().pop_front();
        let mut last = self.last.lock().unwrap();
        if let Some(r) = next {
            *last = Some(r);
        }
        last.clone().ok_or_else(|| Error::ProviderUnavailable("script exhausted".into()))
    }

    fn completion_logprobs(&self, _request: &ChatRequest, _completion: &str) -> Result<Vec<f64>> {
        self.logprobs.clone().ok_or(Error::LogprobsUnsupported)
    }
}

/// Chat stub backed by a closure over the request.
pub struct FnChat<F> {
    f: F,
}

impl<F: Fn(&ChatRequest) -> Result<ChatResponse> + Send + Sync> FnChat<F> {
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<F: Fn(&ChatRequest) -> Result<ChatResponse> + Send + Sync> ChatProvider for FnChat<F> {
    fn model_id(&self) -> &str {
        "stub-fn-chat"
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        (self.f)(request)
    }
}
