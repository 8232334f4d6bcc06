//! Contracts for the external model services: embedding, reranking,
//! chat/tool-calling and alignment scoring.
//!
//! Every provider is synchronous and `Send + Sync` so the harness can fan
//! calls out over a thread pool. [`http`] holds the wire clients and
//! [`stub`] the deterministic stand-ins used for desk-scale runs and tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod http;
pub mod stub;

pub trait EmbeddingProvider: Send + Sync {
    fn model_id(&self) -> &str;

    /// Raw (not necessarily normalized) vectors, one per input text, in order.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>>;
}

pub trait RerankProvider: Send + Sync {
    fn model_id(&self) -> &str;

    /// Relevance scores aligned by position with `documents`.
    fn score(&self, query: &str, documents: &[String]) -> Result<Vec<f64>>;
}

pub trait ChatProvider: Send + Sync {
    fn model_id(&self) -> &str;

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse>;

    /// Per-token log-probabilities of `completion` forced after the request's messages.
    fn completion_logprobs(&self, _request: &ChatRequest, _completion: &str) -> Result<Vec<f64>> {
        Err(Error::LogprobsUnsupported)
    }
}

pub trait AlignmentProvider: Send + Sync {
    fn model_id(&self) -> &str;

    /// Alignment of `claim` with `context`, in [0, 1].
    fn align(&self, claim: &str, context: &str) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub parameters: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub tools: Vec<ToolSpec>,
    /// Name of the tool the model must call.
    pub forced_tool: Option<String>,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn system_prompt(&self) -> Option<&str> {
        self.messages.iter().find(|m| m.role == Role::System).map(|m| m.content.as_str())
    }

    pub fn user_message(&self) -> Option<&str> {
        self.messages.iter().rev().find(|m| m.role == Role::User).map(|m| m.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    /// JSON-encoded arguments, as returned by the model.
    pub arguments: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: Option<String>,
    pub tool_calls: Vec<ToolCall>,
}

/// Scales a vector to unit L2 norm; zero vectors are returned unchanged.
pub fn l2_normalize(mut v: Vec<f32>) -> Vec<f32> {
    let norm = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x = (*x as f64 / norm) as f32;
        }
    }
    v
}

/// Dot product accumulated in f64.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}
