//! Blocking HTTP clients for the provider wire contracts.
//!
//! | provider  | request                                          | response                      |
//! |-----------|--------------------------------------------------|-------------------------------|
//! | embedding | `{model, input: [text]}`                         | `{embeddings: [[f32]]}`       |
//! | rerank    | `{model, query, documents: [text]}`              | `{scores: [f64]}`             |
//! | chat      | OpenAI chat completions with forced `tool_choice`| `choices[0].message.tool_calls` |
//! | logprobs  | `{model, messages, forced_completion, logprobs}` | `{token_logprobs: [f64]}`     |
//! | alignment | `{claim, context}`                               | `{score}`                     |

use std::time::Duration;

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::warn;

use super::{AlignmentProvider, ChatProvider, ChatRequest, ChatResponse, EmbeddingProvider, RerankProvider, ToolCall};
use crate::error::{Error, Result};

fn default_timeout() -> u64 {
    30
}

fn default_retries() -> u32 {
    2
}

/// One provider endpoint as configured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    #[serde(default)]
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// Bearer token sent as `Authorization` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
    /// Chat only: the endpoint implements the forced-completion logprobs extension.
    #[serde(default)]
    pub logprobs: bool,
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: model.into(),
            timeout_secs: default_timeout(),
            retries: default_retries(),
            api_key: None,
            logprobs: false,
        }
    }
}

#[derive(Debug)]
enum PostError {
    Transport(String),
    Status(u16, String),
    Decode(String),
}

impl std::fmt::Display for PostError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PostError::Transport(m) => write!(f, "transport error: {m}"),
            PostError::Status(s, body) => write!(f, "HTTP {s}: {body}"),
            PostError::Decode(m) => write!(f, "undecodable response: {m}"),
        }
    }
}

struct HttpEndpoint {
    cfg: EndpointConfig,
    client: Client,
}

impl HttpEndpoint {
    fn new(cfg: EndpointConfig) -> Result<Self> {
        let client = Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs.max(1)))
            .build()
            .map_err(|e| Error::InvalidConfig(format!("http client: {e}")))?;
        Ok(Self { cfg, client })
    }

    /// POSTs JSON, retrying transport failures and 5xx responses.
    fn post(&self, body: &Value) -> std::result::Result<Value, PostError> {
        let mut last = PostError::Transport("no attempt made".into());
        for attempt in 0..=self.cfg.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(100 * attempt as u64));
            }
            let mut req = self.client.post(&self.cfg.url).json(body);
            if let Some(key) = &self.cfg.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Err(e) => last = PostError::Transport(e.to_string()),
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().map_err(|e| PostError::Transport(e.to_string()))?;
                    if status.is_success() {
                        return serde_json::from_str(&text).map_err(|e| PostError::Decode(e.to_string()));
                    }
                    last = PostError::Status(status.as_u16(), text);
                    if !status.is_server_error() {
                        return Err(last);
                    }
                }
            }
            warn!(url = %self.cfg.url, attempt, error = %last, "provider call failed");
        }
        Err(last)
    }
}

pub struct HttpEmbedder(HttpEndpoint);

impl HttpEmbedder {
    pub fn new(cfg: EndpointConfig) -> Result<Self> {
        HttpEndpoint::new(cfg).map(Self)
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn model_id(&self) -> &str {
        &self.0.cfg.model
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let body = json!({ "model": self.0.cfg.model, "input": texts });
        let v = self.0.post(&body).map_err(|e| Error::EmbeddingUnavailable(e.to_string()))?;
        parse_embeddings(&v).ok_or_else(|| Error::EmbeddingUnavailable("response lacks `embeddings`".into()))
    }
}

fn parse_vector(v: &Value) -> Option<Vec<f32>> {
    v.as_array()?.iter().map(|x| x.as_f64().map(|f| f as f32)).collect()
}

/// Accepts `{embeddings: [[..]]}` and the OpenAI `{data: [{embedding: [..]}]}` shape.
fn parse_embeddings(v: &Value) -> Option<Vec<Vec<f32>>> {
    if let Some(arr) = v.get("embeddings").and_then(Value::as_array) {
        return arr.iter().map(parse_vector).collect();
    }
    let data = v.get("data")?.as_array()?;
    data.iter().map(|d| parse_vector(d.get("embedding")?)).collect()
}

pub struct HttpReranker(HttpEndpoint);

impl HttpReranker {
    pub fn new(cfg: EndpointConfig) -> Result<Self> {
        HttpEndpoint::new(cfg).map(Self)
    }
}

impl RerankProvider for HttpReranker {
    fn model_id(&self) -> &str {
        &self.0.cfg.model
    }

    fn score(&self, query: &str, documents: &[String]) -> Result<Vec<f64>> {
        let body = json!({ "model": self.0.cfg.model, "query": query, "documents": documents });
        let v = self.0.post(&body).map_err(|e| Error::RerankUnavailable(e.to_string()))?;
        let scores: Option<Vec<f64>> = v
            .get("scores")
            .and_then(Value::as_array)
            .and_then(|a| a.iter().map(Value::as_f64).collect());
        match scores {
            Some(s) if s.len() == documents.len() => Ok(s),
            Some(s) => Err(Error::RerankUnavailable(format!(
                "expected {} scores, got {}",
                documents.len(),
                s.len()
            ))),
            None => Err(Error::RerankUnavailable("response lacks `scores`".into())),
        }
    }
}

pub struct HttpChat(HttpEndpoint);

impl HttpChat {
    pub fn new(cfg: EndpointConfig) -> Result<Self> {
        HttpEndpoint::new(cfg).map(Self)
    }
}

/// Serializes a request in the OpenAI chat-completions shape.
pub fn chat_request_body(model: &str, request: &ChatRequest) -> Value {
    let tools: Vec<Value> = request
        .tools
        .iter()
        .map(|t| {
            json!({
                "type": "function",
                "function": { "name": t.name, "description": t.description, "parameters": t.parameters }
            })
        })
        .collect();
    let mut body = json!({
        "model": model,
        "messages": request.messages,
        "temperature": request.temperature,
    });
    if !tools.is_empty() {
        body["tools"] = Value::Array(tools);
    }
    if let Some(name) = &request.forced_tool {
        body["tool_choice"] = json!({ "type": "function", "function": { "name": name } });
    }
    body
}

fn parse_chat_response(v: &Value) -> Option<ChatResponse> {
    let msg = v.get("choices")?.as_array()?.first()?.get("message")?;
    let content = msg.get("content").and_then(Value::as_str).map(str::to_string);
    let mut tool_calls = Vec::new();
    if let Some(calls) = msg.get("tool_calls").and_then(Value::as_array) {
        for c in calls {
            let f = c.get("function")?;
            let name = f.get("name")?.as_str()?.to_string();
            let arguments = match f.get("arguments") {
                Some(Value::String(s)) => s.clone(),
                Some(other) => other.to_string(),
                None => String::new(),
            };
            tool_calls.push(ToolCall { name, arguments });
        }
    }
    Some(ChatResponse { content, tool_calls })
}

impl ChatProvider for HttpChat {
    fn model_id(&self) -> &str {
        &self.0.cfg.model
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        let body = chat_request_body(&self.0.cfg.model, request);
        let v = self.0.post(&body).map_err(|e| Error::ProviderUnavailable(e.to_string()))?;
        parse_chat_response(&v).ok_or_else(|| Error::MalformedToolCall("response lacks choices[0].message".into()))
    }

    fn completion_logprobs(&self, request: &ChatRequest, completion: &str) -> Result<Vec<f64>> {
        if !self.0.cfg.logprobs {
            return Err(Error::LogprobsUnsupported);
        }
        let body = json!({
            "model": self.0.cfg.model,
            "messages": request.messages,
            "forced_completion": completion,
            "logprobs": true,
        });
        let v = match self.0.post(&body) {
            Ok(v) => v,
            Err(PostError::Status(400 | 404 | 422 | 501, _)) => return Err(Error::LogprobsUnsupported),
            Err(e) => return Err(Error::ProviderUnavailable(e.to_string())),
        };
        v.get("token_logprobs")
            .and_then(Value::as_array)
            .and_then(|a| a.iter().map(Value::as_f64).collect())
            .ok_or(Error::LogprobsUnsupported)
    }
}

pub struct HttpAligner(HttpEndpoint);

impl HttpAligner {
    pub fn new(cfg: EndpointConfig) -> Result<Self> {
        HttpEndpoint::new(cfg).map(Self)
    }
}

impl AlignmentProvider for HttpAligner {
    fn model_id(&self) -> &str {
        &self.0.cfg.model
    }

    fn align(&self, claim: &str, context: &str) -> Result<f64> {
        let v = self
            .0
            .post(&json!({ "claim": claim, "context": context }))
            .map_err(|e| Error::ScorerUnavailable(e.to_string()))?;
        match v.get("score").and_then(Value::as_f64) {
            Some(s) if (0.0..=1.0).contains(&s) => Ok(s),
            Some(s) => Err(Error::ScorerUnavailable(format!("score {s} outside [0, 1]"))),
            None => Err(Error::ScorerUnavailable("response lacks `score`".into())),
        }
    }
}
