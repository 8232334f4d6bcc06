//! HTTP front end over the retrieval and stance pipeline.

mod error;
pub mod model;
mod state;

use std::collections::BTreeSet;
use std::sync::atomic::Ordering;

use axum::extract::{Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde_json::{json, Value};
use stancerag_core::chunker::chunk_document;
use stancerag_core::corpus::{Stance, UploadPayload};
use stancerag_core::harness::{build_report, observe, render_structured, Artifacts, EvalConfig, EvalInputs};
use stancerag_core::rerank::rerank;
use stancerag_core::stance::{build_prompt_text, generate_stance, QueryId};
use stancerag_core::Error;
use tracing::{info, warn};

pub use error::{ApiError, ApiResult};
pub use state::{content_hash, AppState, ServiceProviders};

use model::*;

pub fn router(state: AppState) -> Router {
    let protected = Router::new()
        .route("/documents", post(upload_document).get(list_documents))
        .route("/query", post(run_query))
        .route("/feedback", post(record_feedback))
        .route("/feedback/export", get(export_feedback))
        .route("/runs/eval", post(start_eval))
        .route("/runs/{id}", get(get_run))
        .route("/config", get(get_config))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new().route("/health", get(health)).merge(protected).with_state(state)
}

/// Binds and serves until ctrl-c.
pub async fn serve(state: AppState, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.config.service.api_token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|v| v == token);
        if !ok {
            return ApiError::new(StatusCode::UNAUTHORIZED, "missing or invalid bearer token").into_response();
        }
    }
    next.run(req).await
}

async fn health(State(state): State<AppState>) -> Json<Value> {
    let index = state.index();
    Json(json!({
        "status": "ok",
        "documents": state.documents.read().len(),
        "chunks": index.len(),
        "embedding_model": state.providers.embedder.model_id(),
    }))
}

async fn get_config(State(state): State<AppState>) -> Json<Value> {
    let mut cfg = state.config.clone();
    for c in [&mut cfg.providers.embedding, &mut cfg.providers.chat, &mut cfg.providers.rerank, &mut cfg.providers.alignment]
        .into_iter()
        .flatten()
    {
        if c.api_key.is_some() {
            c.api_key = Some("<redacted>".into());
        }
    }
    if cfg.service.api_token.is_some() {
        cfg.service.api_token = Some("<redacted>".into());
    }
    Json(serde_json::to_value(cfg).expect("config serializes"))
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid body: {e}")))
}

async fn upload_document(State(state): State<AppState>, body: axum::body::Bytes) -> ApiResult<Response> {
    let payload: UploadPayload = parse_body(&body)?;
    let doc = payload.ingest()?;
    let hash = content_hash(&payload);

    let _guard = state.upload_lock.lock().await;
    if let Some(existing) = state.documents.read().get(&payload.doc_id) {
        if existing.content_hash == hash {
            let r = UploadResponse { doc_id: payload.doc_id.clone(), status: UploadStatus::Unchanged, chunks: existing.chunks };
            return Ok((StatusCode::OK, Json(r)).into_response());
        }
        return Err(ApiError::conflict(format!("document {} already exists with different content", payload.doc_id)));
    }

    let st = state.clone();
    let (index, chunks) = tokio::task::spawn_blocking(move || -> stancerag_core::Result<_> {
        let cfg = &st.config.eval;
        let chunks = chunk_document(&doc, cfg.chunk_method, &cfg.chunker, st.providers.embedder.as_ref())?;
        let mut index = (*st.index()).clone();
        index.index_chunks(&chunks, st.providers.embedder.as_ref(), cfg.chunker.embed_batch_size)?;
        st.persist_index(&index)?;
        Ok((index, chunks.len()))
    })
    .await??;

    let stored = StoredDocument { payload, content_hash: hash, chunks };
    state.append_document(&stored)?;
    let doc_id = stored.payload.doc_id.clone();
    state.documents.write().insert(doc_id.clone(), stored);
    state.swap_index(index);
    info!(%doc_id, chunks, "document indexed");
    Ok((StatusCode::CREATED, Json(UploadResponse { doc_id, status: UploadStatus::Created, chunks })).into_response())
}

async fn list_documents(State(state): State<AppState>) -> Json<Vec<DocumentSummary>> {
    Json(state.documents.read().values().map(DocumentSummary::from).collect())
}

async fn run_query(State(state): State<AppState>, body: axum::body::Bytes) -> ApiResult<Response> {
    let req: QueryRequest = parse_body(&body)?;
    let (query_id, query) = match (req.query_id, req.query.as_deref().map(str::trim)) {
        (Some(id), None) => {
            let q = QueryId::new(id)?;
            (Some(q), q.query().text.to_string())
        }
        (None, Some(text)) if !text.is_empty() => (None, text.to_string()),
        _ => return Err(ApiError::bad_request("give exactly one of query_id or a non-empty query")),
    };
    let k = req.k.unwrap_or(state.config.eval.k);
    if k == 0 {
        return Err(ApiError::bad_request("k must be >= 1"));
    }
    let index = state.index();
    if index.is_empty() {
        return Err(ApiError::not_found("knowledge base is empty"));
    }
    let doc_filter: Option<BTreeSet<String>> = req.doc_ids.map(|d| d.into_iter().collect());
    if let Some(f) = &doc_filter {
        let known = index.doc_ids();
        if let Some(missing) = f.iter().find(|d| !known.contains(d.as_str())) {
            return Err(ApiError::not_found(format!("unknown document {missing}")));
        }
    }
    let strategy = req.prompt_strategy.unwrap_or(state.config.eval.prompt_strategy);
    let run_id = state.next_run_id("q");

    let st = state.clone();
    let run = tokio::task::spawn_blocking(move || -> stancerag_core::Result<QueryRun> {
        let p = &st.providers;
        let hits = index.search(&query, k, doc_filter.as_ref(), p.embedder.as_ref())?;
        let reranked = rerank(&query, &hits, p.reranker.as_deref(), true)?;
        let mut provider_error = None;
        let mut run_hits = Vec::with_capacity(reranked.hits.len());
        for h in reranked.hits {
            let stance = if provider_error.is_some() {
                ItemStance::Skipped
            } else {
                let prompt = build_prompt_text(strategy, &query, &h.chunk.text);
                match generate_stance(&prompt, strategy, p.chat.as_ref(), st.config.eval.retries) {
                    Ok(r) => ItemStance::Ok { score: r.score, reason: r.reason, attempts: r.attempts },
                    Err(e @ Error::ProviderUnavailable(_)) => {
                        warn!(error = %e, "stance provider down, returning retrieval only");
                        provider_error = Some(ProviderFailure { provider: e.provider().expect("chat"), message: e.to_string() });
                        ItemStance::Failed { kind: "provider_unavailable".into(), message: e.to_string() }
                    }
                    Err(e) => ItemStance::Failed { kind: "invalid_answer".into(), message: e.to_string() },
                }
            };
            run_hits.push(RunHit {
                chunk: h.chunk,
                similarity: h.similarity,
                rerank_score: h.rerank_score,
                rank: h.new_rank,
                original_rank: h.original_rank,
                stance,
            });
        }
        let run = QueryRun {
            run_id,
            created_at: Utc::now(),
            query_id,
            query,
            doc_filter,
            k,
            prompt_strategy: strategy,
            embedding_model: p.embedder.model_id().to_string(),
            rerank_model: p.reranker.as_ref().map(|r| r.model_id().to_string()),
            rerank_fell_back: reranked.fell_back,
            chat_model: p.chat.model_id().to_string(),
            hits: run_hits,
            provider_error,
        };
        st.save_query_run(&run)?;
        Ok(run)
    })
    .await??;

    Ok(match run.degraded() {
        Some(d) => (StatusCode::SERVICE_UNAVAILABLE, Json(d)).into_response(),
        None => (StatusCode::OK, Json(run.response())).into_response(),
    })
}

async fn record_feedback(State(state): State<AppState>, body: axum::body::Bytes) -> ApiResult<Response> {
    let req: FeedbackRequest = parse_body(&body)?;
    let analyst_stance = req.analyst_stance.map(Stance::new).transpose()?;
    match (req.verdict, analyst_stance) {
        (Verdict::Correct, None) => return Err(ApiError::bad_request("verdict correct requires analyst_stance")),
        (Verdict::Accept | Verdict::Reject, Some(_)) => {
            return Err(ApiError::bad_request("analyst_stance is only allowed with verdict correct"))
        }
        _ => {}
    }
    let run = state.load_query_run(&req.run_id)?.ok_or_else(|| ApiError::not_found(format!("unknown run {}", req.run_id)))?;
    let hit = run
        .hits
        .iter()
        .find(|h| h.chunk.chunk_id == req.chunk_id)
        .ok_or_else(|| ApiError::not_found(format!("chunk {} is not part of run {}", req.chunk_id, req.run_id)))?;
    let query_id = run
        .query_id
        .ok_or_else(|| ApiError::bad_request("feedback needs a run of one of the canonical queries"))?;
    let shown_stance = match &hit.stance {
        ItemStance::Ok { score, .. } => Some(*score),
        _ => None,
    };
    if req.verdict == Verdict::Accept && shown_stance.is_none() {
        return Err(ApiError::bad_request("verdict accept needs a shown stance; use correct instead"));
    }
    let entry = FeedbackEntry {
        entry_id: String::new(),
        run_id: run.run_id.clone(),
        query_id,
        doc_id: hit.chunk.doc_id.clone(),
        chunk_id: hit.chunk.chunk_id.clone(),
        chunk_text: hit.chunk.text.clone(),
        shown_stance,
        analyst_stance,
        verdict: req.verdict,
        note: req.note,
        timestamp: Utc::now(),
    };
    let entry = state.append_feedback(entry)?;
    Ok((StatusCode::CREATED, Json(entry)).into_response())
}

async fn export_feedback(State(state): State<AppState>) -> Response {
    ([(header::CONTENT_TYPE, "application/x-ndjson")], state.feedback_export()).into_response()
}

async fn start_eval(State(state): State<AppState>, body: axum::body::Bytes) -> ApiResult<Response> {
    let req: EvalRequest = parse_body(&body)?;
    let cfg = req.config.unwrap_or_else(|| state.config.eval.clone());
    cfg.validate()?;
    if req.records.is_empty() {
        return Err(ApiError::bad_request("records must not be empty"));
    }
    if state.eval_busy.swap(true, Ordering::SeqCst) {
        return Err(ApiError::conflict("an evaluation run is already in progress"));
    }
    let run_id = state.next_run_id("e");
    let dir = state.runs_dir().join(&run_id);
    state.eval_runs.lock().insert(run_id.clone(), state::EvalRunState { status: RunStatus::Running, error: None });

    let st = state.clone();
    let id = run_id.clone();
    tokio::task::spawn_blocking(move || {
        let payloads = st.documents.read().values().map(|d| d.payload.clone()).collect();
        let inputs = EvalInputs { records: req.records, payloads };
        let result = (|| -> stancerag_core::Result<()> {
            let art = observe(&inputs, &cfg, &req.stages, &st.providers.as_refs())?;
            art.persist(&dir.join("artifacts"))?;
            std::fs::write(dir.join("config.json"), serde_json::to_vec_pretty(&cfg)?)?;
            std::fs::write(dir.join("report.json"), render_structured(&build_report(&art, &cfg)))?;
            Ok(())
        })();
        let (status, error) = match result {
            Ok(()) => (RunStatus::Complete, None),
            Err(e) => (RunStatus::Failed, Some(e.to_string())),
        };
        if let Some(e) = &error {
            warn!(run_id = %id, error = %e, "evaluation run failed");
        }
        let _ = std::fs::create_dir_all(&dir);
        let _ = state::write_atomic(&dir.join("status.json"), &serde_json::to_vec(&json!({ "status": status, "error": error })).unwrap_or_default());
        st.eval_runs.lock().insert(id, state::EvalRunState { status, error });
        st.eval_busy.store(false, Ordering::SeqCst);
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "run_id": run_id, "status": RunStatus::Running }))).into_response())
}

fn load_eval_bundle(state: &AppState, run_id: &str) -> ApiResult<Option<RunBundle>> {
    let dir = state.runs_dir().join(run_id);
    let in_memory = state.eval_runs.lock().get(run_id).map(|r| (r.status, r.error.clone()));
    let (status, error) = match in_memory {
        Some(s) => s,
        None => {
            let path = dir.join("status.json");
            if !path.is_file() {
                return Ok(None);
            }
            let v: Value = serde_json::from_slice(&std::fs::read(&path).map_err(Error::from)?).map_err(Error::from)?;
            let status: RunStatus = serde_json::from_value(v["status"].clone()).map_err(Error::from)?;
            (status, v["error"].as_str().map(String::from))
        }
    };
    let mut bundle = RunBundle {
        run_id: run_id.to_string(),
        kind: RunKind::Eval,
        status,
        partial: status != RunStatus::Complete,
        error,
        query: None,
        response: None,
        artifacts: None,
        report: None,
    };
    if status == RunStatus::Complete {
        let art = Artifacts::load(&dir.join("artifacts"))?;
        let cfg: EvalConfig =
            serde_json::from_slice(&std::fs::read(dir.join("config.json")).map_err(Error::from)?).map_err(Error::from)?;
        let report = build_report(&art, &cfg);
        bundle.partial = report.partial;
        bundle.artifacts = Some(art);
        bundle.report = Some(report);
    }
    Ok(Some(bundle))
}

async fn get_run(State(state): State<AppState>, Path(run_id): Path<String>) -> ApiResult<Json<RunBundle>> {
    if !state::valid_run_id(&run_id) {
        return Err(ApiError::not_found(format!("unknown run {run_id}")));
    }
    if let Some(run) = state.load_query_run(&run_id)? {
        return Ok(Json(RunBundle {
            run_id: run.run_id.clone(),
            kind: RunKind::Query,
            status: RunStatus::Complete,
            partial: run.provider_error.is_some(),
            error: run.provider_error.as_ref().map(|f| f.message.clone()),
            response: Some(run.response()),
            query: Some(run),
            artifacts: None,
            report: None,
        }));
    }
    let st = state.clone();
    let id = run_id.clone();
    match tokio::task::spawn_blocking(move || load_eval_bundle(&st, &id)).await?? {
        Some(b) => Ok(Json(b)),
        None => Err(ApiError::not_found(format!("unknown run {run_id}"))),
    }
}
