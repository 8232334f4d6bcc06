//! Shared state and on-disk persistence.
//!
//! Layout under the data directory:
//! `documents.jsonl` (one stored document per line), `index.jsonl`,
//! `feedback.jsonl`, `runs/<id>.json` for query runs and `runs/<id>/` for
//! evaluation runs.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use sha2::{Digest, Sha256};
use stancerag_core::config::AppConfig;
use stancerag_core::corpus::UploadPayload;
use stancerag_core::harness::Providers;
use stancerag_core::index::VectorIndex;
use stancerag_core::providers::{AlignmentProvider, ChatProvider, EmbeddingProvider, RerankProvider};
use stancerag_core::{Error, Result};

use crate::model::{FeedbackEntry, QueryRun, RunStatus, StoredDocument};

#[derive(Clone)]
pub struct ServiceProviders {
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub reranker: Option<Arc<dyn RerankProvider>>,
    pub chat: Arc<dyn ChatProvider>,
    pub aligner: Option<Arc<dyn AlignmentProvider>>,
}

impl ServiceProviders {
    pub fn as_refs(&self) -> Providers<'_> {
        Providers {
            embedder: self.embedder.as_ref(),
            reranker: self.reranker.as_deref(),
            chat: self.chat.as_ref(),
            aligner: self.aligner.as_deref(),
        }
    }
}

pub(crate) struct FeedbackLog {
    pub entries: Vec<FeedbackEntry>,
    pub last: Option<DateTime<Utc>>,
}

pub(crate) struct EvalRunState {
    pub status: RunStatus,
    pub error: Option<String>,
}

pub struct Inner {
    pub config: AppConfig,
    pub providers: ServiceProviders,
    pub data_dir: PathBuf,
    pub(crate) index: RwLock<Arc<VectorIndex>>,
    pub(crate) documents: RwLock<BTreeMap<String, StoredDocument>>,
    pub(crate) upload_lock: tokio::sync::Mutex<()>,
    pub(crate) feedback: Mutex<FeedbackLog>,
    pub(crate) eval_runs: Mutex<BTreeMap<String, EvalRunState>>,
    pub(crate) eval_busy: AtomicBool,
    run_seq: AtomicU64,
}

#[derive(Clone)]
pub struct AppState(pub Arc<Inner>);

impl std::ops::Deref for AppState {
    type Target = Inner;
    fn deref(&self) -> &Inner {
        &self.0
    }
}

pub fn content_hash(payload: &UploadPayload) -> String {
    let bytes = serde_json::to_vec(payload).expect("payload serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    stancerag_core::harness::read_jsonl(path)
}

fn append_line<T: serde::Serialize>(path: &Path, item: &T) -> Result<()> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_vec(item)?;
    line.push(b'\n');
    f.write_all(&line)?;
    f.sync_data()?;
    Ok(())
}

/// Writes via a temporary file and rename so readers never see a torn file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

impl AppState {
    /// Opens (or creates) the data directory and restores documents, index,
    /// feedback and run bookkeeping from it.
    pub fn open(config: AppConfig, providers: ServiceProviders) -> Result<Self> {
        let data_dir = config.service.data_dir.clone();
        std::fs::create_dir_all(data_dir.join("runs"))?;
        let documents: BTreeMap<String, StoredDocument> = read_lines::<StoredDocument>(&data_dir.join("documents.jsonl"))?
            .into_iter()
            .map(|d| (d.payload.doc_id.clone(), d))
            .collect();
        let index_path = data_dir.join("index.jsonl");
        let index = if index_path.exists() { VectorIndex::load(&index_path)? } else { VectorIndex::new() };
        if let Some(m) = index.model_id() {
            if m != providers.embedder.model_id() {
                return Err(Error::ModelMismatch { expected: m.to_string(), got: providers.embedder.model_id().to_string() });
            }
        }
        let indexed: BTreeSet<&str> = index.doc_ids();
        if let Some(missing) = documents.keys().find(|d| !indexed.contains(d.as_str())) {
            return Err(Error::InvalidInput(format!("document {missing} is stored but not indexed")));
        }
        let entries: Vec<FeedbackEntry> = read_lines(&data_dir.join("feedback.jsonl"))?;
        let last = entries.last().map(|e| e.timestamp);
        let seq = std::fs::read_dir(data_dir.join("runs"))?.count() as u64;
        Ok(AppState(Arc::new(Inner {
            config,
            providers,
            data_dir,
            index: RwLock::new(Arc::new(index)),
            documents: RwLock::new(documents),
            upload_lock: tokio::sync::Mutex::new(()),
            feedback: Mutex::new(FeedbackLog { entries, last }),
            eval_runs: Mutex::new(BTreeMap::new()),
            eval_busy: AtomicBool::new(false),
            run_seq: AtomicU64::new(seq),
        })))
    }

    pub fn index(&self) -> Arc<VectorIndex> {
        self.index.read().clone()
    }

    pub(crate) fn swap_index(&self, index: VectorIndex) {
        *self.index.write() = Arc::new(index);
    }

    pub(crate) fn next_run_id(&self, prefix: &str) -> String {
        let n = self.run_seq.fetch_add(1, Ordering::SeqCst) + 1;
        format!("{prefix}-{n:06}")
    }

    pub(crate) fn runs_dir(&self) -> PathBuf {
        self.data_dir.join("runs")
    }

    pub(crate) fn persist_index(&self, index: &VectorIndex) -> Result<()> {
        let tmp = self.data_dir.join("index.jsonl.tmp");
        index.persist(&tmp)?;
        std::fs::rename(&tmp, self.data_dir.join("index.jsonl"))?;
        Ok(())
    }

    pub(crate) fn append_document(&self, doc: &StoredDocument) -> Result<()> {
        append_line(&self.data_dir.join("documents.jsonl"), doc)
    }

    pub(crate) fn save_query_run(&self, run: &QueryRun) -> Result<()> {
        write_atomic(&self.runs_dir().join(format!("{}.json", run.run_id)), &serde_json::to_vec_pretty(run)?)
    }

    pub(crate) fn load_query_run(&self, run_id: &str) -> Result<Option<QueryRun>> {
        if !valid_run_id(run_id) {
            return Ok(None);
        }
        let path = self.runs_dir().join(format!("{run_id}.json"));
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_slice(&std::fs::read(&path)?)?))
    }

    /// Appends under the log lock; timestamps are forced strictly increasing.
    pub(crate) fn append_feedback(&self, mut entry: FeedbackEntry) -> Result<FeedbackEntry> {
        let mut log = self.feedback.lock();
        let now = Utc::now();
        entry.timestamp = match log.last {
            Some(last) if now <= last => last + chrono::Duration::microseconds(1),
            _ => now,
        };
        entry.entry_id = format!("fb-{:06}", log.entries.len() + 1);
        append_line(&self.data_dir.join("feedback.jsonl"), &entry)?;
        log.last = Some(entry.timestamp);
        log.entries.push(entry.clone());
        Ok(entry)
    }

    pub fn feedback_entries(&self) -> Vec<FeedbackEntry> {
        self.feedback.lock().entries.clone()
    }

    /// The feedback log as dataset lines, one per entry.
    pub fn feedback_export(&self) -> String {
        let docs = self.documents.read();
        self.feedback
            .lock()
            .entries
            .iter()
            .filter_map(|e| docs.get(&e.doc_id).map(|d| e.to_record(d.payload.metadata.clone()).to_dataset_line() + "\n"))
            .collect()
    }
}

/// Run ids are generated as `<prefix>-<digits>`; anything else never names a run.
pub(crate) fn valid_run_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')
}
