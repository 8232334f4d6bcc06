use std::sync::Arc;

use stancerag_core::config::AppConfig;
use stancerag_core::harness::Providers;
use stancerag_core::providers::http::{HttpAligner, HttpChat, HttpEmbedder, HttpReranker};
use stancerag_core::providers::stub::{HashingEmbedder, KeywordStanceChat, OverlapReranker};
use stancerag_core::providers::{AlignmentProvider, ChatProvider, EmbeddingProvider, RerankProvider};
use stancerag_service::ServiceProviders;

use crate::args::ProviderMode;
use crate::CliError;

pub struct ProviderSet {
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub reranker: Option<Arc<dyn RerankProvider>>,
    pub chat: Arc<dyn ChatProvider>,
    pub aligner: Option<Arc<dyn AlignmentProvider>>,
}

impl ProviderSet {
    pub fn build(mode: ProviderMode, cfg: &AppConfig, stub_reranker: bool) -> Result<Self, CliError> {
        match mode {
            ProviderMode::Stub => Ok(Self {
                embedder: Arc::new(HashingEmbedder::default()),
                reranker: stub_reranker.then(|| Arc::new(OverlapReranker) as Arc<dyn RerankProvider>),
                chat: Arc::new(KeywordStanceChat),
                aligner: None,
            }),
            ProviderMode::Http => {
                let p = &cfg.providers;
                let need = |name: &str| CliError::Usage(format!("--provider http needs providers.{name} in the config"));
                let embedding = p.embedding.clone().ok_or_else(|| need("embedding"))?;
                let chat = p.chat.clone().ok_or_else(|| need("chat"))?;
                Ok(Self {
                    embedder: Arc::new(HttpEmbedder::new(embedding)?),
                    reranker: p.rerank.clone().map(HttpReranker::new).transpose()?.map(|r| Arc::new(r) as Arc<dyn RerankProvider>),
                    chat: Arc::new(HttpChat::new(chat)?),
                    aligner: p.alignment.clone().map(HttpAligner::new).transpose()?.map(|a| Arc::new(a) as Arc<dyn AlignmentProvider>),
                })
            }
        }
    }

    pub fn as_refs(&self) -> Providers<'_> {
        Providers {
            embedder: self.embedder.as_ref(),
            reranker: self.reranker.as_deref(),
            chat: self.chat.as_ref(),
            aligner: self.aligner.as_deref(),
        }
    }

    pub fn into_service(self) -> ServiceProviders {
        ServiceProviders { embedder: self.embedder, reranker: self.reranker, chat: self.chat, aligner: self.aligner }
    }
}
