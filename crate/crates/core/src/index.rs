//! Exact cosine nearest-neighbour index over chunk embeddings.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chunker::Chunk;
use crate::error::{Error, Result};
use crate::providers::{dot, l2_normalize, EmbeddingProvider};

pub const INDEX_FORMAT: &str = "stancerag-index/1";
pub const DEFAULT_K: usize = 5;

/// Embeds `texts` in provider batches, normalizing each vector on receipt and
/// checking that every vector shares one dimension.
pub fn embed_batch(texts: &[String], provider: &dyn EmbeddingProvider, batch_size: usize) -> Result<Vec<Vec<f32>>> {
    let mut out: Vec<Vec<f32>> = Vec::with_capacity(texts.len());
    for batch in texts.chunks(batch_size.max(1)) {
        let got = provider.embed(batch)?;
        if got.len() != batch.len() {
            return Err(Error::EmbeddingUnavailable(format!("expected {} vectors, got {}", batch.len(), got.len())));
        }
        for v in got {
            if let Some(first) = out.first() {
                if v.len() != first.len() {
                    return Err(Error::DimensionMismatch { expected: first.len(), got: v.len() });
                }
            }
            out.push(l2_normalize(v));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub chunk: Chunk,
    pub similarity: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    chunk: Chunk,
    vector: Vec<f32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format: String,
    dimension: usize,
    model_id: String,
    count: usize,
}

/// Brute-force vector store keyed by chunk id. Stored vectors are unit length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VectorIndex {
    model_id: Option<String>,
    dimension: Option<usize>,
    entries: BTreeMap<String, Entry>,
}

impl VectorIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn model_id(&self) -> Option<&str> {
        self.model_id.as_deref()
    }

    pub fn dimension(&self) -> Option<usize> {
        self.dimension
    }

    pub fn chunks(&self) -> impl Iterator<Item = &Chunk> {
        self.entries.values().map(|e| &e.chunk)
    }

    pub fn doc_ids(&self) -> BTreeSet<&str> {
        self.entries.values().map(|e| e.chunk.doc_id.as_str()).collect()
    }

    fn check_model(&self, provider: &dyn EmbeddingProvider) -> Result<()> {
        match &self.model_id {
            Some(m) if m != provider.model_id() => {
                Err(Error::ModelMismatch { expected: m.clone(), got: provider.model_id().to_string() })
            }
            _ => Ok(()),
        }
    }

    /// Inserts already-normalized vectors. Re-inserting a chunk id replaces it.
    pub fn insert_embedded(&mut self, model_id: &str, items: Vec<(Chunk, Vec<f32>)>) -> Result<()> {
        if let Some(m) = &self.model_id {
            if m != model_id {
                return Err(Error::ModelMismatch { expected: m.clone(), got: model_id.to_string() });
            }
        }
        for (chunk, vector) in items {
            match self.dimension {
                Some(d) if d != vector.len() => return Err(Error::DimensionMismatch { expected: d, got: vector.len() }),
                None => self.dimension = Some(vector.len()),
                _ => {}
            }
            self.model_id.get_or_insert_with(|| model_id.to_string());
            self.entries.insert(chunk.chunk_id.clone(), Entry { chunk, vector });
        }
        Ok(())
    }

    /// Embeds and upserts chunks.
    pub fn index_chunks(&mut self, chunks: &[Chunk], provider: &dyn EmbeddingProvider, batch_size: usize) -> Result<()> {
        if chunks.is_empty() {
            return Ok(());
        }
        self.check_model(provider)?;
        let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
        let vectors = embed_batch(&texts, provider, batch_size)?;
        self.insert_embedded(provider.model_id(), chunks.iter().cloned().zip(vectors).collect())
    }

    pub fn remove_doc(&mut self, doc_id: &str) {
        self.entries.retain(|_, e| e.chunk.doc_id != doc_id);
    }

    /// Top-k by cosine similarity against a normalized query vector. Ties go
    /// to the lower `(doc_id, index)`.
    pub fn search_vector(&self, query: &[f32], k: usize, filter: Option<&BTreeSet<String>>) -> Result<Vec<RetrievalHit>> {
        if let Some(d) = self.dimension {
            if d != query.len() {
                return Err(Error::DimensionMismatch { expected: d, got: query.len() });
            }
        }
        let mut scored: Vec<(f64, &Chunk)> = self
            .entries
            .values()
            .filter(|e| filter.is_none_or(|f| f.contains(&e.chunk.doc_id)))
            .map(|e| (dot(query, &e.vector).clamp(-1.0, 1.0), &e.chunk))
            .collect();
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.1.doc_id.cmp(&b.1.doc_id))
                .then_with(|| a.1.index.cmp(&b.1.index))
        });
        Ok(scored
            .into_iter()
            .take(k)
            .enumerate()
            .map(|(i, (similarity, chunk))| RetrievalHit { chunk: chunk.clone(), similarity, rank: i + 1 })
            .collect())
    }

    pub fn search(
        &self,
        query: &str,
        k: usize,
        filter: Option<&BTreeSet<String>>,
        provider: &dyn EmbeddingProvider,
    ) -> Result<Vec<RetrievalHit>> {
        if k == 0 {
            return Err(Error::InvalidInput("k must be >= 1".into()));
        }
        if self.is_empty() {
            return Ok(Vec::new());
        }
        self.check_model(provider)?;
        let q = embed_batch(&[query.to_string()], provider, 1)?.pop().expect("one vector");
        self.search_vector(&q, k, filter)
    }

    /// Writes a header line followed by one `{chunk, vector}` line per entry,
    /// in chunk id order.
    pub fn persist(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        let header = Header {
            format: INDEX_FORMAT.into(),
            dimension: self.dimension.unwrap_or(0),
            model_id: self.model_id.clone().unwrap_or_default(),
            count: self.entries.len(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for e in self.entries.values() {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let where_ = path.display().to_string();
        let mut lines = BufReader::new(std::fs::File::open(path)?).lines();
        let first = lines.next().ok_or_else(|| Error::format(&where_, "missing header"))??;
        let header: Header = serde_json::from_str(&first).map_err(|e| Error::format(&where_, e))?;
        if header.format != INDEX_FORMAT {
            return Err(Error::format(&where_, format!("unsupported format tag {:?}", header.format)));
        }
        let mut idx = VectorIndex::new();
        if header.count > 0 {
            idx.model_id = Some(header.model_id.clone());
            idx.dimension = Some(header.dimension);
        }
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: Entry = serde_json::from_str(&line).map_err(|e| Error::format(format!("{where_}:{}", n + 2), e))?;
            if e.vector.len() != header.dimension {
                return Err(Error::format(&where_, format!("vector of dimension {} in a {}-d index", e.vector.len(), header.dimension)));
            }
            idx.entries.insert(e.chunk.chunk_id.clone(), e);
        }
        if idx.entries.len() != header.count {
            return Err(Error::format(&where_, format!("header count {} but {} records", header.count, idx.entries.len())));
        }
        Ok(idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunker::ChunkMethod;
    use crate::providers::stub::{FnEmbedder, HashingEmbedder};
    use proptest::prelude::*;

    fn chunk(doc: &str, index: usize, text: &str) -> Chunk {
        Chunk {
            chunk_id: Chunk::make_id(doc, ChunkMethod::Layout, index),
            doc_id: doc.into(),
            method: ChunkMethod::Layout,
            index,
            block_span: [index, index],
            text: text.into(),
        }
    }

    #[test]
    fn embed_batch_normalizes() {
        let e = FnEmbedder::new("c", |_: &str| vec![3.0, 4.0]);
        assert_eq!(embed_batch(&["x".into()], &e, 8).unwrap(), vec![vec![0.6f32, 0.8]]);
        assert!(embed_batch(&[], &e, 8).unwrap().is_empty());
    }

    #[test]
    fn embed_batch_detects_dimension_change() {
        let e = FnEmbedder::new("v", |t: &str| vec![1.0; t.len()]);
        let r = embed_batch(&["a".into(), "bb".into()], &e, 8);
        assert!(matches!(r, Err(Error::DimensionMismatch { expected: 1, got: 2 })));
    }

    #[test]
    fn upsert_is_idempotent() {
        let e = HashingEmbedder::default();
        let cs = vec![chunk("d", 0, "carbon tax"), chunk("d", 1, "solar subsidy"), chunk("d", 2, "coal phase out")];
        let mut idx = VectorIndex::new();
        idx.index_chunks(&cs, &e, 2).unwrap();
        assert_eq!(idx.len(), 3);
        let before = idx.search("carbon", 3, None, &e).unwrap();
        idx.index_chunks(&cs, &e, 2).unwrap();
        assert_eq!(idx.len(), 3);
        assert_eq!(idx.search("carbon", 3, None, &e).unwrap(), before);
    }

    #[test]
    fn empty_index_returns_nothing() {
        let e = HashingEmbedder::default();
        let mut idx = VectorIndex::new();
        idx.index_chunks(&[], &e, 2).unwrap();
        assert!(idx.search("x", 5, None, &e).unwrap().is_empty());
    }

    #[test]
    fn self_similarity_and_k_overflow() {
        let e = HashingEmbedder::default();
        let cs = vec![chunk("d", 0, "carbon tax support"), chunk("d", 1, "unrelated words here")];
        let mut idx = VectorIndex::new();
        idx.index_chunks(&cs, &e, 8).unwrap();
        let hits = idx.search("carbon tax support", 10, None, &e).unwrap();
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].chunk.index, 0);
        assert!((hits[0].similarity - 1.0).abs() < 1e-6);
        assert_eq!(hits.iter().map(|h| h.rank).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn ties_break_by_provenance() {
        let e = FnEmbedder::new("flat", |_: &str| vec![1.0, 0.0]);
        let mut idx = VectorIndex::new();
        idx.index_chunks(&[chunk("b", 0, "x"), chunk("a", 1, "y"), chunk("a", 0, "z")], &e, 8).unwrap();
        let order: Vec<(String, usize)> =
            idx.search("q", 3, None, &e).unwrap().into_iter().map(|h| (h.chunk.doc_id, h.chunk.index)).collect();
        assert_eq!(order, vec![("a".into(), 0), ("a".into(), 1), ("b".into(), 0)]);
    }

    #[test]
    fn filter_restricts_documents() {
        let e = HashingEmbedder::default();
        let mut idx = VectorIndex::new();
        idx.index_chunks(&[chunk("a", 0, "carbon tax"), chunk("b", 0, "carbon tax")], &e, 8).unwrap();
        let f: BTreeSet<String> = ["b".to_string()].into();
        let hits = idx.search("carbon tax", 5, Some(&f), &e).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].chunk.doc_id, "b");
    }

    #[test]
    fn model_mismatch_is_rejected() {
        let mut idx = VectorIndex::new();
        idx.index_chunks(&[chunk("a", 0, "x")], &HashingEmbedder::new(16), 8).unwrap();
        assert!(matches!(idx.search("x", 1, None, &HashingEmbedder::new(32)), Err(Error::ModelMismatch { .. })));
    }

    #[test]
    fn persist_round_trip() {
        let e = HashingEmbedder::default();
        let mut idx = VectorIndex::new();
        let cs: Vec<Chunk> = (0..6).map(|i| chunk("d", i, &format!("policy item {i} emissions {}", i * 7))).collect();
        idx.index_chunks(&cs, &e, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.jsonl");
        idx.persist(&p).unwrap();
        let loaded = VectorIndex::load(&p).unwrap();
        assert_eq!(loaded, idx);
        for q in ["policy", "emissions 14", "item 3"] {
            assert_eq!(loaded.search(q, 5, None, &e).unwrap(), idx.search(q, 5, None, &e).unwrap());
        }
    }

    #[test]
    fn load_rejects_bad_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.jsonl");
        std::fs::write(&p, "{\"format\":\"other\",\"dimension\":1,\"model_id\":\"m\",\"count\":0}\n").unwrap();
        assert!(matches!(VectorIndex::load(&p), Err(Error::Format { .. })));
    }

    proptest! {
        #[test]
        fn ranks_and_similarities_are_ordered(texts in proptest::collection::vec("[a-e]( [a-e]){0,5}", 1..20), q in "[a-e]( [a-e]){0,3}", k in 1usize..25) {
            let e = HashingEmbedder::new(32);
            let cs: Vec<Chunk> = texts.iter().enumerate().map(|(i, t)| chunk("d", i, t)).collect();
            let mut idx = VectorIndex::new();
            idx.index_chunks(&cs, &e, 7).unwrap();
            let hits = idx.search(&q, k, None, &e).unwrap();
            prop_assert_eq!(hits.len(), k.min(cs.len()));
            for (i, w) in hits.windows(2).enumerate() {
                prop_assert_eq!(w[0].rank, i + 1);
                prop_assert!(w[0].similarity >= w[1].similarity);
            }
        }
    }
}
