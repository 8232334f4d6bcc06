//! Optional second-stage reordering of retrieval hits.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::chunker::Chunk;
use crate::error::{Error, Result};
use crate::index::RetrievalHit;
use crate::providers::RerankProvider;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankedHit {
    pub chunk: Chunk,
    pub similarity: f64,
    pub rerank_score: f64,
    pub new_rank: usize,
    pub original_rank: usize,
}

/// Result of a rerank call; `fell_back` marks a no-op ordering caused by an
/// unavailable provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reranked {
    pub hits: Vec<RerankedHit>,
    pub fell_back: bool,
}

/// Original order, scored by retrieval similarity.
pub fn no_rerank(hits: &[RetrievalHit]) -> Vec<RerankedHit> {
    hits.iter()
        .map(|h| RerankedHit {
            chunk: h.chunk.clone(),
            similarity: h.similarity,
            rerank_score: h.similarity,
            new_rank: h.rank,
            original_rank: h.rank,
        })
        .collect()
}

/// Sorts hits by provider score, descending, ties by original rank. With no
/// provider the hits keep their order. When the provider is unavailable and
/// `fallback` is set, the no-op order is returned and flagged.
pub fn rerank(
    query: &str,
    hits: &[RetrievalHit],
    provider: Option<&dyn RerankProvider>,
    fallback: bool,
) -> Result<Reranked> {
    let Some(provider) = provider else {
        return Ok(Reranked { hits: no_rerank(hits), fell_back: false });
    };
    if hits.is_empty() {
        return Ok(Reranked { hits: Vec::new(), fell_back: false });
    }
    let docs: Vec<String> = hits.iter().map(|h| h.chunk.text.clone()).collect();
    let scores = match provider.score(query, &docs) {
        Ok(s) if s.len() == hits.len() => s,
        Ok(s) => {
            return Err(Error::RerankUnavailable(format!("expected {} scores, got {}", hits.len(), s.len())));
        }
        Err(Error::RerankUnavailable(m)) if fallback => {
            warn!(error = %m, "reranker unavailable, keeping retrieval order");
            return Ok(Reranked { hits: no_rerank(hits), fell_back: true });
        }
        Err(e) => return Err(e),
    };
    let mut scored: Vec<(f64, &RetrievalHit)> = scores.into_iter().zip(hits).collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.rank.cmp(&b.1.rank)));
    Ok(Reranked {
        hits: scored
            .into_iter()
            .enumerate()
            .map(|(i, (score, h))| RerankedHit {
                chunk: h.chunk.clone(),
                similarity: h.similarity,
                rerank_score: score,
                new_rank: i + 1,
                original_rank: h.rank,
            })
            .collect(),
        fell_back: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunker::ChunkMethod;
    use crate::providers::stub::{FnReranker, Unavailable};
    use proptest::prelude::*;

    fn hits(n: usize) -> Vec<RetrievalHit> {
        (0..n)
            .map(|i| RetrievalHit {
                chunk: Chunk {
                    chunk_id: format!("d#layout-{i}"),
                    doc_id: "d".into(),
                    method: ChunkMethod::Layout,
                    index: i,
                    block_span: [i, i],
                    text: format!("t{i}"),
                },
                similarity: 1.0 - i as f64 * 0.1,
                rank: i + 1,
            })
            .collect()
    }

    fn order(r: &Reranked) -> Vec<usize> {
        r.hits.iter().map(|h| h.original_rank).collect()
    }

    #[test]
    fn no_provider_keeps_order() {
        let r = rerank("q", &hits(3), None, false).unwrap();
        assert_eq!(order(&r), vec![1, 2, 3]);
        assert!(r.hits.iter().all(|h| h.new_rank == h.original_rank && h.rerank_score == h.similarity));
    }

    #[test]
    fn reverse_scores_reverse_order() {
        let p = FnReranker::new(|_: &str, d: &str| d[1..].parse::<f64>().unwrap());
        let r = rerank("q", &hits(3), Some(&p), false).unwrap();
        assert_eq!(order(&r), vec![3, 2, 1]);
        assert_eq!(r.hits.iter().map(|h| h.new_rank).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn equal_scores_keep_original_rank() {
        let p = FnReranker::new(|_: &str, _: &str| 0.5);
        assert_eq!(order(&rerank("q", &hits(4), Some(&p), false).unwrap()), vec![1, 2, 3, 4]);
    }

    #[test]
    fn unavailable_provider_falls_back_when_allowed() {
        let r = rerank("q", &hits(2), Some(&Unavailable), true).unwrap();
        assert!(r.fell_back);
        assert_eq!(order(&r), vec![1, 2]);
        assert!(matches!(rerank("q", &hits(2), Some(&Unavailable), false), Err(Error::RerankUnavailable(_))));
    }

    proptest! {
        #[test]
        fn rerank_is_a_permutation(scores in proptest::collection::vec(-5i32..5, 1..10)) {
            let n = scores.len();
            let s = scores.clone();
            let p = FnReranker::new(move |_: &str, d: &str| s[d[1..].parse::<usize>().unwrap()] as f64);
            let r = rerank("q", &hits(n), Some(&p), false).unwrap();
            let mut o = order(&r);
            o.sort();
            prop_assert_eq!(o, (1..=n).collect::<Vec<_>>());
            for w in r.hits.windows(2) {
                prop_assert!(w[0].rerank_score >= w[1].rerank_score);
            }
        }
    }
}
