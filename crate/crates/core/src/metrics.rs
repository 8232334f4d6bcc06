//! Evaluation measures: LCS-based overlap, ranking metrics, stance accuracy
//! and the oracle diagnostics (faithfulness, helpfulness, conciseness).
//!
//! Text overlap is measured on normalized word tokens. Two nLCS variants
//! exist: [`nlcs_parse`] divides by the gold length and so tolerates extra
//! surrounding text, while [`nlcs_chunk`] divides by the longer operand and
//! so also penalizes excess context.

use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_text, Stance};
use crate::error::{Error, Result};
use crate::providers::{cosine, AlignmentProvider, EmbeddingProvider};

/// Normalized whitespace tokens of a text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn from_text(text: &str) -> Self {
        TokenSequence(normalize_text(text).split(' ').filter(|t| !t.is_empty()).map(str::to_string).collect())
    }

    pub fn from_tokens<I: IntoIterator<Item = S>, S: Into<String>>(tokens: I) -> Self {
        TokenSequence(tokens.into_iter().map(Into::into).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }
}

/// Longest common subsequence length; O(|x|·|y|) time, O(min(|x|,|y|)) space.
pub fn lcs_len<T: PartialEq>(x: &[T], y: &[T]) -> usize {
    let (long, short) = if x.len() >= y.len() { (x, y) } else { (y, x) };
    if short.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; short.len() + 1];
    let mut cur = vec![0usize; short.len() + 1];
    for a in long {
        for (j, b) in short.iter().enumerate() {
            cur[j + 1] = if a == b { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

/// Parsing fidelity: LCS normalized by the gold length.
pub fn nlcs_parse(parsed: &TokenSequence, gold: &TokenSequence) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::EmptyGold);
    }
    Ok(lcs_len(parsed.tokens(), gold.tokens()) as f64 / gold.len() as f64)
}

/// Chunk compactness: LCS normalized by the longer of the two sequences.
pub fn nlcs_chunk(chunk: &TokenSequence, gold: &TokenSequence) -> Result<f64> {
    if chunk.is_empty() || gold.is_empty() {
        return Err(Error::EmptyOperand);
    }
    Ok(lcs_len(chunk.tokens(), gold.tokens()) as f64 / chunk.len().max(gold.len()) as f64)
}

/// A hit is relevant when its gold-normalized nLCS strictly exceeds `threshold`.
pub fn is_relevant(hit: &TokenSequence, gold: &TokenSequence, threshold: f64) -> Result<bool> {
    Ok(nlcs_parse(hit, gold)? > threshold)
}

/// Whether any of the ranked hits is relevant.
pub fn recall_at_k(hits: &[TokenSequence], gold: &TokenSequence, threshold: f64) -> Result<bool> {
    Ok(first_relevant_rank(hits, gold, threshold)?.is_some())
}

/// Reciprocal rank of the first relevant hit, 0 when none is relevant.
pub fn mrr(hits: &[TokenSequence], gold: &TokenSequence, threshold: f64) -> Result<f64> {
    Ok(first_relevant_rank(hits, gold, threshold)?.map_or(0.0, |r| 1.0 / r as f64))
}

/// 1-based rank of the first relevant hit.
pub fn first_relevant_rank(hits: &[TokenSequence], gold: &TokenSequence, threshold: f64) -> Result<Option<usize>> {
    if gold.is_empty() {
        return Err(Error::EmptyGold);
    }
    for (i, h) in hits.iter().enumerate() {
        if is_relevant(h, gold, threshold)? {
            return Ok(Some(i + 1));
        }
    }
    Ok(None)
}

pub fn exact_match(gold: Stance, predicted: Stance) -> bool {
    gold == predicted
}

/// Hit with tolerance: within `tolerance` and same polarity (0 only matches 0).
pub fn hit_rate_tolerance(gold: Stance, predicted: Stance, tolerance: u8) -> bool {
    if gold.value() == 0 && predicted.value() == 0 {
        return true;
    }
    (gold.value() - predicted.value()).unsigned_abs() <= tolerance && gold.sign() == predicted.sign()
}

fn check_probability(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::NonPositiveProbability(p))
    }
}

/// Sigmoid of the log ratio between the stance probability given gold
/// evidence and given retrieved evidence. Equal to `p_gold / (p_gold + p_retrieved)`.
pub fn helpfulness(p_gold: f64, p_retrieved: f64) -> Result<f64> {
    check_probability(p_gold)?;
    check_probability(p_retrieved)?;
    Ok(p_gold / (p_gold + p_retrieved))
}

/// Embedding similarity of retrieved and gold evidence mapped to [0, 1] as (1 + cos) / 2.
pub fn conciseness(retrieved: &str, gold: &str, embedder: &dyn EmbeddingProvider) -> Result<f64> {
    let v = embedder.embed(&[retrieved.to_string(), gold.to_string()])?;
    if v.len() != 2 {
        return Err(Error::EmbeddingUnavailable(format!("expected 2 vectors, got {}", v.len())));
    }
    if v[0].len() != v[1].len() {
        return Err(Error::DimensionMismatch { expected: v[0].len(), got: v[1].len() });
    }
    Ok(((1.0 + cosine(&v[0], &v[1])) / 2.0).clamp(0.0, 1.0))
}

/// Faithfulness score together with where it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Faithfulness {
    pub score: f64,
    /// True when the lexical nLCS fallback produced the score.
    pub lexical_fallback: bool,
}

/// Alignment of retrieved evidence (claim) against gold (context). Falls back to
/// [`nlcs_chunk`] when the scorer is missing or down and `fallback` is set;
/// otherwise an unavailable scorer yields `None`.
pub fn faithfulness(
    retrieved: &str,
    gold: &str,
    scorer: Option<&dyn AlignmentProvider>,
    fallback: bool,
) -> Result<Option<Faithfulness>> {
    if let Some(s) = scorer {
        match s.align(retrieved, gold) {
            Ok(score) => return Ok(Some(Faithfulness { score, lexical_fallback: false })),
            Err(Error::ScorerUnavailable(_)) if fallback => {}
            Err(Error::ScorerUnavailable(_)) => return Ok(None),
            Err(e) => return Err(e),
        }
    }
    if !fallback {
        return Ok(None);
    }
    let r = TokenSequence::from_text(retrieved);
    let g = TokenSequence::from_text(gold);
    if r.is_empty() || g.is_empty() {
        return Ok(Some(Faithfulness { score: 0.0, lexical_fallback: true }));
    }
    Ok(Some(Faithfulness { score: nlcs_chunk(&r, &g)?, lexical_fallback: true }))
}

/// Oracle diagnostics for one piece of selected evidence. Absent scores mean
/// the backing provider was unavailable, never zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleScores {
    pub faithfulness: Option<f64>,
    pub helpfulness: Option<f64>,
    pub conciseness: Option<f64>,
}
