//! Layout-heuristic and embedding-similarity chunking.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{BlockKind, ParsedDocument};
use crate::error::{Error, Result};
use crate::providers::{cosine, dot, l2_normalize, EmbeddingProvider};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkMethod {
    Layout,
    Semantic,
}

impl ChunkMethod {
    pub const ALL: [ChunkMethod; 2] = [ChunkMethod::Layout, ChunkMethod::Semantic];
}

impl fmt::Display for ChunkMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChunkMethod::Layout => "layout",
            ChunkMethod::Semantic => "semantic",
        })
    }
}

impl std::str::FromStr for ChunkMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layout" => Ok(ChunkMethod::Layout),
            "semantic" => Ok(ChunkMethod::Semantic),
            _ => Err(Error::InvalidInput(format!("unknown chunk method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub method: ChunkMethod,
    pub index: usize,
    /// First and last block ordinal covered, inclusive.
    pub block_span: [usize; 2],
    pub text: String,
}

impl Chunk {
    pub fn make_id(doc_id: &str, method: ChunkMethod, index: usize) -> String {
        format!("{doc_id}#{method}-{index}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkerConfig {
    pub min_chunk_words: usize,
    pub semantic_similarity_threshold: f64,
    pub semantic_double_pass: bool,
    pub max_chunk_tokens: usize,
    pub embed_batch_size: usize,
}

impl Default for ChunkerConfig {
    fn default() -> Self {
        Self {
            min_chunk_words: 30,
            semantic_similarity_threshold: 0.75,
            semantic_double_pass: true,
            max_chunk_tokens: 1536,
            embed_batch_size: 64,
        }
    }
}

impl ChunkerConfig {
    pub fn validate(&self) -> Result<()> {
        let t = self.semantic_similarity_threshold;
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::InvalidConfig(format!("semantic_similarity_threshold must be in (0, 1), got {t}")));
        }
        if self.min_chunk_words < 1 {
            return Err(Error::InvalidConfig("min_chunk_words must be >= 1".into()));
        }
        if self.max_chunk_tokens < self.min_chunk_words {
            return Err(Error::InvalidConfig("max_chunk_tokens must be >= min_chunk_words".into()));
        }
        if self.embed_batch_size < 1 {
            return Err(Error::InvalidConfig("embed_batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Whitespace word count, the token proxy for every token budget.
pub fn count_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug)]
struct Unit {
    first: usize,
    last: usize,
    text: String,
    table: bool,
    starts_with_header: bool,
}

impl Unit {
    fn words(&self) -> usize {
        count_tokens(&self.text)
    }

    fn absorb(&mut self, other: Unit) {
        self.last = other.last;
        self.text.push(' ');
        self.text.push_str(&other.text);
    }
}

/// Layout heuristics, applied in order: consecutive headers are concatenated;
/// a header run joins the following text block; tables stay atomic; text
/// shorter than `min_chunk_words` joins the previous chunk; text ending in a
/// colon joins the previous chunk unless that chunk begins with a header.
///
/// A chunk that is still short (no text chunk before it) absorbs what follows
/// until it reaches the minimum or meets a table.
pub fn layout_chunk(doc: &ParsedDocument, cfg: &ChunkerConfig) -> Vec<Chunk> {
    let blocks = &doc.blocks;
    let mut units: Vec<Unit> = Vec::new();
    let mut i = 0;
    while i < blocks.len() {
        let b = &blocks[i];
        match b.kind {
            BlockKind::Table => {
                units.push(Unit { first: b.ordinal, last: b.ordinal, text: b.text.clone(), table: true, starts_with_header: false });
                i += 1;
            }
            BlockKind::Header => {
                let mut u = Unit { first: b.ordinal, last: b.ordinal, text: b.text.clone(), table: false, starts_with_header: true };
                i += 1;
                while i < blocks.len() && blocks[i].kind == BlockKind::Header {
                    u.last = blocks[i].ordinal;
                    u.text.push(' ');
                    u.text.push_str(&blocks[i].text);
                    i += 1;
                }
                if i < blocks.len() && matches!(blocks[i].kind, BlockKind::Paragraph | BlockKind::Other) {
                    u.last = blocks[i].ordinal;
                    u.text.push(' ');
                    u.text.push_str(&blocks[i].text);
                    i += 1;
                }
                units.push(u);
            }
            BlockKind::Paragraph | BlockKind::Other => {
                units.push(Unit { first: b.ordinal, last: b.ordinal, text: b.text.clone(), table: false, starts_with_header: false });
                i += 1;
            }
        }
    }

    let mut chunks: Vec<Unit> = Vec::new();
    for u in units {
        if u.table {
            chunks.push(u);
            continue;
        }
        let merge = match chunks.last() {
            Some(prev) if !prev.table => {
                let short = u.words() < cfg.min_chunk_words;
                let colon = !u.starts_with_header && u.text.ends_with(':') && !prev.starts_with_header;
                let prev_short = prev.words() < cfg.min_chunk_words;
                short || colon || prev_short
            }
            _ => false,
        };
        if merge {
            chunks.last_mut().expect("checked above").absorb(u);
        } else {
            chunks.push(u);
        }
    }

    chunks
        .into_iter()
        .enumerate()
        .map(|(index, u)| Chunk {
            chunk_id: Chunk::make_id(&doc.doc_id, ChunkMethod::Layout, index),
            doc_id: doc.doc_id.clone(),
            method: ChunkMethod::Layout,
            index,
            block_span: [u.first, u.last],
            text: u.text,
        })
        .collect()
}

const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "inc", "ltd", "co", "corp", "no", "vs", "e.g", "i.e", "u.s", "u.k", "st",
    "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec", "fig", "approx", "dept",
    "bzw", "z.b", "ca", "nr", "mme", "sr", "sra",
];

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_cjk_terminal(c: char) -> bool {
    matches!(c, '。' | '！' | '？')
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32, 0x3040..=0x30FF | 0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xAC00..=0xD7AF)
}

fn ends_with_abbreviation(before: &str) -> bool {
    let word = before.rsplit(char::is_whitespace).next().unwrap_or("");
    let word = word.trim_start_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
    let word = word.trim_end_matches('.');
    !word.is_empty() && (ABBREVIATIONS.contains(&word) || (word.chars().count() == 1 && word.chars().all(char::is_alphabetic)))
}

/// Splits normalized text into sentences: after `.`, `!` or `?` followed by
/// whitespace and an uppercase, digit-free CJK or opening-quote start, unless
/// the preceding word is a known abbreviation; and after CJK full stops.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (pos, c) = chars[i];
        let mut cut: Option<usize> = None;
        if is_cjk_terminal(c) {
            cut = Some(pos + c.len_utf8());
        } else if is_terminal(c) {
            // Swallow runs like "?!" and closing quotes/brackets.
            let mut j = i + 1;
            while j < chars.len() && (is_terminal(chars[j].1) || matches!(chars[j].1, '"' | '\'' | ')' | '”' | '’' | '»')) {
                j += 1;
            }
            if j < chars.len() && chars[j].1.is_whitespace() {
                let mut k = j;
                while k < chars.len() && chars[k].1.is_whitespace() {
                    k += 1;
                }
                if k < chars.len() {
                    let next = chars[k].1;
                    let opener = matches!(next, '"' | '“' | '„' | '«' | '(' | '¿' | '¡');
                    let starts = next.is_uppercase() || is_cjk(next) || opener;
                    let abbrev = c == '.' && ends_with_abbreviation(&text[start..pos]);
                    if starts && !abbrev {
                        cut = Some(chars[j].0);
                    }
                }
            }
            i = j.saturating_sub(1);
        }
        if let Some(end) = cut {
            let s = text[start..end].trim();
            if !s.is_empty() {
                out.push(s.to_string());
            }
            start = end;
        }
        i += 1;
    }
    let rest = text[start..].trim();
    if !rest.is_empty() {
        out.push(rest.to_string());
    }
    out
}

#[derive(Debug, Clone)]
struct Sentence {
    text: String,
    block: usize,
    tokens: usize,
}

fn document_sentences(doc: &ParsedDocument, max_tokens: usize) -> Vec<Sentence> {
    let mut out = Vec::new();
    for b in &doc.blocks {
        for s in split_sentences(&b.text) {
            let words: Vec<&str> = s.split_whitespace().collect();
            if words.len() <= max_tokens {
                out.push(Sentence { tokens: words.len(), text: s, block: b.ordinal });
            } else {
                for w in words.chunks(max_tokens) {
                    out.push(Sentence { text: w.join(" "), block: b.ordinal, tokens: w.len() });
                }
            }
        }
    }
    out
}

struct Group {
    sentences: std::ops::Range<usize>,
    tokens: usize,
    sum: Vec<f64>,
}

impl Group {
    fn centroid(&self) -> Vec<f32> {
        l2_normalize(self.sum.iter().map(|x| *x as f32).collect())
    }
}

/// Groups consecutive sentences while adjacent-sentence cosine similarity
/// stays at or above the threshold and the group fits the token cap; the
/// optional second pass merges adjacent groups whose re-normalized centroids
/// are similar enough, still within the cap.
pub fn semantic_chunk(doc: &ParsedDocument, cfg: &ChunkerConfig, embedder: &dyn EmbeddingProvider) -> Result<Vec<Chunk>> {
    cfg.validate()?;
    let sentences = document_sentences(doc, cfg.max_chunk_tokens);
    if sentences.is_empty() {
        return Ok(Vec::new());
    }
    let texts: Vec<String> = sentences.iter().map(|s| s.text.clone()).collect();
    let mut vectors: Vec<Vec<f32>> = Vec::with_capacity(texts.len());
    for batch in texts.chunks(cfg.embed_batch_size) {
        let got = embedder.embed(batch)?;
        if got.len() != batch.len() {
            return Err(Error::EmbeddingUnavailable(format!("expected {} vectors, got {}", batch.len(), got.len())));
        }
        vectors.extend(got.into_iter().map(l2_normalize));
    }
    let dim = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: v.len() });
    }
    let threshold = cfg.semantic_similarity_threshold;
    let cap = cfg.max_chunk_tokens;

    let new_group = |i: usize| Group {
        sentences: i..i + 1,
        tokens: sentences[i].tokens,
        sum: vectors[i].iter().map(|x| *x as f64).collect(),
    };
    let mut groups: Vec<Group> = vec![new_group(0)];
    for i in 1..sentences.len() {
        let g = groups.last_mut().expect("non-empty");
        let sim = dot(&vectors[i - 1], &vectors[i]);
        if sim >= threshold && g.tokens + sentences[i].tokens <= cap {
            g.sentences.end = i + 1;
            g.tokens += sentences[i].tokens;
            for (s, x) in g.sum.iter_mut().zip(&vectors[i]) {
                *s += *x as f64;
            }
        } else {
            groups.push(new_group(i));
        }
    }

    if cfg.semantic_double_pass {
        let mut merged: Vec<Group> = Vec::with_capacity(groups.len());
        for g in groups {
            if let Some(cur) = merged.last_mut() {
                if cur.tokens + g.tokens <= cap && cosine(&cur.centroid(), &g.centroid()) >= threshold {
                    cur.sentences.end = g.sentences.end;
                    cur.tokens += g.tokens;
                    for (s, x) in cur.sum.iter_mut().zip(&g.sum) {
                        *s += x;
                    }
                    continue;
                }
            }
            merged.push(g);
        }
        groups = merged;
    }

    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(index, g)| {
            let members = &sentences[g.sentences.clone()];
            Chunk {
                chunk_id: Chunk::make_id(&doc.doc_id, ChunkMethod::Semantic, index),
                doc_id: doc.doc_id.clone(),
                method: ChunkMethod::Semantic,
                index,
                block_span: [members[0].block, members[members.len() - 1].block],
                text: members.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" "),
            }
        })
        .collect())
}

pub fn chunk_document(
    doc: &ParsedDocument,
    method: ChunkMethod,
    cfg: &ChunkerConfig,
    embedder: &dyn EmbeddingProvider,
) -> Result<Vec<Chunk>> {
    match method {
        ChunkMethod::Layout => Ok(layout_chunk(doc, cfg)),
        ChunkMethod::Semantic => semantic_chunk(doc, cfg, embedder),
    }
}

/// Writes chunks as line-delimited JSON.
pub fn write_chunks(path: &Path, chunks: &[Chunk]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for c in chunks {
        serde_json::to_writer(&mut f, c)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_chunks(path: &Path) -> Result<Vec<Chunk>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(format!("{}:{}", path.display(), i + 1), e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ingest_plain_lines, test_metadata, Block};
    use crate::providers::stub::FnEmbedder;
    use proptest::prelude::*;

    fn words(prefix: &str, n: usize) -> String {
        (0..n).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>().join(" ")
    }

    fn doc(blocks: Vec<(BlockKind, String)>) -> ParsedDocument {
        ParsedDocument {
            doc_id: "d".into(),
            blocks: blocks
                .into_iter()
                .enumerate()
                .map(|(ordinal, (kind, text))| Block { kind, text, ordinal })
                .collect(),
            metadata: test_metadata("en"),
            parser_style: crate::corpus::ParserStyle::LayoutMarkdown,
        }
    }

    fn texts(chunks: &[Chunk]) -> Vec<&str> {
        chunks.iter().map(|c| c.text.as_str()).collect()
    }

    #[test]
    fn count_tokens_examples() {
        assert_eq!(count_tokens("a b c"), 3);
        assert_eq!(count_tokens(""), 0);
        assert_eq!(count_tokens("a  b"), 2);
    }

    #[test]
    fn header_merges_into_following_paragraph() {
        let p = words("p", 40);
        let d = doc(vec![(BlockKind::Header, "H".into()), (BlockKind::Paragraph, p.clone())]);
        let c = layout_chunk(&d, &ChunkerConfig::default());
        assert_eq!(texts(&c), vec![format!("H {p}")]);
        assert_eq!(c[0].block_span, [0, 1]);
    }

    #[test]
    fn consecutive_headers_concatenate() {
        let p = words("p", 40);
        let d = doc(vec![
            (BlockKind::Header, "A".into()),
            (BlockKind::Header, "B".into()),
            (BlockKind::Paragraph, p.clone()),
        ]);
        assert_eq!(texts(&layout_chunk(&d, &ChunkerConfig::default())), vec![format!("A B {p}")]);
    }

    #[test]
    fn tables_are_atomic() {
        let (p1, p2) = (words("a", 40), words("b", 40));
        let d = doc(vec![
            (BlockKind::Paragraph, p1.clone()),
            (BlockKind::Table, "|x|y|".into()),
            (BlockKind::Paragraph, p2.clone()),
        ]);
        let c = layout_chunk(&d, &ChunkerConfig::default());
        assert_eq!(texts(&c), vec![p1.as_str(), "|x|y|", p2.as_str()]);
        assert_eq!(c[1].block_span, [1, 1]);
    }

    #[test]
    fn short_paragraph_joins_previous() {
        let (p1, p2) = (words("a", 40), words("b", 5));
        let d = doc(vec![(BlockKind::Paragraph, p1.clone()), (BlockKind::Paragraph, p2.clone())]);
        assert_eq!(texts(&layout_chunk(&d, &ChunkerConfig::default())), vec![format!("{p1} {p2}")]);
    }

    #[test]
    fn colon_paragraph_joins_previous_unless_header_led() {
        let p1 = words("a", 40);
        let colon = format!("{} includes:", words("c", 35));
        let d = doc(vec![(BlockKind::Paragraph, p1.clone()), (BlockKind::Paragraph, colon.clone())]);
        assert_eq!(layout_chunk(&d, &ChunkerConfig::default()).len(), 1);

        let d = doc(vec![
            (BlockKind::Header, "H".into()),
            (BlockKind::Paragraph, p1.clone()),
            (BlockKind::Paragraph, colon.clone()),
        ]);
        let c = layout_chunk(&d, &ChunkerConfig::default());
        assert_eq!(texts(&c), vec![format!("H {p1}"), colon]);
    }

    #[test]
    fn short_leading_paragraph_absorbs_forward() {
        let (p1, p2, p3) = (words("a", 5), words("b", 40), words("c", 40));
        let d = doc(vec![(BlockKind::Paragraph, p1.clone()), (BlockKind::Paragraph, p2.clone()), (BlockKind::Paragraph, p3.clone())]);
        assert_eq!(texts(&layout_chunk(&d, &ChunkerConfig::default())), vec![format!("{p1} {p2}"), p3]);
    }

    #[test]
    fn plain_documents_use_only_paragraph_rules() {
        let raw = format!("{}\n\n{}\n\n{}", words("a", 40), words("b", 3), words("c", 40));
        let d = ingest_plain_lines(&raw, test_metadata("en")).unwrap();
        let c = layout_chunk(&d, &ChunkerConfig::default());
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].block_span, [0, 1]);
    }

    #[test]
    fn sentence_splitting() {
        assert_eq!(split_sentences("One here. Two there! Three? four"), vec!["One here.", "Two there!", "Three? four"]);
        assert_eq!(split_sentences("Dr. Smith met Mr. Jones. Then left."), vec!["Dr. Smith met Mr. Jones.", "Then left."]);
        assert_eq!(split_sentences("In the U.S. Congress. Yes."), vec!["In the U.S. Congress.", "Yes."]);
        assert_eq!(split_sentences("是的。好的。"), vec!["是的。", "好的。"]);
        assert_eq!(split_sentences("Ends with 3.5 percent. Next"), vec!["Ends with 3.5 percent.", "Next"]);
        assert_eq!(split_sentences(""), Vec::<String>::new());
    }

    fn sentence_doc(n: usize, words_each: usize) -> ParsedDocument {
        let text = (0..n).map(|i| format!("S{i} {}.", words("w", words_each - 1))).collect::<Vec<_>>().join(" ");
        doc(vec![(BlockKind::Paragraph, text)])
    }

    #[test]
    fn identical_embeddings_make_one_chunk() {
        let e = FnEmbedder::new("same", |_: &str| vec![1.0, 0.0]);
        let d = sentence_doc(5, 10);
        let c = semantic_chunk(&d, &ChunkerConfig::default(), &e).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].text, d.blocks[0].text);
    }

    #[test]
    fn orthogonal_embeddings_make_one_chunk_per_sentence() {
        let e = FnEmbedder::new("orth", |t: &str| {
            let idx: usize = t[1..t.find(' ').unwrap()].parse().unwrap();
            let mut v = vec![0.0; 8];
            v[idx] = 1.0;
            v
        });
        let c = semantic_chunk(&sentence_doc(5, 10), &ChunkerConfig::default(), &e).unwrap();
        assert_eq!(c.len(), 5);
    }

    #[test]
    fn token_cap_splits_identical_sentences() {
        let e = FnEmbedder::new("same", |_: &str| vec![1.0]);
        let d = sentence_doc(40, 100);
        let c = semantic_chunk(&d, &ChunkerConfig::default(), &e).unwrap();
        assert!(c.len() > 1);
        assert!(c.iter().all(|c| count_tokens(&c.text) <= 1536));
        let joined = c.iter().map(|c| c.text.as_str()).collect::<Vec<_>>().join(" ");
        assert_eq!(joined, d.full_text());
    }

    #[test]
    fn overlong_sentence_is_windowed() {
        let e = FnEmbedder::new("same", |_: &str| vec![1.0]);
        let cfg = ChunkerConfig { max_chunk_tokens: 50, min_chunk_words: 10, ..Default::default() };
        let d = doc(vec![(BlockKind::Paragraph, words("x", 120))]);
        let c = semantic_chunk(&d, &cfg, &e).unwrap();
        assert!(c.iter().all(|c| count_tokens(&c.text) <= 50));
        assert_eq!(c.iter().map(|c| count_tokens(&c.text)).sum::<usize>(), 120);
    }

    #[test]
    fn double_pass_merges_similar_groups() {
        // S0 at 0 degrees, S1 at 36.9, S2 at -20. Pass one keeps S0+S1 (cos 0.8)
        // and splits before S2 (cos 0.55); the S0+S1 centroid sits at 18.4
        // degrees, cos 0.78 to S2, so pass two merges everything.
        let e = FnEmbedder::new("angles", |t: &str| {
            let idx: usize = t[1..t.find(' ').unwrap()].parse().unwrap();
            match idx {
                0 => vec![1.0, 0.0],
                1 => vec![0.8, 0.6],
                _ => vec![0.9397, -0.3420],
            }
        });
        let d = sentence_doc(3, 5);
        let single = ChunkerConfig { semantic_double_pass: false, ..Default::default() };
        assert_eq!(semantic_chunk(&d, &single, &e).unwrap().len(), 2);
        assert_eq!(semantic_chunk(&d, &ChunkerConfig::default(), &e).unwrap().len(), 1);
        let capped = ChunkerConfig { max_chunk_tokens: 12, min_chunk_words: 1, ..Default::default() };
        assert_eq!(semantic_chunk(&d, &capped, &e).unwrap().len(), 2);
    }

    #[test]
    fn config_validation() {
        assert!(ChunkerConfig::default().validate().is_ok());
        assert!(ChunkerConfig { semantic_similarity_threshold: 1.0, ..Default::default() }.validate().is_err());
        assert!(ChunkerConfig { min_chunk_words: 0, ..Default::default() }.validate().is_err());
        assert!(ChunkerConfig { max_chunk_tokens: 10, ..Default::default() }.validate().is_err());
    }

    fn arb_blocks() -> impl Strategy<Value = Vec<(BlockKind, String)>> {
        let kind = prop_oneof![
            2 => Just(BlockKind::Header),
            6 => Just(BlockKind::Paragraph),
            1 => Just(BlockKind::Table),
        ];
        proptest::collection::vec(
            (kind, 1usize..60, any::<bool>()).prop_map(|(k, n, colon)| {
                let mut t = words("w", n);
                if colon && k == BlockKind::Paragraph {
                    t.push(':');
                }
                (k, t)
            }),
            1..25,
        )
    }

    proptest! {
        #[test]
        fn layout_preserves_text_and_spans(blocks in arb_blocks()) {
            let d = doc(blocks);
            let c = layout_chunk(&d, &ChunkerConfig::default());
            let joined = c.iter().map(|c| c.text.as_str()).collect::<Vec<_>>().join(" ");
            prop_assert_eq!(joined, d.full_text());
            let mut next = 0;
            for (i, ch) in c.iter().enumerate() {
                prop_assert_eq!(ch.index, i);
                prop_assert_eq!(ch.block_span[0], next);
                next = ch.block_span[1] + 1;
                let has_table = d.blocks[ch.block_span[0]..=ch.block_span[1]].iter().any(|b| b.kind == BlockKind::Table);
                if has_table {
                    prop_assert_eq!(ch.block_span[0], ch.block_span[1]);
                }
            }
            prop_assert_eq!(next, d.blocks.len());
        }

        #[test]
        fn semantic_partitions_sentences(n in 1usize..30, dims in 1usize..4) {
            let e = FnEmbedder::new("mod", move |t: &str| {
                let idx: usize = t[1..t.find(' ').unwrap()].parse().unwrap();
                let mut v = vec![0.1; dims];
                v[idx % dims] = 1.0;
                v
            });
            let d = sentence_doc(n, 6);
            let c = semantic_chunk(&d, &ChunkerConfig::default(), &e).unwrap();
            let joined = c.iter().map(|c| c.text.as_str()).collect::<Vec<_>>().join(" ");
            prop_assert_eq!(joined, d.full_text());
            let again = semantic_chunk(&d, &ChunkerConfig::default(), &e).unwrap();
            prop_assert_eq!(c, again);
        }
    }
}
