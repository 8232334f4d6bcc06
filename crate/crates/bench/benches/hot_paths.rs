use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use stancerag_core::chunker::{chunk_document, layout_chunk, ChunkMethod, ChunkerConfig};
use stancerag_core::corpus::ParserStyle;
use stancerag_core::index::VectorIndex;
use stancerag_core::metrics::{lcs_len, TokenSequence};
use stancerag_core::providers::stub::HashingEmbedder;
use stancerag_core::synth;

fn bench_lcs(c: &mut Criterion) {
    let corpus = synth::generate(synth::DEFAULT_SEED, 2);
    let doc = corpus.payloads[0].ingest().unwrap();
    let full = TokenSequence::from_text(&doc.full_text());
    let gold = TokenSequence::from_text(&corpus.records[0].gold_evidence);
    let mut g = c.benchmark_group("lcs_len");
    for n in [50usize, 200, 800] {
        let part = &full.tokens()[..n.min(full.len())];
        g.bench_with_input(BenchmarkId::from_parameter(n), &part, |b, p| b.iter(|| lcs_len(black_box(p), gold.tokens())));
    }
    g.finish();
}

fn bench_layout_chunk(c: &mut Criterion) {
    let corpus = synth::generate(synth::DEFAULT_SEED, 2);
    let docs: Vec<_> = corpus.payloads_for(ParserStyle::LayoutMarkdown).map(|p| p.ingest().unwrap()).collect();
    let cfg = ChunkerConfig::default();
    c.bench_function("layout_chunk/8_docs", |b| {
        b.iter(|| docs.iter().map(|d| layout_chunk(black_box(d), &cfg).len()).sum::<usize>())
    });
}

fn bench_search(c: &mut Criterion) {
    let corpus = synth::generate(synth::DEFAULT_SEED, synth::DEFAULT_DOCS_PER_LANGUAGE);
    let emb = HashingEmbedder::default();
    let cfg = ChunkerConfig::default();
    let chunks: Vec<_> = corpus
        .payloads_for(ParserStyle::LayoutMarkdown)
        .flat_map(|p| chunk_document(&p.ingest().unwrap(), ChunkMethod::Layout, &cfg, &emb).unwrap())
        .collect();
    let mut index = VectorIndex::new();
    index.index_chunks(&chunks, &emb, 64).unwrap();
    let query = corpus.records[0].query_id.query().text;
    c.bench_function("search/corpus_wide_k5", |b| b.iter(|| index.search(black_box(query), 5, None, &emb).unwrap().len()));
}

criterion_group!(benches, bench_lcs, bench_layout_chunk, bench_search);
criterion_main!(benches);
