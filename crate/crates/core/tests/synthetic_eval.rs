use stancerag_core::chunker::ChunkMethod;
use stancerag_core::corpus::LanguageGroup;
use stancerag_core::harness::{build_report, observe, EvalConfig, EvalInputs, Providers, Stage};
use stancerag_core::providers::stub::{HashingEmbedder, KeywordStanceChat};
use stancerag_core::stance::EvidenceMode;
use stancerag_core::synth;

fn inputs() -> EvalInputs {
    let c = synth::generate(synth::DEFAULT_SEED, synth::DEFAULT_DOCS_PER_LANGUAGE);
    EvalInputs { records: c.records, payloads: c.payloads }
}

#[test]
fn hashing_retrieval_finds_gold_first() {
    let emb = HashingEmbedder::default();
    let chat = KeywordStanceChat;
    let p = Providers { embedder: &emb, reranker: None, chat: &chat, aligner: None };
    let cfg = EvalConfig { chunk_methods: vec![ChunkMethod::Layout], ..Default::default() };
    let art = observe(&inputs(), &cfg, &[Stage::Pipeline], &p).unwrap();
    let r = build_report(&art, &cfg);
    eprintln!("{}", stancerag_core::harness::render_table_text(&r));
    let row = r.retrieval.iter().find(|x| x.group == LanguageGroup::All).unwrap();
    assert_eq!(row.recall.n, 240);
    assert_eq!(row.recall.mean, Some(1.0));
    assert_eq!(row.mrr.mean, Some(1.0));
    let o = r.outperformance.unwrap();
    assert!(o.cases > 0);
    assert!(o.rows.iter().any(|x| x.evidence_mode == EvidenceMode::FR && x.wins > 0));
}
