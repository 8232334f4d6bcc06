//! Evidence retrieval and stance classification for corporate climate-policy
//! engagement, with the evaluation harness used to measure each stage.

pub mod chunker;
pub mod config;
pub mod corpus;
pub mod error;
pub mod harness;
pub mod index;
pub mod metrics;
pub mod providers;
pub mod rerank;
pub mod stance;
pub mod synth;

pub use error::{Error, ProviderKind, Result};
pub use harness::{build_report, observe, Artifacts, EvalConfig, EvalInputs, EvalReport, Providers, Stage};
