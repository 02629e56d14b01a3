//! Domain-shift evaluation harness for code language models.
//!
//! The crate is organized as one module per pipeline stage:
//!
//! - [`corpus`]: CodeSearchNet-style ingestion, hierarchical domain keys, seeded splits
//! - [`embed`]: deterministic embeddings and exact cosine retrieval
//! - [`select`]: retrieval-based adaptation sets, random baselines, IsoScore and fast vote-k
//! - [`jsparse`]: tolerant JavaScript parser feeding the CodeBLEU structure components
//! - [`metrics`]: BLEU-4, chrF, ROUGE-L and CodeBLEU
//! - [`prompt`]: instruction templates and budgeted prompt assembly
//! - [`modelclient`]: HTTP completion client, response cache and an offline mock model
//! - [`runner`]: experiment orchestration, aggregation, reports and dataset export

pub mod corpus;
pub mod embed;
pub mod jsparse;
pub mod metrics;
pub mod modelclient;
pub mod prompt;
pub mod rng;
pub mod runner;
pub mod select;
pub mod synth;
