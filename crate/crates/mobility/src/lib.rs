//! Experimental harness for long-horizon individual mobility prediction on
//! check-in data: ingestion, grid discretization, feature generation, user
//! clustering, non-IID-aware batch sampling, compact LSTM/Transformer
//! predictors with a historical-fusion gate, and GEO-BLEU evaluation.

pub mod features;
pub mod fusion;
pub mod grid;
pub mod harness;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod sampling;
pub mod semantics;
