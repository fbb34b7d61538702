//! Depth-gated obstacle alerting for pedestrians.

pub mod alert;
pub mod cli;
pub mod config;
pub mod eval;
pub mod fusion;
pub mod infer;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod postprocess;
pub mod types;
