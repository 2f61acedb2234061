//! Words-versus-deeds gap in digital transformation and stock price crash
//! risk: ingestion, text metrics, crash measures, fixed-effects panel
//! regressions, group tests, synthetic data, and table rendering.

pub mod config;
pub mod crash;
pub mod gdt;
pub mod inference;
pub mod ingest;
pub mod panel;
pub mod pipeline;
pub mod regression;
pub mod report;
pub mod stats;
pub mod synth;
pub mod text;
