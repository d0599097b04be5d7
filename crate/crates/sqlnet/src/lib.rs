//! Sketch-based natural-language-to-SQL synthesis with sequence-to-set
//! WHERE-clause prediction and column attention, plus the data ingestion,
//! query execution, and evaluation harness around it.

pub mod ckpt;
pub mod cli;
pub mod config;
pub mod eval;
pub mod exec;
pub mod ingest;
pub mod model;
pub mod nn;
pub mod sketch;
pub mod synth;
