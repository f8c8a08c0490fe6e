//! File formats, model-service clients, configuration and the command line
//! for the `thinkguard` pipeline.
//!
//! The numerical work lives in [`thinkguard_core`]; this crate moves data in
//! and out of it.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod jsonl;
pub mod manifest;
pub mod modelsvc;
pub mod plot;
pub mod telemetry;

pub use thinkguard_core as core;
