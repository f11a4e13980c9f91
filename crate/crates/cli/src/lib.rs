//! Command-line front end for top-policy inference: configuration parsing,
//! CSV ingestion, panel-to-dummy expansion, and the `analyze`, `simulate`,
//! and `tune` commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;
pub mod report;
