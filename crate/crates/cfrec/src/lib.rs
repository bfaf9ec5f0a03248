//! Files, formats and commands around [`cfrec_core`].
//!
//! * [`ingest`] reads delimited review files.
//! * [`cache`] stores preprocessed, split interactions.
//! * [`checkpoint`] stores trained weights and their manifest.
//! * [`commands`] implements `preprocess`, `train`, `evaluate` and `recommend`.

pub mod cache;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;
pub mod report;
pub mod synthetic;

pub use error::{CliError, Result};
