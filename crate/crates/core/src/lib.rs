//! Quality-score driven curation of image-text pools.
//!
//! The crate covers the full loop: stream pairs from sharded files
//! ([`ingest`]), score them on four quality metrics through a pluggable
//! backend ([`scorer`]), turn score histograms into integer thresholds and
//! filter with single or combined metrics ([`filter`]), build balanced
//! instruction-tuning sets for the scoring model itself ([`curation`]), and
//! evaluate scores against human judgements ([`stats`]).
//!
//! Data-parallel inner loops go through [`exec::Exec`], which uses rayon when
//! the `parallel` feature is enabled and falls back to plain iterators
//! otherwise.

pub mod config;
pub mod curation;
pub mod domain;
pub mod error;
pub mod exec;
pub mod filter;
pub mod ingest;
pub mod scorer;
pub mod stats;

pub use domain::{ImageRef, ImageTextPair, Metric, QualityScore, ScoreRecord};
pub use error::{Error, Result};
pub use exec::Exec;
