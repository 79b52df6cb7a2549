//! Monte-Carlo verification, threshold sweeps and reproducible run output
//! for `airfl-core`.
//!
//! - [`stats`]: moments with standard errors, chunked seeded sampling.
//! - [`experiments`]: the sampling experiments and sweeps.
//! - [`report`]: CSV tables and content hashes.
//! - [`run`]: experiment descriptions, pass/fail checks, manifests, replay.

pub mod experiments;
pub mod report;
pub mod run;
pub mod stats;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] airfl_core::Error),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("config: {0}")]
    TomlRead(#[from] toml::de::Error),
    #[error("manifest: {0}")]
    TomlWrite(#[from] toml::ser::Error),
    #[error("{0}: no rows")]
    Empty(String),
    #[error("{0}: column {1} has no standard-error column")]
    MissingSe(String, String),
    #[error("{0}: ragged rows")]
    Shape(String),
    #[error("parse: {0}")]
    Parse(String),
    #[error("precondition: {0}")]
    Precondition(String),
}
