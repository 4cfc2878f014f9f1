//! Recommending security tool APIs from free-form natural language queries.
//!
//! The pipeline ingests per-tool API documentation into one corpus, clusters
//! identically described APIs, augments class descriptions, trains a subword
//! skip-gram embedding plus a word-level CNN ranker, and evaluates it against
//! an IDF-weighted embedding similarity baseline.

pub mod adapters;
pub mod augment;
pub mod baseline;
mod binio;
pub mod cnn;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod hashing;
pub mod pipeline;
pub mod ranking;
pub mod textprep;

pub use error::{Error, Result};
