//! Longitudinal SOAP progress-note generation from heterogeneous clinical notes.
//!
//! The pipeline classifies raw notes into sixteen canonical types, pivots them
//! into visit-level records and per-patient timelines, cleans and chunks each
//! note, retrieves evidence per visit from an exact cosine index, generates a
//! SOAP note per visit (enrichment mode for the first visit, temporal mode
//! with a summary of the previous generated note afterwards), and scores the
//! results against the clinicians' progress notes.

pub mod chunker;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod index;
pub mod io;
pub mod pipeline;
pub mod preprocess;
pub mod provider;
pub mod retriever;
pub mod synth;
pub mod taxonomy;

pub use error::{Error, ProviderError, Result};
