//! Context-drift evaluation toolkit.
//!
//! The pipeline mines naturally evolved versions of QA benchmark passages
//! from Wikipedia revision histories, measures how far each edited passage
//! has drifted from same-title content in a model's training corpus, queries
//! models on the edited passages, and relates accuracy to similarity through
//! binned accuracy, Wilson intervals and linear trends.
//!
//! Stages, in order: [`ingest`], [`evolve`], [`simdrift`], [`verbatim`],
//! [`harness`], [`analysis`]. The [`pipeline`] module wires them together
//! behind the `drift-eval` command line tool.

pub mod analysis;
pub mod config;
pub mod endpoint;
pub mod error;
pub mod evolve;
pub mod harness;
pub mod ingest;
pub mod pipeline;
pub mod simdrift;
pub mod store;
pub mod text;
pub mod types;
pub mod verbatim;

pub use error::{Error, Result};
pub use types::{ApcStatus, DatasetId, TaskKind};
