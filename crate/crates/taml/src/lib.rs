//! File formats, checkpoints and the experiment harness around
//! [`taml_core`].
//!
//! * [`formats`]: MovieLens-1M, Amazon 5-core JSON lines and the canonical
//!   TSV layout, all translated into one raw log plus category table.
//! * [`snapshot`]: a versioned TSV image of a split corpus.
//! * [`checkpoint`]: binary parameter checkpoints.
//! * [`config`]: the layered experiment configuration.
//! * [`output`]: CSV/TSV writers and failure-atomic output staging.
//! * [`pipeline`]: ingest, report, train, evaluate, ablation and sweep
//!   commands.

pub mod checkpoint;
pub mod config;
pub mod formats;
pub mod output;
pub mod pipeline;
pub mod snapshot;

pub use config::{ExperimentConfig, ModelKind};
pub use pipeline::Prepared;
