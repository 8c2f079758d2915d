//! Library side of the `etnet` binary: ingestion, run configuration and the
//! pipelines behind each subcommand.

pub mod config;
pub mod ingest;
pub mod output;
pub mod pipeline;

pub use config::{RunConfig, Task};
pub use ingest::{ingest, ingest_reader, windows};
pub use pipeline::{
    run_cluster, run_eval_dist, run_explain, run_score, run_synth, run_train, split, Split, TrainSummary,
};
