//! Experiment harness: configuration, the training loop, metrics files,
//! run summaries and the verification suites.

pub mod config;
pub mod metrics;
pub mod summary;
pub mod train;
pub mod verify;

pub use config::{Algo, EnvKind, InitKind, RunConfig};
pub use metrics::{read_metrics, MetricsRow, MetricsWriter};
pub use summary::{load_run, summarize_rows, summary_table, RunRecord, RunStats};
pub use train::{resume, train, train_generic, workers_from_env, Checkpoint, RunSummary, TrainOptions};
pub use verify::{run_all, VerifyOptions, VerifyReport};
