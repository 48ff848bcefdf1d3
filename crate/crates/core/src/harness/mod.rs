//! Experiment plumbing behind the `qdnet` binary: configuration, the
//! training loop with CSV logs, step-size grids, timing and verification.

pub mod config;
pub mod grid;
pub mod train;
pub mod verify;

pub use config::{DatasetKind, RunConfig};
pub use grid::{bench, bench_report, grid, BenchRow, GridRun, GridSummary};
pub use train::{evaluate, train, EpochRow, Evaluation, TrainLog, TrainOutcome, LOG_HEADER};
pub use verify::{run_suite, Suite, SuiteReport};
