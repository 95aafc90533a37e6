// SPDX-License-Identifier: Apache-2.0

//! Experiment orchestration: meta-train/validate/test loops, checkpoints,
//! pruning, strength reports and random search.

mod checkpoint;
pub mod config;
pub mod metrics;
mod search;
mod strengths;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::{format_pool, parse_pool, ArchKind, RunConfig, TaskKind};
pub use metrics::{export_csv, read_csv, summarize, MetricsRow, METRICS_HEADER};
pub use search::{random_search, write_search_report, SearchSpace, TrialParams, TrialResult};
pub use strengths::{
    prune_topk, report_strengths, strengths_by_position, top_k_indices, write_strengths_csv, SetStrengths,
    StrengthEntry, StrengthTable,
};
pub use train::{
    checkpoint_dir, evaluate, fresh_checkpoint, initial_network, is_better, meta_test, meta_train, meta_validate,
    test_rows, with_threads, TrainOutcome,
};
