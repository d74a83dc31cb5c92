// SPDX-License-Identifier: Apache-2.0

//! Library half of the `cdp` binary: config resolution and commands.

pub mod commands;
pub mod config;

pub use commands::{
    ablate, eval, evaluate, fit, generate, inspect_schedule, load_dataset, train, write_ablation, AblationTable,
    Dataset, DatasetSummary, EpochRow, EvalReport, ScheduleSummary,
};
pub use config::{Overrides, RunConfig};
