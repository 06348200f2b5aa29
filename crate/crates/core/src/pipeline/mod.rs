//! Manifests, seeded splits, run configuration and the end-to-end run.

mod config;
mod manifest;
mod report;
mod run;
mod split;

pub use config::RunConfig;
pub use manifest::{Augmentation, Manifest, Provenance, Record, Split, SynthInfo};
pub use report::{stage_report, StageReport, STAGE_NAMES};
pub use run::{list_files, run_end_to_end, with_workers, RunSummary, WORKERS_ENV};
pub use split::{split, split_sizes, SplitRatios};
