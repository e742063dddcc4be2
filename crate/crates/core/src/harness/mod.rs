//! Study configuration, ingestion, the repeated-split loop and report emission.

pub mod config;
pub mod dataset;
pub mod report;
pub mod run;
pub mod split;

pub use config::{load_configs, MissingPolicy, ScheduleFile, StudyConfig};
pub use dataset::{impute_fold, load_dataset};
pub use report::{emit_reports, emit_sensitivity, render_summary, SensitivityTable};
pub use run::{run_on_dataset, run_study, RunArtifacts, RunOptions};
pub use split::{stratified_split, Split};
