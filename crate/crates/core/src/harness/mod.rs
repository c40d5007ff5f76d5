//! Experiment runner: configuration, training loop, artifacts.

pub mod checkpoint;
pub mod compare;
pub mod config;
pub mod plots;
pub mod run;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use compare::{compare_runs, load_summary, median_psnr_by_mode, CompareRow};
pub use config::{Mode, RunConfig, ViewSpec};
pub use plots::emit_plots;
pub use run::{run, write_outputs};
pub use trainer::{build_targets, load_images, RunSummary, Target, Trainer};
