//! End-to-end runs that write their artifacts to an output directory.

use std::path::Path;

use super::checkpoint::Checkpoint;
use super::compare::SUMMARY_FILE;
use super::config::RunConfig;
use super::plots::emit_plots;
use super::trainer::{RunSummary, Trainer};
use crate::error::Result;
use crate::report::write_log_csv;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "log.csv";

/// Writes the log, render, summary, checkpoint and plots of `trainer` into `dir`.
pub fn write_outputs(trainer: &Trainer, dir: &Path) -> Result<RunSummary> {
    std::fs::create_dir_all(dir)?;
    write_log_csv(dir.join(LOG_FILE), &trainer.log)?;
    trainer.render_canvas().save_png(dir.join("final.png"))?;
    let summary = trainer.summary()?;
    std::fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?)?;
    if trainer.config.reproducible {
        let timing = serde_json::json!({ "wall_time_s": trainer.elapsed_s() });
        std::fs::write(dir.join("timing.json"), serde_json::to_string_pretty(&timing)?)?;
    }
    Checkpoint::capture(trainer).save(dir.join(CHECKPOINT_FILE))?;
    if trainer.log.len() >= 2 {
        emit_plots(&trainer.log, dir.join("plots"))?;
    }
    Ok(summary)
}

/// Loads images, trains to completion and writes every artifact to
/// `config.output_dir`. If training aborts, the last good state is still
/// checkpointed before the error is returned.
pub fn run(config: RunConfig) -> Result<RunSummary> {
    let dir = config.output_dir.clone();
    let mut trainer = Trainer::from_config(config)?;
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.toml"), trainer.config.to_toml()?)?;
    if let Err(e) = trainer.run() {
        write_log_csv(dir.join(LOG_FILE), &trainer.log)?;
        Checkpoint::capture(&trainer).save(dir.join(CHECKPOINT_FILE))?;
        return Err(e);
    }
    write_outputs(&trainer, &dir)
}
