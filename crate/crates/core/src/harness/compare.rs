//! Cross-run comparison table built from run summaries.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::trainer::RunSummary;
use crate::error::Result;

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareRow {
    pub run: String,
    pub mode: String,
    pub seed: u64,
    pub image: String,
    pub psnr: f64,
    pub ssim: f64,
    pub final_count: usize,
    pub budget: usize,
    pub post_densify_count: Option<usize>,
    pub completion_iters: Option<u64>,
    pub fallback_fired: bool,
    pub final_reg_lr: f64,
    pub recovery_reach_iters: Option<u64>,
    pub wall_time_s: Option<f64>,
}

pub fn load_summary(run_dir: impl AsRef<Path>) -> Result<RunSummary> {
    let text = std::fs::read_to_string(run_dir.as_ref().join(SUMMARY_FILE))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn compare_row(run: &Path, s: &RunSummary) -> CompareRow {
    CompareRow {
        run: run.display().to_string(),
        mode: s.mode.to_string(),
        seed: s.seed,
        image: s.images.join(";"),
        psnr: s.psnr,
        ssim: s.ssim,
        final_count: s.final_count,
        budget: s.budget,
        post_densify_count: s.post_densify_count,
        completion_iters: s.completion_iters,
        fallback_fired: s.fallback_fired,
        final_reg_lr: s.final_reg_lr,
        recovery_reach_iters: s.recovery_reach_iters,
        wall_time_s: s.wall_time_s,
    }
}

/// Reads `summary.json` from every run directory and writes one CSV row per
/// run, in the order given.
pub fn compare_runs(runs: &[PathBuf], out: impl AsRef<Path>) -> Result<Vec<CompareRow>> {
    let rows = runs
        .iter()
        .map(|r| load_summary(r).map(|s| compare_row(r, &s)))
        .collect::<Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_path(out.as_ref())?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(rows)
}

/// Median of the PSNR column per mode, sorted by mode name.
pub fn median_psnr_by_mode(rows: &[CompareRow]) -> Vec<(String, f64)> {
    let mut modes: Vec<String> = rows.iter().map(|r| r.mode.clone()).collect();
    modes.sort();
    modes.dedup();
    modes
        .into_iter()
        .map(|m| {
            let v: Vec<f64> = rows.iter().filter(|r| r.mode == m).map(|r| r.psnr).collect();
            (m, crate::metrics::median(&v))
        })
        .collect()
}
