//! Per-interval training log records.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub iteration: u64,
    pub l_render: f64,
    pub l_reg: f64,
    pub psnr: f64,
    pub alive_count: usize,
    pub mean_alpha: f64,
    /// Opacity of the budget-ranked primitive.
    pub boundary_alpha: f64,
    pub current_reg_lr: f64,
    pub phase: String,
}

pub fn write_log_csv(path: impl AsRef<Path>, rows: &[TrainReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log_csv(path: impl AsRef<Path>) -> Result<Vec<TrainReport>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<TrainReport>, _>>()?;
    Ok(rows)
}

/// Checks that the alive count never increases over rows whose phase is one
/// of the selecting phases.
pub fn selection_is_monotone(rows: &[TrainReport]) -> bool {
    let selecting = |p: &str| p == "prefree" || p == "finite_prior";
    rows.windows(2)
        .filter(|w| selecting(&w[0].phase) && selecting(&w[1].phase))
        .all(|w| w[1].alive_count <= w[0].alive_count)
}

pub(crate) fn empty_log() -> Error {
    Error::Plot("log has fewer than two rows".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(it: u64, alive: usize, phase: &str) -> TrainReport {
        TrainReport {
            iteration: it,
            l_render: 0.1 + it as f64 * 1e-3,
            l_reg: 400.0,
            psnr: 21.5,
            alive_count: alive,
            mean_alpha: 0.3,
            boundary_alpha: 0.05,
            current_reg_lr: 1e-4,
            phase: phase.into(),
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        let rows = vec![row(0, 10, "inactive"), row(50, 9, "finite_prior")];
        write_log_csv(&p, &rows).unwrap();
        assert_eq!(read_log_csv(&p).unwrap(), rows);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("iteration,l_render,"));
    }

    #[test]
    fn monotone_check() {
        let ok = [row(0, 10, "finite_prior"), row(50, 8, "finite_prior"), row(100, 9, "done")];
        assert!(selection_is_monotone(&ok));
        let bad = [row(0, 8, "finite_prior"), row(50, 9, "finite_prior")];
        assert!(!selection_is_monotone(&bad));
    }
}
