//! Training-curve plots: one PNG per series plus a CSV of the plotted data.

use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::report::{empty_log, write_log_csv, TrainReport};

pub const PLOT_SIZE: (u32, u32) = (640, 400);

type Series = (&'static str, fn(&TrainReport) -> f64);

pub const SERIES: [Series; 5] = [
    ("alive_count", |r| r.alive_count as f64),
    ("mean_alpha", |r| r.mean_alpha),
    ("boundary_alpha", |r| r.boundary_alpha),
    ("l_render", |r| r.l_render),
    ("l_reg", |r| r.l_reg),
];

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Plot(e.to_string())
}

fn draw(path: &Path, points: &[(f64, f64)], color: RGBColor) -> Result<()> {
    let root = BitMapBackend::new(path, PLOT_SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let (x0, x1) = (points[0].0, points[points.len() - 1].0);
    let finite = points.iter().map(|p| p.1).filter(|y| y.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), y| (l.min(y), h.max(y)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-12);
    let mut chart = ChartBuilder::on(&root)
        .margin(12)
        .build_cartesian_2d(x0..x1.max(x0 + 1.0), (lo - pad)..(hi + pad))
        .map_err(plot_err)?;
    chart
        .draw_series(LineSeries::new(points.iter().copied().filter(|p| p.1.is_finite()), &color))
        .map_err(plot_err)?;
    let frame = [(x0, lo - pad), (x1, lo - pad), (x1, hi + pad), (x0, hi + pad), (x0, lo - pad)];
    chart.draw_series(LineSeries::new(frame, &BLACK)).map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Writes `<series>.png` for every logged series and `curves.csv` with the
/// rows they were drawn from. Returns the written paths.
pub fn emit_plots(rows: &[TrainReport], out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if rows.len() < 2 {
        return Err(empty_log());
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let palette = [BLUE, RED, GREEN, MAGENTA, CYAN];
    let mut written = Vec::new();
    for ((name, f), color) in SERIES.iter().zip(palette) {
        let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.iteration as f64, f(r))).collect();
        let path = out_dir.join(format!("{name}.png"));
        draw(&path, &points, color)?;
        written.push(path);
    }
    let csv = out_dir.join("curves.csv");
    write_log_csv(&csv, rows)?;
    written.push(csv);
    Ok(written)
}
