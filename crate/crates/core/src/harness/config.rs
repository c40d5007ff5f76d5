//! Experiment configuration, loadable from TOML or JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{PriorMode, SelectionConfig};
use crate::densify::DensifyConfig;
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::optimizer::OptimConfig;
use crate::render::RenderOptions;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Ours,
    AblationNoPrior,
    AblationStrongPrior,
    BaselineOpacity,
    BaselineRender,
    NoPrune,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Ours,
        Mode::AblationNoPrior,
        Mode::AblationStrongPrior,
        Mode::BaselineOpacity,
        Mode::BaselineRender,
        Mode::NoPrune,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Ours => "ours",
            Mode::AblationNoPrior => "ablation_no_prior",
            Mode::AblationStrongPrior => "ablation_strong_prior",
            Mode::BaselineOpacity => "baseline_opacity",
            Mode::BaselineRender => "baseline_render",
            Mode::NoPrune => "no_prune",
        }
    }

    /// Prior used by the selection engine, or `None` for modes without it.
    pub fn prior(self) -> Option<PriorMode> {
        match self {
            Mode::Ours => Some(PriorMode::Finite),
            Mode::AblationNoPrior => Some(PriorMode::None),
            Mode::AblationStrongPrior => Some(PriorMode::Strong),
            _ => None,
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig {
                field: "mode".into(),
                reason: format!("unknown mode `{s}`"),
            })
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One training view of the canvas: an optional crop, then optional mirroring.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewSpec {
    /// `[x, y, width, height]` in canvas pixels.
    pub crop: Option<[usize; 4]>,
    pub flip_x: bool,
    pub flip_y: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Target images; all must share one size and act as views of one canvas.
    pub images: Vec<PathBuf>,
    /// Box-filter downsampling applied to every image on load.
    pub downsample: usize,
    pub views: Vec<ViewSpec>,
    pub total_iters: u64,
    pub seed: u64,
    pub mode: Mode,
    pub output_dir: PathBuf,
    /// Keeps wall-clock time out of the summary so reruns compare bitwise.
    pub reproducible: bool,
    /// Iterations between log rows.
    pub log_interval: u64,
    /// Baselines sample survivors proportionally instead of taking the top `B`.
    pub baseline_stochastic: bool,
    /// End the run as soon as the selection phase reaches its budget.
    pub stop_at_completion: bool,
    pub selection: SelectionConfig,
    pub densify: DensifyConfig,
    pub optimizer: OptimConfig,
    pub loss: LossConfig,
    pub render: RenderOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            images: Vec::new(),
            downsample: 1,
            views: vec![ViewSpec::default()],
            total_iters: 30_000,
            seed: 0,
            mode: Mode::Ours,
            output_dir: PathBuf::from("runs/default"),
            reproducible: false,
            log_interval: 50,
            baseline_stochastic: true,
            stop_at_completion: false,
            selection: SelectionConfig::default(),
            densify: DensifyConfig::default(),
            optimizer: OptimConfig::default(),
            loss: LossConfig::default(),
            render: RenderOptions::default(),
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        field: field.into(),
        reason: reason.into(),
    }
}

impl RunConfig {
    /// Parses `.json` files as JSON and everything else as TOML. Relative image
    /// paths are resolved against the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| invalid("config", e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| invalid("config", e.message().to_string()))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        for img in &mut cfg.images {
            if img.is_relative() {
                *img = base.join(&*img);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| invalid("config", e.to_string()))
    }

    /// Checks field ranges; `check_paths` also requires every image to exist.
    pub fn validate(&self, check_paths: bool) -> Result<()> {
        self.selection.validate()?;
        self.optimizer.validate()?;
        self.render.validate()?;
        if self.total_iters == 0 {
            return Err(invalid("total_iters", "must be positive"));
        }
        if self.downsample == 0 {
            return Err(invalid("downsample", "must be at least 1"));
        }
        if self.log_interval == 0 {
            return Err(invalid("log_interval", "must be positive"));
        }
        if self.views.is_empty() {
            return Err(invalid("views", "at least one view is required"));
        }
        if self.densify.interval == 0 {
            return Err(invalid("densify.interval", "must be positive"));
        }
        if self.densify.init_count == 0 {
            return Err(invalid("densify.init_count", "must be at least 1"));
        }
        if !(self.densify.split_factor > 1.0) {
            return Err(invalid("densify.split_factor", "must exceed 1"));
        }
        if check_paths {
            if self.images.is_empty() {
                return Err(invalid("images", "at least one image is required"));
            }
            for p in &self.images {
                if !p.is_file() {
                    return Err(invalid("images", format!("{} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    /// Last iteration (exclusive) of the densification window.
    pub fn densify_until(&self) -> u64 {
        self.densify.until_iter.unwrap_or(self.selection.start_iter)
    }

    /// Growth cap: explicit, else three times a fixed budget, else eight
    /// times the initial count.
    pub fn densify_cap(&self) -> usize {
        match (self.densify.cap, self.selection.budget_fraction) {
            (Some(c), _) => c,
            (None, None) => 3 * self.selection.budget,
            (None, Some(_)) => 8 * self.densify.init_count,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_errors() {
        let mut c = RunConfig::default();
        c.mode = Mode::BaselineRender;
        c.selection.auto_lr = true;
        let text = c.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);

        let err = toml::from_str::<RunConfig>("selection = { bogus = 1 }").unwrap_err();
        assert!(err.message().contains("bogus"));
        let c = RunConfig {
            selection: SelectionConfig { tau: 2.0, ..Default::default() },
            ..Default::default()
        };
        match c.validate(false) {
            Err(Error::InvalidConfig { field, .. }) => assert_eq!(field, "selection.tau"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_image_is_reported() {
        let c = RunConfig {
            images: vec!["/nonexistent/x.png".into()],
            ..Default::default()
        };
        match c.validate(true) {
            Err(Error::InvalidConfig { field, .. }) => assert_eq!(field, "images"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn json_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        std::fs::write(&p, r#"{"images": ["a.png"], "mode": "no_prune", "seed": 3}"#).unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.mode, Mode::NoPrune);
        assert_eq!(c.seed, 3);
        assert_eq!(c.images[0], dir.path().join("a.png"));
    }

    #[test]
    fn modes_parse() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
        assert!("bogus".parse::<Mode>().is_err());
    }
}
