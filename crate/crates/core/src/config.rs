//! Hyperparameters of the natural-selection process.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the regularization field acts on individual opacities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    /// Uniform step on the pre-activation `v`; decay ratio scales with `1 - alpha`.
    #[default]
    Finite,
    /// Per-primitive compensation so every primitive loses the same fraction of opacity.
    None,
    /// Primitives are exempted from a round with probability equal to their opacity.
    Strong,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    /// Regularization target for the mean pre-activation opacity.
    pub target_t: f64,
    /// Survival threshold on activated opacity.
    pub tau: f64,
    /// Iterations between pressure applications.
    pub interval_n: u64,
    /// Learning rate of the regularization gradient field.
    pub reg_lr: f64,
    /// Final primitive budget; overridden by `budget_fraction` when set.
    pub budget: usize,
    /// Budget as a fraction of the alive count when selection starts.
    pub budget_fraction: Option<f64>,
    pub start_iter: u64,
    /// Deadline for the one-shot opacity fallback.
    pub latest_end_iter: u64,
    pub recovery_iters: u64,
    pub opacity_lr_scale: f64,
    pub prior_mode: PriorMode,
    /// Length of the compensated low-learning-rate warm phase.
    pub prefree_iters: u64,
    pub prefree_lr_scale: f64,
    pub auto_lr: bool,
    /// Iterations after `start_iter` at which the auto-lr target curve reaches `tau`.
    pub auto_lr_target_iters: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            target_t: -20.0,
            tau: 0.001,
            interval_n: 50,
            reg_lr: 2.0e-5,
            budget: 1000,
            budget_fraction: None,
            start_iter: 15_000,
            latest_end_iter: 23_000,
            recovery_iters: 1_000,
            opacity_lr_scale: 4.0,
            prior_mode: PriorMode::Finite,
            prefree_iters: 500,
            prefree_lr_scale: 0.25,
            auto_lr: false,
            auto_lr_target_iters: 6_500,
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        field: format!("selection.{field}"),
        reason: reason.into(),
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(invalid("tau", format!("must lie in (0, 1), got {}", self.tau)));
        }
        if self.budget < 1 {
            return Err(invalid("budget", "must be at least 1"));
        }
        if let Some(f) = self.budget_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(invalid("budget_fraction", format!("must lie in (0, 1], got {f}")));
            }
        }
        if self.start_iter >= self.latest_end_iter {
            return Err(invalid(
                "latest_end_iter",
                format!("must exceed start_iter ({} >= {})", self.start_iter, self.latest_end_iter),
            ));
        }
        if !(self.opacity_lr_scale >= 1.0) {
            return Err(invalid("opacity_lr_scale", "must be >= 1"));
        }
        if self.interval_n == 0 {
            return Err(invalid("interval_n", "must be positive"));
        }
        if !(self.reg_lr.is_finite() && self.reg_lr >= 0.0) {
            return Err(invalid("reg_lr", "must be finite and >= 0"));
        }
        if !self.target_t.is_finite() {
            return Err(invalid("target_t", "must be finite"));
        }
        if !(self.prefree_lr_scale.is_finite() && self.prefree_lr_scale >= 0.0) {
            return Err(invalid("prefree_lr_scale", "must be finite and >= 0"));
        }
        if self.auto_lr && self.auto_lr_target_iters == 0 {
            return Err(invalid("auto_lr_target_iters", "must be positive when auto_lr is on"));
        }
        Ok(())
    }

    /// Budget for a selection that starts with `alive` primitives.
    pub fn resolve_budget(&self, alive: usize) -> usize {
        match self.budget_fraction {
            Some(f) => ((alive as f64 * f).round() as usize).max(1),
            None => self.budget,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = SelectionConfig::default();
        c.validate().unwrap();
        assert_eq!(c.target_t, -20.0);
        assert_eq!(c.tau, 0.001);
        assert_eq!(c.interval_n, 50);
        assert_eq!((c.start_iter, c.latest_end_iter, c.recovery_iters), (15_000, 23_000, 1_000));
        assert_eq!(c.opacity_lr_scale, 4.0);
    }

    #[test]
    fn invariants_are_enforced() {
        let bad = [
            SelectionConfig { tau: 0.0, ..Default::default() },
            SelectionConfig { tau: 1.0, ..Default::default() },
            SelectionConfig { budget: 0, ..Default::default() },
            SelectionConfig { start_iter: 23_000, ..Default::default() },
            SelectionConfig { opacity_lr_scale: 0.5, ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::InvalidConfig { .. })), "{c:?}");
        }
    }

    #[test]
    fn fractional_budget() {
        let c = SelectionConfig {
            budget_fraction: Some(0.25),
            ..Default::default()
        };
        assert_eq!(c.resolve_budget(1001), 250);
        assert_eq!(c.resolve_budget(1), 1);
        assert_eq!(SelectionConfig::default().resolve_budget(5), 1000);
    }
}
