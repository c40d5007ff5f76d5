//! Adaptive-moment parameter updates with per-group learning rates and the
//! selection-phase opacity learning-rate multiplier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::GradientBuffer;
use crate::scene::Scene;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

/// Scalars per primitive: mean(2), log_scale(2), rotation, v, color(3).
pub const PARAMS_PER_PRIMITIVE: usize = 9;

/// Base learning rates per parameter group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    /// Position learning rate in pixels at step 0; decays exponentially.
    pub lr_mean: f64,
    pub lr_mean_final: f64,
    pub lr_mean_decay_iters: u64,
    pub lr_log_scale: f64,
    pub lr_rotation: f64,
    pub lr_opacity: f64,
    pub lr_color: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr_mean: 0.05,
            lr_mean_final: 0.0005,
            lr_mean_decay_iters: 30_000,
            lr_log_scale: 0.005,
            lr_rotation: 0.002,
            lr_opacity: 0.05,
            lr_color: 0.0025,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("optimizer.lr_mean", self.lr_mean),
            ("optimizer.lr_mean_final", self.lr_mean_final),
            ("optimizer.lr_log_scale", self.lr_log_scale),
            ("optimizer.lr_rotation", self.lr_rotation),
            ("optimizer.lr_opacity", self.lr_opacity),
            ("optimizer.lr_color", self.lr_color),
        ];
        for (field, value) in checks {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::InvalidConfig {
                    field: field.into(),
                    reason: format!("learning rate must be finite and >= 0, got {value}"),
                });
            }
        }
        Ok(())
    }

    /// Log-linear interpolation between `lr_mean` and `lr_mean_final`.
    pub fn mean_lr_at(&self, step: u64) -> f64 {
        if self.lr_mean_decay_iters == 0 || self.lr_mean <= 0.0 || self.lr_mean_final <= 0.0 {
            return self.lr_mean;
        }
        let t = (step as f64 / self.lr_mean_decay_iters as f64).min(1.0);
        (self.lr_mean.ln() * (1.0 - t) + self.lr_mean_final.ln() * t).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrPhase {
    Normal,
    Selecting,
    Recovered,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub first: [f64; PARAMS_PER_PRIMITIVE],
    pub second: [f64; PARAMS_PER_PRIMITIVE],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub moments: Vec<Moments>,
    pub step: u64,
    pub config: OptimConfig,
    pub phase: LrPhase,
    pub opacity_lr_scale: f64,
    /// Either 1.0 or `opacity_lr_scale`, depending on `phase`.
    pub opacity_multiplier: f64,
}

impl Default for OptimState {
    fn default() -> Self {
        Self::new(&OptimConfig::default())
    }
}

impl OptimState {
    pub fn new(config: &OptimConfig) -> Self {
        Self {
            moments: Vec::new(),
            step: 0,
            config: config.clone(),
            phase: LrPhase::Normal,
            opacity_lr_scale: 1.0,
            opacity_multiplier: 1.0,
        }
    }

    pub fn with_opacity_lr_scale(mut self, scale: f64) -> Self {
        self.opacity_lr_scale = scale;
        self
    }

    pub(crate) fn resize(&mut self, n: usize) {
        self.moments.resize(n, Moments::default());
    }

    pub fn opacity_lr(&self) -> f64 {
        self.config.lr_opacity * self.opacity_multiplier
    }

    fn group_lrs(&self) -> [f64; PARAMS_PER_PRIMITIVE] {
        let c = &self.config;
        let m = c.mean_lr_at(self.step);
        let o = self.opacity_lr();
        [m, m, c.lr_log_scale, c.lr_log_scale, c.lr_rotation, o, c.lr_color, c.lr_color, c.lr_color]
    }
}

/// Moves the opacity multiplier along `normal -> selecting -> recovered`.
pub fn set_opacity_lr_phase(state: &mut OptimState, phase: LrPhase) -> Result<()> {
    use LrPhase::*;
    match (state.phase, phase) {
        (a, b) if a == b => {}
        (Normal, Selecting) | (Selecting, Recovered) => state.phase = phase,
        (from, to) => return Err(Error::IllegalPhaseTransition { from, to }),
    }
    state.opacity_multiplier = match state.phase {
        Selecting => state.opacity_lr_scale,
        Normal | Recovered => 1.0,
    };
    Ok(())
}

fn check_finite(grads: &GradientBuffer) -> Result<()> {
    let groups: [(&'static str, Box<dyn Fn(usize) -> bool + '_>); 5] = [
        ("mean", Box::new(|i| grads.d_mean[i].iter().all(|x| x.is_finite()))),
        ("log_scale", Box::new(|i| grads.d_log_scale[i].iter().all(|x| x.is_finite()))),
        ("rotation", Box::new(|i| grads.d_rotation[i].is_finite())),
        ("opacity", Box::new(|i| grads.d_v[i].is_finite())),
        ("color", Box::new(|i| grads.d_color[i].iter().all(|x| x.is_finite()))),
    ];
    for i in 0..grads.len() {
        for (group, ok) in &groups {
            if !ok(i) {
                return Err(Error::NonFiniteGradient { group, index: i });
            }
        }
    }
    Ok(())
}

/// One bias-corrected adaptive-moment step over every alive primitive.
///
/// Colors are projected back into `[0, 1]` after the update.
pub fn step(scene: &mut Scene, grads: &GradientBuffer) -> Result<()> {
    if grads.len() != scene.len() || scene.optim.moments.len() != scene.len() {
        return Err(Error::Contract(format!(
            "gradient buffer ({}) / moments ({}) not aligned with scene ({})",
            grads.len(),
            scene.optim.moments.len(),
            scene.len()
        )));
    }
    check_finite(grads)?;

    let state = &mut scene.optim;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    let lrs = state.group_lrs();

    for (i, g) in scene.gaussians.iter_mut().enumerate() {
        if !scene.alive[i] {
            continue;
        }
        let grad = grads.flat(i);
        let mom = &mut state.moments[i];
        let mut params = [
            g.mean[0],
            g.mean[1],
            g.log_scale[0],
            g.log_scale[1],
            g.rotation,
            g.v,
            g.color[0],
            g.color[1],
            g.color[2],
        ];
        for k in 0..PARAMS_PER_PRIMITIVE {
            let m = BETA1 * mom.first[k] + (1.0 - BETA1) * grad[k];
            let s = BETA2 * mom.second[k] + (1.0 - BETA2) * grad[k] * grad[k];
            mom.first[k] = m;
            mom.second[k] = s;
            let m_hat = m / bc1;
            let s_hat = s / bc2;
            params[k] -= lrs[k] * m_hat / (s_hat.sqrt() + EPSILON);
        }
        g.mean = [params[0], params[1]];
        g.log_scale = [params[2], params[3]];
        g.rotation = params[4];
        g.v = params[5];
        g.color = [
            params[6].clamp(0.0, 1.0),
            params[7].clamp(0.0, 1.0),
            params[8].clamp(0.0, 1.0),
        ];
    }
    Ok(())
}
