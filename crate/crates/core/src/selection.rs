//! Natural-selection pruning.
//!
//! Every `interval_n` iterations a regularization gradient derived from
//! `L_reg = (E[v] - T)^2` is added to the opacity gradient of every alive
//! primitive. It competes with the rendering gradient inside the optimizer;
//! primitives whose opacity falls below `tau` are removed for good. The phase
//! machine runs
//!
//! ```text
//! inactive -> prefree -> finite_prior -> recovery -> done
//! ```
//!
//! where `prefree` uses a compensated field (equal decay ratio for everyone)
//! at a reduced learning rate, and `finite_prior` uses the uniform step on `v`
//! whose decay ratio is approximately `(1 - alpha) * |dv|`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{PriorMode, SelectionConfig};
use crate::error::{Error, Result};
use crate::gaussian::sigmoid;
use crate::metrics::median;
use crate::optimizer::{set_opacity_lr_phase, LrPhase};
use crate::render::GradientBuffer;
use crate::scene::{compact_in_place, compact_scene, Scene};

/// Per-interval multiplier bounds of the automatic learning-rate controller.
pub const AUTO_LR_MIN_FACTOR: f64 = 0.5;
pub const AUTO_LR_MAX_FACTOR: f64 = 2.0;
/// Compensated steps are capped at this multiple of the median step.
pub const COMPENSATION_CAP: f64 = 10.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    #[default]
    Inactive,
    Prefree,
    FinitePrior,
    Recovery,
    Done,
}

impl Phase {
    pub fn applies_pressure(self) -> bool {
        matches!(self, Phase::Prefree | Phase::FinitePrior)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Inactive => "inactive",
            Phase::Prefree => "prefree",
            Phase::FinitePrior => "finite_prior",
            Phase::Recovery => "recovery",
            Phase::Done => "done",
        }
    }
}

/// How a single pressure application distributes `dv` across primitives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PressureLaw {
    /// Same `dv` for everyone.
    Uniform,
    /// `dv_i` chosen so every primitive loses the same fraction of opacity.
    Compensated,
    /// Exempt with probability alpha, compensated otherwise.
    Strong,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearCurve {
    pub start_iter: u64,
    pub start_value: f64,
    pub end_iter: u64,
    pub end_value: f64,
}

impl LinearCurve {
    pub fn value_at(&self, iteration: u64) -> f64 {
        if iteration <= self.start_iter {
            return self.start_value;
        }
        if iteration >= self.end_iter {
            return self.end_value;
        }
        let t = (iteration - self.start_iter) as f64 / (self.end_iter - self.start_iter) as f64;
        self.start_value + (self.end_value - self.start_value) * t
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionState {
    pub phase: Phase,
    pub phase_started_at: u64,
    pub started_at: Option<u64>,
    /// Full-strength field learning rate; the prefree phase scales it down.
    pub current_reg_lr: f64,
    pub e_v: f64,
    pub grad_v: f64,
    pub target_curve: Option<LinearCurve>,
    pub completed_at: Option<u64>,
    pub budget: usize,
    pub fallback_fired: bool,
    pub fallback_removed: usize,
    pub pressure_applications: u64,
}

impl SelectionState {
    pub fn new(config: &SelectionConfig) -> Self {
        Self {
            current_reg_lr: config.reg_lr,
            budget: config.budget,
            ..Default::default()
        }
    }

    pub fn iters_in_phase(&self, iteration: u64) -> u64 {
        iteration.saturating_sub(self.phase_started_at)
    }

    /// Learning rate actually used by the current phase.
    pub fn effective_reg_lr(&self, config: &SelectionConfig) -> f64 {
        match self.phase {
            Phase::Prefree => self.current_reg_lr * config.prefree_lr_scale,
            _ => self.current_reg_lr,
        }
    }

    fn enter(&mut self, phase: Phase, iteration: u64) {
        self.phase = phase;
        self.phase_started_at = iteration;
    }
}

/// Gradient of `(E[v] - T)^2` with respect to `E[v]`.
pub fn reg_gradient(e_v: f64, target_t: f64) -> f64 {
    2.0 * (e_v - target_t)
}

/// Regularization loss `(E[v] - T)^2`.
pub fn reg_loss(e_v: f64, target_t: f64) -> f64 {
    (e_v - target_t) * (e_v - target_t)
}

/// `dv` that scales `sigmoid(v)` by exactly `1 - ratio`.
fn compensated_step(v: f64, ratio: f64) -> f64 {
    // logit(alpha (1 - r)) - logit(alpha) = ln(1 - r) - ln(1 + r e^v)
    (-ratio).ln_1p() - (ratio * v.exp()).ln_1p()
}

fn compensated_deltas(v: &[f64], alive: &[bool], step: f64) -> Vec<f64> {
    let alphas: Vec<f64> = v.iter().zip(alive).filter(|(_, &a)| a).map(|(&v, _)| sigmoid(v)).collect();
    let alpha_med = median(&alphas);
    // decay ratio a median primitive would receive from the uniform step
    let ratio = ((1.0 - alpha_med) * step.max(0.0)).min(0.999);
    let mut deltas: Vec<f64> = v
        .iter()
        .zip(alive)
        .map(|(&v, &a)| if a { compensated_step(v, ratio) } else { 0.0 })
        .collect();
    let mags: Vec<f64> = deltas.iter().zip(alive).filter(|(_, &a)| a).map(|(d, _)| d.abs()).collect();
    let cap = COMPENSATION_CAP * median(&mags);
    for d in &mut deltas {
        if d.abs() > cap {
            *d = -cap;
        }
    }
    deltas
}

/// Per-primitive `dv` delivered by one pressure application; zero for dead
/// primitives. `step = lr * grad_v`.
pub fn pressure_deltas<R: Rng + ?Sized>(
    v: &[f64],
    alive: &[bool],
    step: f64,
    law: PressureLaw,
    rng: &mut R,
) -> Vec<f64> {
    match law {
        PressureLaw::Uniform => alive.iter().map(|&a| if a { -step } else { 0.0 }).collect(),
        PressureLaw::Compensated => compensated_deltas(v, alive, step),
        PressureLaw::Strong => {
            let mut deltas = compensated_deltas(v, alive, step);
            for ((d, &vi), &a) in deltas.iter_mut().zip(v).zip(alive) {
                if a && rng.gen::<f64>() < sigmoid(vi) {
                    *d = 0.0;
                }
            }
            deltas
        }
    }
}

/// Opacity-sampled exemption round used by the strong-prior ablation.
pub fn strong_prior_pressure<R: Rng + ?Sized>(v: &[f64], alive: &[bool], step: f64, rng: &mut R) -> Vec<f64> {
    pressure_deltas(v, alive, step, PressureLaw::Strong, rng)
}

/// What one pressure application did.
#[derive(Clone, Debug, PartialEq)]
pub struct PressureRecord {
    pub iteration: u64,
    pub e_v: f64,
    pub grad_v: f64,
    pub lr: f64,
    pub law: PressureLaw,
    /// Injected `dv` per primitive (the gradient added is `-dv`).
    pub deltas: Vec<f64>,
}

pub fn pressure_law(phase: Phase, mode: PriorMode) -> Option<PressureLaw> {
    match (phase, mode) {
        (Phase::Prefree, _) => Some(PressureLaw::Compensated),
        (Phase::FinitePrior, PriorMode::Finite) => Some(PressureLaw::Uniform),
        (Phase::FinitePrior, PriorMode::None) => Some(PressureLaw::Compensated),
        (Phase::FinitePrior, PriorMode::Strong) => Some(PressureLaw::Strong),
        _ => None,
    }
}

pub fn pressure_due(state: &SelectionState, config: &SelectionConfig, iteration: u64) -> bool {
    state.phase.applies_pressure()
        && state
            .started_at
            .is_some_and(|s| iteration > s && (iteration - s) % config.interval_n == 0)
}

/// Multiplies the field learning rate by `boundary_alpha / curve(iteration)`,
/// clamped to `[0.5, 2]`.
pub fn auto_lr_update(state: &mut SelectionState, boundary_alpha: f64, iteration: u64) {
    let Some(curve) = state.target_curve else {
        return;
    };
    let target = curve.value_at(iteration);
    if !(target > 0.0 && boundary_alpha.is_finite()) {
        return;
    }
    let factor = (boundary_alpha / target).clamp(AUTO_LR_MIN_FACTOR, AUTO_LR_MAX_FACTOR);
    state.current_reg_lr *= factor;
}

/// Computes the field for this interval and adds it to `grads.d_v`.
pub fn apply_pressure<R: Rng + ?Sized>(
    scene: &Scene,
    state: &mut SelectionState,
    config: &SelectionConfig,
    grads: &mut GradientBuffer,
    iteration: u64,
    rng: &mut R,
) -> Result<PressureRecord> {
    let Some(law) = pressure_law(state.phase, config.prior_mode) else {
        return Err(Error::Contract(format!(
            "pressure applied during phase `{}`",
            state.phase.as_str()
        )));
    };
    if grads.len() != scene.len() {
        return Err(Error::Contract("gradient buffer not aligned with scene".into()));
    }
    state.e_v = scene.mean_v();
    state.grad_v = reg_gradient(state.e_v, config.target_t);
    if config.auto_lr && state.phase == Phase::FinitePrior {
        if let Some(boundary) = scene.ranked_alpha(state.budget) {
            auto_lr_update(state, boundary, iteration);
        }
    }
    let lr = state.effective_reg_lr(config);
    let v: Vec<f64> = scene.gaussians.iter().map(|g| g.v).collect();
    let deltas = pressure_deltas(&v, &scene.alive, lr * state.grad_v, law, rng);
    for (d, dv) in grads.d_v.iter_mut().zip(&deltas) {
        *d -= dv;
    }
    state.pressure_applications += 1;
    Ok(PressureRecord {
        iteration,
        e_v: state.e_v,
        grad_v: state.grad_v,
        lr,
        law,
        deltas,
    })
}

/// Removes every primitive with opacity below `tau`.
pub fn cull(scene: Scene, tau: f64) -> Scene {
    let mut scene = scene;
    for (g, a) in scene.gaussians.iter().zip(scene.alive.iter_mut()) {
        if *a && g.alpha() < tau {
            *a = false;
        }
    }
    compact_scene(scene)
}

/// Keeps the `budget` most opaque primitives; ties go to the larger
/// accumulated rendering weight.
pub fn one_shot_prune(scene: &mut Scene, budget: usize, render_weight: Option<&[f64]>) -> usize {
    let mut order: Vec<usize> = (0..scene.len()).filter(|&i| scene.alive[i]).collect();
    if order.len() <= budget {
        return 0;
    }
    let weight = |i: usize| render_weight.and_then(|w| w.get(i).copied()).unwrap_or(0.0);
    order.sort_by(|&a, &b| {
        scene.gaussians[a]
            .alpha()
            .total_cmp(&scene.gaussians[b].alpha())
            .then(weight(a).total_cmp(&weight(b)))
            .then(a.cmp(&b))
    });
    let excess = order.len() - budget;
    for &i in &order[..excess] {
        scene.alive[i] = false;
    }
    compact_in_place(scene);
    excess
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TickEvents {
    pub culled: usize,
    pub started: bool,
    pub completed: bool,
    pub fallback_removed: usize,
    pub finished_recovery: bool,
}

/// End-of-iteration bookkeeping: phase entry and exits, culling on pressure
/// intervals, budget completion and the deadline fallback.
pub fn selection_tick(
    scene: &mut Scene,
    state: &mut SelectionState,
    config: &SelectionConfig,
    iteration: u64,
    render_weight: Option<&[f64]>,
) -> Result<TickEvents> {
    let mut ev = TickEvents::default();
    match state.phase {
        Phase::Inactive => {
            if iteration < config.start_iter {
                return Ok(ev);
            }
            ev.started = true;
            state.started_at = Some(iteration);
            state.budget = config.resolve_budget(scene.alive_count());
            state.current_reg_lr = config.reg_lr;
            set_opacity_lr_phase(&mut scene.optim, LrPhase::Selecting)?;
            if let Some(boundary) = scene.ranked_alpha(state.budget) {
                state.target_curve = Some(LinearCurve {
                    start_iter: iteration,
                    start_value: boundary,
                    end_iter: iteration + config.auto_lr_target_iters,
                    end_value: config.tau,
                });
            }
            if scene.alive_count() <= state.budget {
                state.completed_at = Some(iteration);
                ev.completed = true;
                state.enter(Phase::Recovery, iteration);
            } else if config.prefree_iters > 0 {
                state.enter(Phase::Prefree, iteration);
            } else {
                state.enter(Phase::FinitePrior, iteration);
            }
        }
        Phase::Prefree | Phase::FinitePrior => {
            if pressure_due(state, config, iteration) {
                let before = scene.alive_count();
                let taken = std::mem::take(scene);
                *scene = cull(taken, config.tau);
                ev.culled = before - scene.alive_count();
            }
            if scene.alive_count() <= state.budget {
                state.completed_at = Some(iteration);
                ev.completed = true;
                state.enter(Phase::Recovery, iteration);
            } else if iteration >= config.latest_end_iter {
                ev.fallback_removed = one_shot_prune(scene, state.budget, render_weight);
                state.fallback_fired = true;
                state.fallback_removed = ev.fallback_removed;
                state.completed_at = Some(iteration);
                ev.completed = true;
                state.enter(Phase::Recovery, iteration);
            } else if state.phase == Phase::Prefree && state.iters_in_phase(iteration) >= config.prefree_iters {
                state.enter(Phase::FinitePrior, iteration);
            }
        }
        Phase::Recovery => {
            let done_at = state.completed_at.unwrap_or(state.phase_started_at);
            if iteration >= done_at + config.recovery_iters {
                set_opacity_lr_phase(&mut scene.optim, LrPhase::Recovered)?;
                state.enter(Phase::Done, iteration);
                ev.finished_recovery = true;
            }
        }
        Phase::Done => {}
    }
    Ok(ev)
}
