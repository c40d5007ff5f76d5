//! The training loop: densification, selection (or a baseline one-shot prune),
//! recovery and fine-tuning.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Mode, RunConfig};
use crate::baselines::{accumulate_render_weights, prune_by_opacity, prune_by_render_weight};
use crate::densify::{densify_step, init_scene, GradStats};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::loss::compute_loss_with;
use crate::metrics::{psnr, ssim};
use crate::optimizer::{self, OptimState};
use crate::render::{render_backward_with, render_with, GradientBuffer, ViewTransform};
use crate::report::TrainReport;
use crate::scene::Scene;
use crate::selection::{apply_pressure, pressure_due, reg_loss, selection_tick, Phase, SelectionState};

/// One supervised view: how the canvas maps into it, and its target image.
#[derive(Clone, Debug)]
pub struct Target {
    pub view: ViewTransform,
    pub image: Image,
}

/// Builds training targets from canvas-sized images and view specs.
pub fn build_targets(images: &[Image], config: &RunConfig) -> Result<Vec<Target>> {
    let Some(first) = images.first() else {
        return Err(Error::InvalidConfig {
            field: "images".into(),
            reason: "at least one image is required".into(),
        });
    };
    let mut targets = Vec::new();
    for img in images {
        if !img.same_shape(first) {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", first.width, first.height),
                actual: format!("{}x{}", img.width, img.height),
            });
        }
        for spec in &config.views {
            let [x, y, w, h] = spec.crop.unwrap_or([0, 0, img.width, img.height]);
            let image = img.crop(x, y, w, h)?.flipped(spec.flip_x, spec.flip_y);
            let view = ViewTransform {
                origin: [x as f64, y as f64],
                width: w,
                height: h,
                flip_x: spec.flip_x,
                flip_y: spec.flip_y,
            };
            targets.push(Target { view, image });
        }
    }
    Ok(targets)
}

/// Loads, downsamples and validates the images named by `config`.
pub fn load_images(config: &RunConfig) -> Result<Vec<Image>> {
    config
        .images
        .iter()
        .map(|p| Image::load_png(p).map(|img| img.downsample(config.downsample)))
        .collect()
}

/// Everything needed to compare runs without rerunning them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub seed: u64,
    pub images: Vec<String>,
    pub width: usize,
    pub height: usize,
    pub total_iters: u64,
    pub iterations_run: u64,
    pub psnr: f64,
    pub ssim: f64,
    pub l_render: f64,
    pub initial_count: usize,
    pub post_densify_count: Option<usize>,
    pub final_count: usize,
    pub budget: usize,
    pub target_t: f64,
    pub reg_lr: f64,
    pub final_reg_lr: f64,
    pub selection_started_at: Option<u64>,
    pub completed_at: Option<u64>,
    /// Iterations from selection start to budget.
    pub completion_iters: Option<u64>,
    pub fallback_fired: bool,
    pub fallback_removed: usize,
    pub mean_alpha_at_completion: Option<f64>,
    pub mean_alpha_after_recovery: Option<f64>,
    pub final_mean_alpha: f64,
    /// Iterations after completion until the mean opacity first reaches 95% of
    /// its final value (log resolution).
    pub recovery_reach_iters: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Milestones {
    pub post_densify_count: Option<usize>,
    pub mean_alpha_at_completion: Option<f64>,
    pub mean_alpha_after_recovery: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: RunConfig,
    pub targets: Vec<Target>,
    pub canvas: (usize, usize),
    pub scene: Scene,
    pub selection: SelectionState,
    pub stats: GradStats,
    pub rng: ChaCha8Rng,
    /// Next iteration to run.
    pub iteration: u64,
    pub log: Vec<TrainReport>,
    pub milestones: Milestones,
    pub initial_count: usize,
    last_loss: f64,
    last_psnr: f64,
    elapsed_s: f64,
}

impl Trainer {
    /// Trains against `images` (one canvas, all the same size) seen through
    /// the configured views.
    pub fn new(config: RunConfig, images: &[Image]) -> Result<Self> {
        config.validate(false)?;
        let targets = build_targets(images, &config)?;
        let reference = &images[0];
        let canvas = (reference.width, reference.height);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let optim = OptimState::new(&config.optimizer).with_opacity_lr_scale(config.selection.opacity_lr_scale);
        let scene = init_scene(reference, config.densify.init_count, &config.densify, optim, &mut rng);
        let stats = GradStats::new(scene.len());
        let selection = SelectionState::new(&config.selection);
        let initial_count = scene.len();
        Ok(Self {
            config,
            targets,
            canvas,
            scene,
            selection,
            stats,
            rng,
            iteration: 0,
            log: Vec::new(),
            milestones: Milestones::default(),
            initial_count,
            last_loss: f64::NAN,
            last_psnr: f64::NAN,
            elapsed_s: 0.0,
        })
    }

    /// Loads the configured images and builds a trainer.
    pub fn from_config(config: RunConfig) -> Result<Self> {
        config.validate(true)?;
        let images = load_images(&config)?;
        Self::new(config, &images)
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.config.total_iters
            || (self.config.stop_at_completion && self.selection.completed_at.is_some())
    }

    /// Forward + backward over every target, averaged. Returns the gradients,
    /// the accumulated rendering weights, the mean loss and the mean PSNR.
    fn evaluate(&self) -> Result<(GradientBuffer, Vec<f64>, f64, f64)> {
        let n = self.scene.len();
        let mut grads = GradientBuffer::zeros(n);
        let mut weights = vec![0.0; n];
        let (mut loss, mut quality) = (0.0, 0.0);
        let opts = &self.config.render;
        for t in &self.targets {
            let moved;
            let gaussians = if t.view.is_identity() {
                &self.scene.gaussians
            } else {
                moved = self.scene.gaussians.iter().map(|g| t.view.apply(g)).collect::<Vec<_>>();
                &moved
            };
            let out = render_with(gaussians, &self.scene.alive, t.view.width, t.view.height, opts);
            let lv = compute_loss_with(&out.image, &t.image, &self.config.loss)?;
            if !lv.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    iteration: self.iteration,
                });
            }
            let mut g = render_backward_with(gaussians, &out, &lv.d_image)?;
            t.view.pull_back(&mut g);
            grads.accumulate(&g);
            for (w, x) in weights.iter_mut().zip(&out.per_gaussian_weight) {
                *w += x;
            }
            loss += lv.total;
            quality += psnr(&out.image, &t.image)?;
        }
        let k = self.targets.len() as f64;
        grads.scale(1.0 / k);
        Ok((grads, weights, loss / k, quality / k))
    }

    fn budget(&self) -> usize {
        if self.selection.started_at.is_some() {
            self.selection.budget
        } else {
            self.config.selection.resolve_budget(self.scene.alive_count())
        }
    }

    /// Runs one iteration. On a non-finite loss the scene is left untouched.
    pub fn step(&mut self) -> Result<()> {
        let started = Instant::now();
        let it = self.iteration;
        let (mut grads, weights, loss, quality) = self.evaluate()?;
        self.last_loss = loss;
        self.last_psnr = quality;

        let densify_until = self.config.densify_until();
        if it >= self.config.densify.from_iter && it < densify_until {
            let pixels = self.canvas.0 * self.canvas.1;
            self.stats.record(&grads, &self.scene.alive, pixels);
        }

        let prior = self.config.mode.prior();
        if let Some(prior) = prior {
            self.config.selection.prior_mode = prior;
            if pressure_due(&self.selection, &self.config.selection, it) {
                apply_pressure(
                    &self.scene,
                    &mut self.selection,
                    &self.config.selection,
                    &mut grads,
                    it,
                    &mut self.rng,
                )?;
            }
        }

        optimizer::step(&mut self.scene, &grads)?;

        if prior.is_some() {
            let ev = selection_tick(&mut self.scene, &mut self.selection, &self.config.selection, it, Some(&weights))?;
            if ev.started {
                self.milestones.post_densify_count = Some(self.scene.alive_count());
            }
            if ev.completed {
                self.milestones.mean_alpha_at_completion = Some(self.scene.mean_alpha());
            }
            if ev.finished_recovery {
                self.milestones.mean_alpha_after_recovery = Some(self.scene.mean_alpha());
            }
        } else {
            self.baseline_tick(it)?;
        }

        if it >= self.config.densify.from_iter
            && it < densify_until
            && it > 0
            && it % self.config.densify.interval == 0
        {
            let scene = std::mem::take(&mut self.scene);
            let cap = self.config.densify_cap();
            self.scene = densify_step(scene, &mut self.stats, &self.config.densify, cap, &mut self.rng);
        }

        self.scene.iteration = it + 1;
        self.iteration = it + 1;
        if it % self.config.log_interval == 0 || self.is_finished() {
            self.push_log_row(it);
        }
        self.elapsed_s += started.elapsed().as_secs_f64();
        Ok(())
    }

    /// One-shot pruning for the baseline modes, bookkept like a selection
    /// that completes the moment it starts.
    fn baseline_tick(&mut self, it: u64) -> Result<()> {
        let cfg = &self.config.selection;
        if it == cfg.start_iter {
            let alive = self.scene.alive_count();
            let budget = cfg.resolve_budget(alive).min(alive);
            self.milestones.post_densify_count = Some(alive);
            self.selection.started_at = Some(it);
            self.selection.budget = budget;
            self.selection.phase = Phase::Inactive;
            let scene = std::mem::take(&mut self.scene);
            let stochastic = self.config.baseline_stochastic;
            self.scene = match self.config.mode {
                Mode::BaselineOpacity => prune_by_opacity(scene, budget, stochastic, &mut self.rng)?,
                Mode::BaselineRender => {
                    let views: Vec<ViewTransform> = self.targets.iter().map(|t| t.view).collect();
                    let w = accumulate_render_weights(&scene, &views, &self.config.render);
                    prune_by_render_weight(scene, &w, budget, stochastic, &mut self.rng)?
                }
                _ => scene,
            };
            if self.config.mode != Mode::NoPrune {
                self.selection.completed_at = Some(it);
                self.selection.phase = Phase::Recovery;
                self.milestones.mean_alpha_at_completion = Some(self.scene.mean_alpha());
            }
            self.selection.phase_started_at = it;
        } else if self.selection.phase == Phase::Recovery
            && self.selection.completed_at.is_some_and(|c| it >= c + cfg.recovery_iters)
        {
            self.selection.phase = Phase::Done;
            self.selection.phase_started_at = it;
            self.milestones.mean_alpha_after_recovery = Some(self.scene.mean_alpha());
        }
        Ok(())
    }

    fn push_log_row(&mut self, it: u64) {
        let t = self.config.selection.target_t;
        let budget = self.budget();
        self.log.push(TrainReport {
            iteration: it,
            l_render: self.last_loss,
            l_reg: reg_loss(self.scene.mean_v(), t),
            psnr: self.last_psnr,
            alive_count: self.scene.alive_count(),
            mean_alpha: self.scene.mean_alpha(),
            boundary_alpha: self.scene.ranked_alpha(budget).unwrap_or(0.0),
            current_reg_lr: self.selection.effective_reg_lr(&self.config.selection),
            phase: self.selection.phase.as_str().to_string(),
        });
        let r = self.log.last().expect("just pushed");
        log::info!(
            "it {:>6} {:<12} alive {:>6} psnr {:.3} mean_alpha {:.4} boundary {:.5} reg_lr {:.3e}",
            r.iteration,
            r.phase,
            r.alive_count,
            r.psnr,
            r.mean_alpha,
            r.boundary_alpha,
            r.current_reg_lr
        );
    }

    /// Runs until `iteration` (exclusive) or until the run is finished.
    pub fn run_to(&mut self, iteration: u64) -> Result<()> {
        while self.iteration < iteration && !self.is_finished() {
            self.step()?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_to(self.config.total_iters)
    }

    /// Renders the canvas-aligned view of every target.
    pub fn render_targets(&self) -> Vec<Image> {
        self.targets
            .iter()
            .map(|t| {
                let gs: Vec<_> = self.scene.gaussians.iter().map(|g| t.view.apply(g)).collect();
                render_with(&gs, &self.scene.alive, t.view.width, t.view.height, &self.config.render).image
            })
            .collect()
    }

    /// Canvas render (first target's view).
    pub fn render_canvas(&self) -> Image {
        let (w, h) = self.canvas;
        render_with(&self.scene.gaussians, &self.scene.alive, w, h, &self.config.render).image
    }

    pub fn summary(&self) -> Result<RunSummary> {
        let renders = self.render_targets();
        let k = self.targets.len() as f64;
        let mut q = 0.0;
        let mut s = 0.0;
        let mut l = 0.0;
        for (r, t) in renders.iter().zip(&self.targets) {
            q += psnr(r, &t.image)?;
            s += ssim(r, &t.image)?;
            l += compute_loss_with(r, &t.image, &self.config.loss)?.total;
        }
        let sel = &self.selection;
        let final_mean_alpha = self.scene.mean_alpha();
        let recovery_reach_iters = sel.completed_at.and_then(|c| {
            self.log
                .iter()
                .find(|r| r.iteration >= c && r.mean_alpha >= 0.95 * final_mean_alpha)
                .map(|r| r.iteration - c)
        });
        Ok(RunSummary {
            mode: self.config.mode,
            seed: self.config.seed,
            images: self.config.images.iter().map(|p| p.display().to_string()).collect(),
            width: self.canvas.0,
            height: self.canvas.1,
            total_iters: self.config.total_iters,
            iterations_run: self.iteration,
            psnr: q / k,
            ssim: s / k,
            l_render: l / k,
            initial_count: self.initial_count,
            post_densify_count: self.milestones.post_densify_count,
            final_count: self.scene.alive_count(),
            budget: self.budget(),
            target_t: self.config.selection.target_t,
            reg_lr: self.config.selection.reg_lr,
            final_reg_lr: sel.current_reg_lr,
            selection_started_at: sel.started_at,
            completed_at: sel.completed_at,
            completion_iters: sel.completed_at.zip(sel.started_at).map(|(c, s)| c - s),
            fallback_fired: sel.fallback_fired,
            fallback_removed: sel.fallback_removed,
            mean_alpha_at_completion: self.milestones.mean_alpha_at_completion,
            mean_alpha_after_recovery: self.milestones.mean_alpha_after_recovery,
            final_mean_alpha,
            recovery_reach_iters,
            wall_time_s: (!self.config.reproducible).then_some(self.elapsed_s),
        })
    }

    pub fn elapsed_s(&self) -> f64 {
        self.elapsed_s
    }
}
