//! The primitive set together with its optimizer state.

use serde::{Deserialize, Serialize};

use crate::gaussian::Gaussian2D;
use crate::optimizer::OptimState;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub gaussians: Vec<Gaussian2D>,
    pub alive: Vec<bool>,
    pub optim: OptimState,
    pub iteration: u64,
}

impl Scene {
    pub fn new(gaussians: Vec<Gaussian2D>, optim: OptimState) -> Self {
        let n = gaussians.len();
        let mut optim = optim;
        optim.resize(n);
        Self {
            gaussians,
            alive: vec![true; n],
            optim,
            iteration: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn alive_count(&self) -> usize {
        self.alive.iter().filter(|&&a| a).count()
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.gaussians.iter().map(Gaussian2D::alpha).collect()
    }

    /// Mean activated opacity over alive primitives (0 for an empty scene).
    pub fn mean_alpha(&self) -> f64 {
        let (sum, n) = self
            .gaussians
            .iter()
            .zip(&self.alive)
            .filter(|(_, &a)| a)
            .fold((0.0, 0usize), |(s, n), (g, _)| (s + g.alpha(), n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Mean pre-activation opacity over alive primitives.
    pub fn mean_v(&self) -> f64 {
        let (sum, n) = self
            .gaussians
            .iter()
            .zip(&self.alive)
            .filter(|(_, &a)| a)
            .fold((0.0, 0usize), |(s, n), (g, _)| (s + g.v, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Alpha of the `rank`-th most opaque alive primitive (1-based), clamped to
    /// the alive range.
    pub fn ranked_alpha(&self, rank: usize) -> Option<f64> {
        let mut alphas: Vec<f64> = self
            .gaussians
            .iter()
            .zip(&self.alive)
            .filter(|(_, &a)| a)
            .map(|(g, _)| g.alpha())
            .collect();
        if alphas.is_empty() {
            return None;
        }
        let k = rank.clamp(1, alphas.len()) - 1;
        alphas.select_nth_unstable_by(k, |a, b| b.total_cmp(a));
        Some(alphas[k])
    }

    /// Appends a primitive with fresh (zero) optimizer moments.
    pub fn push(&mut self, g: Gaussian2D) {
        self.gaussians.push(g);
        self.alive.push(true);
        self.optim.resize(self.gaussians.len());
    }
}

/// [`compact_scene`] for a scene held by mutable reference.
pub fn compact_in_place(scene: &mut Scene) {
    let taken = std::mem::take(scene);
    *scene = compact_scene(taken);
}

/// Drops dead primitives together with their optimizer moments, keeping the
/// survivors in their original order.
pub fn compact_scene(scene: Scene) -> Scene {
    if scene.alive.iter().all(|&a| a) {
        return scene;
    }
    let Scene {
        gaussians,
        alive,
        mut optim,
        iteration,
    } = scene;
    let moments = std::mem::take(&mut optim.moments);
    let mut kept_g = Vec::with_capacity(gaussians.len());
    let mut kept_m = Vec::with_capacity(gaussians.len());
    for ((g, m), a) in gaussians.into_iter().zip(moments).zip(&alive) {
        if *a {
            kept_g.push(g);
            kept_m.push(m);
        }
    }
    optim.moments = kept_m;
    let n = kept_g.len();
    Scene {
        gaussians: kept_g,
        alive: vec![true; n],
        optim,
        iteration,
    }
}
