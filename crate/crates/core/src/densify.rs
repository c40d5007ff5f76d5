//! Scene initialization and clone/split densification ahead of selection.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::gaussian::{logit, Gaussian2D};
use crate::image::Image;
use crate::optimizer::OptimState;
use crate::render::GradientBuffer;
use crate::scene::{compact_scene, Scene};

pub const INIT_ALPHA: f64 = 0.1;
/// Opacity floor applied while densifying.
pub const PRUNE_ALPHA: f64 = 0.005;
const LAYER_JITTER: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensifyConfig {
    pub init_count: usize,
    /// Initial isotropic sigma as a multiple of `diagonal / sqrt(init_count)`.
    pub init_scale_factor: f64,
    pub from_iter: u64,
    /// Defaults to the selection start when unset.
    pub until_iter: Option<u64>,
    pub interval: u64,
    /// Threshold on the mean positional gradient norm (pixel-sum loss units).
    pub grad_threshold: f64,
    /// Primitives with a larger max sigma (pixels) are split instead of cloned.
    pub clone_max_sigma: f64,
    pub split_factor: f64,
    /// Hard cap on the primitive count; see `RunConfig::densify_cap` for the default.
    pub cap: Option<usize>,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            init_count: 500,
            init_scale_factor: 1.0,
            from_iter: 500,
            until_iter: None,
            interval: 100,
            grad_threshold: 0.5,
            clone_max_sigma: 2.0,
            split_factor: 1.6,
            cap: None,
        }
    }
}

/// Running positional-gradient statistics, index-aligned with the scene.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradStats {
    pub accum: Vec<f64>,
    pub count: Vec<u32>,
}

impl GradStats {
    pub fn new(n: usize) -> Self {
        Self {
            accum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    /// Adds `|dL/dmean|`, rescaled from the mean-over-pixels loss to a
    /// pixel-sum loss so the threshold does not depend on resolution.
    pub fn record(&mut self, grads: &GradientBuffer, alive: &[bool], pixel_count: usize) {
        self.resize(grads.len());
        for (i, d) in grads.d_mean.iter().enumerate() {
            if alive[i] {
                self.accum[i] += (d[0] * d[0] + d[1] * d[1]).sqrt() * pixel_count as f64;
                self.count[i] += 1;
            }
        }
    }

    pub fn resize(&mut self, n: usize) {
        self.accum.resize(n, 0.0);
        self.count.resize(n, 0);
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.accum[i] / self.count[i] as f64
        }
    }
}

/// `n0` primitives at stratified positions with colors looked up in `target`.
pub fn init_scene<R: Rng + ?Sized>(
    target: &Image,
    n0: usize,
    config: &DensifyConfig,
    optim: OptimState,
    rng: &mut R,
) -> Scene {
    let n0 = n0.max(1);
    let (w, h) = (target.width as f64, target.height as f64);
    let diag = (w * w + h * h).sqrt();
    let sigma = config.init_scale_factor * diag / (n0 as f64).sqrt();

    let cols = ((n0 as f64 * w / h).sqrt().ceil() as usize).max(1);
    let rows = n0.div_ceil(cols);
    let mut cells: Vec<usize> = (0..cols * rows).collect();
    // keep a random subset of cells when the grid has spares
    for i in (1..cells.len()).rev() {
        let j = rng.gen_range(0..=i);
        cells.swap(i, j);
    }
    cells.truncate(n0);
    cells.sort_unstable();

    let (cw, ch) = (w / cols as f64, h / rows as f64);
    let gaussians = cells
        .into_iter()
        .map(|cell| {
            let mean = if n0 == 1 {
                [w / 2.0, h / 2.0]
            } else {
                let (cx, cy) = ((cell % cols) as f64, (cell / cols) as f64);
                [(cx + rng.gen::<f64>()) * cw, (cy + rng.gen::<f64>()) * ch]
            };
            let px = (mean[0].floor() as usize).min(target.width - 1);
            let py = (mean[1].floor() as usize).min(target.height - 1);
            Gaussian2D {
                mean,
                log_scale: [sigma.ln(); 2],
                rotation: 0.0,
                v: logit(INIT_ALPHA),
                color: target.pixel(px, py),
                layer: rng.gen::<f64>(),
            }
        })
        .collect();
    Scene::new(gaussians, optim)
}

fn jitter_layer<R: Rng + ?Sized>(layer: f64, rng: &mut R) -> f64 {
    layer + rng.gen_range(-LAYER_JITTER..LAYER_JITTER)
}

/// Clone small and split large high-gradient primitives, then drop the ones
/// below the densification opacity floor. Resets `stats`.
pub fn densify_step<R: Rng + ?Sized>(
    scene: Scene,
    stats: &mut GradStats,
    config: &DensifyConfig,
    cap: usize,
    rng: &mut R,
) -> Scene {
    let mut scene = scene;
    stats.resize(scene.len());
    let n = scene.len();

    let mut candidates: Vec<(f64, usize)> = (0..n)
        .filter(|&i| scene.alive[i])
        .map(|i| (stats.mean(i), i))
        .filter(|&(g, _)| g > config.grad_threshold)
        .collect();
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut room = cap.saturating_sub(scene.alive_count());
    for (_, i) in candidates {
        if room == 0 {
            break;
        }
        let parent = scene.gaussians[i];
        if parent.max_sigma() <= config.clone_max_sigma {
            scene.push(Gaussian2D {
                layer: jitter_layer(parent.layer, rng),
                ..parent
            });
        } else {
            let (sn, cs) = parent.rotation.sin_cos();
            let s = [parent.log_scale[0].exp(), parent.log_scale[1].exp()];
            let shrink = config.split_factor.ln();
            scene.alive[i] = false;
            for _ in 0..2 {
                let z = [
                    rng.sample::<f64, _>(StandardNormal) * s[0],
                    rng.sample::<f64, _>(StandardNormal) * s[1],
                ];
                let offset = [cs * z[0] - sn * z[1], sn * z[0] + cs * z[1]];
                scene.push(Gaussian2D {
                    mean: [parent.mean[0] + offset[0], parent.mean[1] + offset[1]],
                    log_scale: [parent.log_scale[0] - shrink, parent.log_scale[1] - shrink],
                    layer: jitter_layer(parent.layer, rng),
                    ..parent
                });
            }
        }
        room -= 1;
    }

    for (g, a) in scene.gaussians.iter().zip(scene.alive.iter_mut()) {
        if g.alpha() < PRUNE_ALPHA {
            *a = false;
        }
    }
    let scene = compact_scene(scene);
    *stats = GradStats::new(scene.len());
    scene
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::OptimConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn target() -> Image {
        Image::from_fn(32, 24, |x, y, c| ((x * 3 + y * 5 + c * 7) % 17) as f64 / 16.0)
    }

    fn fresh(n0: usize) -> Scene {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        init_scene(&target(), n0, &DensifyConfig::default(), OptimState::new(&OptimConfig::default()), &mut rng)
    }

    #[test]
    fn single_primitive_is_centered() {
        let s = fresh(1);
        assert_eq!(s.len(), 1);
        assert_eq!(s.gaussians[0].mean, [16.0, 12.0]);
        let diag = (32.0f64 * 32.0 + 24.0 * 24.0).sqrt();
        assert!((s.gaussians[0].log_scale[0].exp() - diag).abs() < 1e-9);
    }

    #[test]
    fn init_opacity_and_colors() {
        let img = target();
        let s = fresh(40);
        assert_eq!(s.len(), 40);
        for g in &s.gaussians {
            assert!((g.alpha() - INIT_ALPHA).abs() < 1e-12);
            let p = img.pixel(g.mean[0] as usize, g.mean[1] as usize);
            assert_eq!(g.color, p);
            assert!(g.mean[0] >= 0.0 && g.mean[0] < 32.0 && g.mean[1] >= 0.0 && g.mean[1] < 24.0);
        }
    }

    #[test]
    fn no_candidates_means_no_change() {
        let s = fresh(10);
        let mut stats = GradStats::new(10);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = densify_step(s.clone(), &mut stats, &DensifyConfig::default(), 100, &mut rng);
        assert_eq!(out.gaussians, s.gaussians);
    }

    #[test]
    fn one_small_hot_primitive_is_cloned() {
        let mut s = fresh(10);
        s.gaussians[3].log_scale = [0.0, 0.0];
        let mut stats = GradStats::new(10);
        stats.accum[3] = 10.0;
        stats.count[3] = 1;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = densify_step(s.clone(), &mut stats, &DensifyConfig::default(), 100, &mut rng);
        assert_eq!(out.len(), 11);
        let clone = out.gaussians[10];
        assert_eq!(clone.mean, s.gaussians[3].mean);
        assert!((clone.layer - s.gaussians[3].layer).abs() <= LAYER_JITTER);
        assert_eq!(out.optim.moments.len(), 11);
    }

    #[test]
    fn large_hot_primitive_is_split() {
        let mut s = fresh(10);
        s.gaussians[4].log_scale = [2.0, 1.0];
        let mut stats = GradStats::new(10);
        stats.accum[4] = 10.0;
        stats.count[4] = 1;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = densify_step(s.clone(), &mut stats, &DensifyConfig::default(), 100, &mut rng);
        assert_eq!(out.len(), 11);
        let child = out.gaussians[9];
        assert!((child.log_scale[0] - (2.0 - 1.6f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn cap_is_never_exceeded() {
        let s = fresh(10);
        let mut stats = GradStats::new(10);
        stats.accum.iter_mut().for_each(|a| *a = 1.0);
        stats.count.iter_mut().for_each(|c| *c = 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = densify_step(s, &mut stats, &DensifyConfig::default(), 13, &mut rng);
        assert_eq!(out.len(), 13);
    }

    #[test]
    fn faint_primitives_are_removed() {
        let mut s = fresh(5);
        s.gaussians[2].v = logit(0.004);
        let mut stats = GradStats::new(5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = densify_step(s, &mut stats, &DensifyConfig::default(), 100, &mut rng);
        assert_eq!(out.len(), 4);
    }
}
