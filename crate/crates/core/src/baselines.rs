//! One-shot pruning comparators: keep `B` primitives ranked (or sampled) by
//! opacity or by accumulated rendering weight.

use rand::Rng;

use crate::error::{Error, Result};
use crate::render::{render_with, RenderOptions, ViewTransform};
use crate::scene::{compact_scene, Scene};

fn check_budget(scene: &Scene, budget: usize) -> Result<()> {
    let alive = scene.alive_count();
    if budget > alive {
        return Err(Error::Contract(format!("budget {budget} exceeds alive count {alive}")));
    }
    Ok(())
}

/// Keeps the `budget` alive primitives with the largest score. Sampling mode
/// draws them without replacement with probability proportional to score.
/// Ties are broken by layer key so the survivors do not depend on storage order.
pub fn prune_by_score<R: Rng + ?Sized>(
    scene: Scene,
    scores: &[f64],
    budget: usize,
    stochastic: bool,
    rng: &mut R,
) -> Result<Scene> {
    check_budget(&scene, budget)?;
    if scores.len() != scene.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} scores", scene.len()),
            actual: format!("{}", scores.len()),
        });
    }
    let mut keyed: Vec<(f64, usize)> = (0..scene.len())
        .filter(|&i| scene.alive[i])
        .map(|i| {
            let w = scores[i].max(0.0);
            let key = if stochastic {
                // Efraimidis-Spirakis: top-k of u^(1/w) is a weighted sample
                // without replacement
                let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                if w > 0.0 {
                    u.ln() / w
                } else {
                    f64::NEG_INFINITY
                }
            } else {
                w
            };
            (key, i)
        })
        .collect();
    let layers: Vec<f64> = scene.gaussians.iter().map(|g| g.layer).collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(layers[a.1].total_cmp(&layers[b.1])));
    let mut scene = scene;
    for &(_, i) in &keyed[budget..] {
        scene.alive[i] = false;
    }
    Ok(compact_scene(scene))
}

pub fn prune_by_opacity<R: Rng + ?Sized>(scene: Scene, budget: usize, stochastic: bool, rng: &mut R) -> Result<Scene> {
    let scores = scene.alphas();
    prune_by_score(scene, &scores, budget, stochastic, rng)
}

/// `weights` must be accumulated over all training views, see
/// [`accumulate_render_weights`].
pub fn prune_by_render_weight<R: Rng + ?Sized>(
    scene: Scene,
    weights: &[f64],
    budget: usize,
    stochastic: bool,
    rng: &mut R,
) -> Result<Scene> {
    prune_by_score(scene, weights, budget, stochastic, rng)
}

/// Sum of per-primitive rendering weights over the given views.
pub fn accumulate_render_weights(scene: &Scene, views: &[ViewTransform], opts: &RenderOptions) -> Vec<f64> {
    let mut total = vec![0.0; scene.len()];
    for view in views {
        let out = if view.is_identity() {
            render_with(&scene.gaussians, &scene.alive, view.width, view.height, opts)
        } else {
            let moved: Vec<_> = scene.gaussians.iter().map(|g| view.apply(g)).collect();
            render_with(&moved, &scene.alive, view.width, view.height, opts)
        };
        for (t, w) in total.iter_mut().zip(&out.per_gaussian_weight) {
            *t += w;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{logit, Gaussian2D};
    use crate::optimizer::OptimState;
    use proptest::prelude::{prop_assert_eq, proptest};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn blob(mean: [f64; 2], sigma: f64, alpha: f64, layer: f64) -> Gaussian2D {
        Gaussian2D {
            mean,
            log_scale: [sigma.ln(); 2],
            rotation: 0.0,
            v: logit(alpha),
            color: [0.7, 0.2, 0.4],
            layer,
        }
    }

    fn scene_of(gs: Vec<Gaussian2D>) -> Scene {
        Scene::new(gs, OptimState::default())
    }

    #[test]
    fn opacity_ranking() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = scene_of(vec![
            blob([1.0, 1.0], 1.0, 0.9, 0.0),
            blob([2.0, 1.0], 1.0, 0.5, 1.0),
            blob([3.0, 1.0], 1.0, 0.1, 2.0),
        ]);
        let same = prune_by_opacity(s.clone(), 3, false, &mut rng).unwrap();
        assert_eq!(same, s);
        let kept = prune_by_opacity(s.clone(), 2, false, &mut rng).unwrap();
        assert_eq!(kept.gaussians, s.gaussians[..2].to_vec());
        assert!(matches!(prune_by_opacity(s, 4, false, &mut rng), Err(Error::Contract(_))));
    }

    #[test]
    fn stochastic_opacity_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = scene_of(vec![blob([1.0, 1.0], 1.0, 0.8, 0.0), blob([2.0, 1.0], 1.0, 0.2, 1.0)]);
        let trials = 10_000;
        let mut first = 0;
        for _ in 0..trials {
            let kept = prune_by_opacity(s.clone(), 1, true, &mut rng).unwrap();
            if kept.gaussians[0].mean[0] == 1.0 {
                first += 1;
            }
        }
        let f = first as f64 / trials as f64;
        assert!((f - 0.8).abs() < 0.02, "{f}");
    }

    #[test]
    fn occluded_primitive_goes_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // two opaque large blobs in front drive transmittance under the
        // early-stop floor, hiding the small one behind them
        let mut s = scene_of(vec![
            blob([8.0, 8.0], 1.0, 0.5, 2.0),
            blob([8.0, 8.0], 400.0, 0.5, 0.0),
            blob([8.0, 8.0], 400.0, 0.5, 0.5),
            blob([3.0, 3.0], 1.5, 0.6, 1.0),
        ]);
        s.gaussians[1].v = 50.0;
        s.gaussians[2].v = 50.0;
        let w = accumulate_render_weights(&s, &[ViewTransform::identity(16, 16)], &RenderOptions::default());
        assert_eq!(w[0], 0.0);
        let kept = prune_by_render_weight(s.clone(), &w, 3, false, &mut rng).unwrap();
        assert_eq!(kept.gaussians, s.gaussians[1..].to_vec());
    }

    #[test]
    fn weights_match_pixel_loop() {
        let gs = vec![
            blob([4.0, 5.0], 2.0, 0.6, 0.3),
            blob([6.0, 4.0], 1.5, 0.4, 0.1),
            blob([5.0, 6.5], 3.0, 0.3, 0.7),
        ];
        let s = scene_of(gs.clone());
        let w = accumulate_render_weights(&s, &[ViewTransform::identity(10, 10)], &RenderOptions::default());
        let mut order: Vec<usize> = (0..gs.len()).collect();
        order.sort_by(|&a, &b| gs[a].layer.total_cmp(&gs[b].layer));
        let mut brute = vec![0.0; gs.len()];
        for y in 0..10 {
            for x in 0..10 {
                let mut t = 1.0;
                for &i in &order {
                    let g = &gs[i];
                    let sig = g.log_scale[0].exp();
                    let dx = x as f64 + 0.5 - g.mean[0];
                    let dy = y as f64 + 0.5 - g.mean[1];
                    let m = (dx * dx + dy * dy) / (sig * sig);
                    if m > 9.0 {
                        continue;
                    }
                    let a = (g.alpha() * (-0.5 * m).exp()).min(0.999);
                    brute[i] += t * a;
                    t *= 1.0 - a;
                }
            }
        }
        for (a, b) in w.iter().zip(&brute) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    proptest! {
        #[test]
        fn deterministic_pruning_is_order_invariant(seed in 0u64..500, budget in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gs: Vec<Gaussian2D> = (0..12)
                .map(|i| {
                    // coarse opacities so ties actually occur
                    let a = 0.1 * rng.gen_range(1..5) as f64;
                    blob([rng.gen_range(0.0..16.0), rng.gen_range(0.0..16.0)], 2.0, a, i as f64)
                })
                .collect();
            let mut shuffled = gs.clone();
            shuffled.shuffle(&mut rng);
            let key = |s: &Scene| {
                let mut l: Vec<f64> = s.gaussians.iter().map(|g| g.layer).collect();
                l.sort_by(f64::total_cmp);
                l
            };
            let a = prune_by_opacity(scene_of(gs.clone()), budget, false, &mut rng).unwrap();
            let b = prune_by_opacity(scene_of(shuffled.clone()), budget, false, &mut rng).unwrap();
            prop_assert_eq!(a.alive_count(), budget);
            prop_assert_eq!(key(&a), key(&b));

            let view = [ViewTransform::identity(16, 16)];
            let opts = RenderOptions::default();
            let sa = scene_of(gs);
            let sb = scene_of(shuffled);
            let wa = accumulate_render_weights(&sa, &view, &opts);
            let wb = accumulate_render_weights(&sb, &view, &opts);
            let a = prune_by_render_weight(sa, &wa, budget, false, &mut rng).unwrap();
            let b = prune_by_render_weight(sb, &wb, budget, false, &mut rng).unwrap();
            prop_assert_eq!(a.alive_count(), budget);
            prop_assert_eq!(key(&a), key(&b));
        }
    }
}
