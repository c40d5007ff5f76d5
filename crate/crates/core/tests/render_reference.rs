//! The tiled renderer against a direct per-pixel compositor.

use proptest::prelude::*;
use splatsel::gaussian::{conic_of, sigmoid, Gaussian2D};
use splatsel::render::{render_with, RenderOptions, ALPHA_CLAMP, MIN_TRANSMITTANCE};

fn reference(gs: &[Gaussian2D], w: usize, h: usize, cutoff: f64) -> (Vec<f64>, Vec<f64>) {
    let mut order: Vec<usize> = (0..gs.len()).collect();
    order.sort_by(|&a, &b| gs[a].layer.total_cmp(&gs[b].layer).then(a.cmp(&b)));
    let mut img = vec![0.0; w * h * 3];
    let mut weight = vec![0.0; gs.len()];
    for y in 0..h {
        for x in 0..w {
            let mut t = 1.0;
            for &i in &order {
                let g = &gs[i];
                let [a, b, c] = conic_of(g.log_scale, g.rotation);
                let dx = x as f64 + 0.5 - g.mean[0];
                let dy = y as f64 + 0.5 - g.mean[1];
                let maha = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
                if maha > cutoff * cutoff {
                    continue;
                }
                let alpha = (sigmoid(g.v) * (-0.5 * maha).exp()).min(ALPHA_CLAMP);
                for k in 0..3 {
                    img[3 * (y * w + x) + k] += t * alpha * g.color[k];
                }
                weight[i] += t * alpha;
                t *= 1.0 - alpha;
                if t < MIN_TRANSMITTANCE {
                    break;
                }
            }
        }
    }
    (img, weight)
}

fn gaussian(w: f64, h: f64) -> impl Strategy<Value = Gaussian2D> {
    (
        (-4.0..w + 4.0, -4.0..h + 4.0),
        (-3.0f64..3.5, -3.0f64..3.5),
        -3.2f64..3.2,
        -4.0f64..8.0,
        (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0),
        0.0f64..1.0,
    )
        .prop_map(|((mx, my), (sx, sy), rotation, v, (r, g, b), layer)| Gaussian2D {
            mean: [mx, my],
            log_scale: [sx, sy],
            rotation,
            v,
            color: [r, g, b],
            layer,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn tiled_render_matches_per_pixel_compositing(
        (w, h, gs) in (1usize..48, 1usize..40).prop_flat_map(|(w, h)| {
            (Just(w), Just(h), prop::collection::vec(gaussian(w as f64, h as f64), 0..14))
        }),
        tile in 1usize..20,
        cutoff in prop::sample::select(vec![3.0, 5.0]),
    ) {
        let opts = RenderOptions { cutoff_sigma: cutoff, tile_size: tile };
        let out = render_with(&gs, &vec![true; gs.len()], w, h, &opts);
        let (img, weight) = reference(&gs, w, h, cutoff);
        for (a, b) in out.image.data.iter().zip(&img) {
            prop_assert!((a - b).abs() < 1e-9, "pixel {a} vs {b}");
        }
        for (a, b) in out.per_gaussian_weight.iter().zip(&weight) {
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + b), "weight {a} vs {b}");
        }
    }
}
