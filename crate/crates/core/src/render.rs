//! Front-to-back alpha compositing of 2D Gaussians and its analytic adjoint.
//!
//! Per pixel `p` (pixel centers at half-integer coordinates), primitives are
//! visited in ascending layer order:
//!
//! ```text
//! a_i   = min(alpha_i * exp(-0.5 d^T Sigma_i^-1 d), ALPHA_CLAMP),  d = p - mean_i
//! C(p) += T_i * a_i * c_i
//! T_i+1 = T_i * (1 - a_i)          stop once T_i+1 < MIN_TRANSMITTANCE
//! ```
//!
//! Primitives are only evaluated inside their `cutoff_sigma` ellipse. The
//! image is split into square tiles; each tile owns a depth-ordered list of the
//! primitives whose bounding box touches it. Backward replays the evaluations
//! recorded by forward back to front, recovering `T_i = T_i+1 / (1 - a_i)` from
//! the stored final transmittance; accumulation order is fixed, so results are
//! reproducible bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{conic_of, sigmoid, Gaussian2D};
use crate::image::Image;
use crate::optimizer::PARAMS_PER_PRIMITIVE;
use crate::scene::Scene;

pub const ALPHA_CLAMP: f64 = 0.999;
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Largest `Sigma^-1_xx` for which the forward pass evaluates the falloff by
/// recurrence along rows instead of one `exp` per pixel.
const MAX_RECURRENCE_CONIC: f64 = 16.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderOptions {
    /// Support radius in standard deviations.
    pub cutoff_sigma: f64,
    pub tile_size: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            cutoff_sigma: 3.0,
            tile_size: 16,
        }
    }
}

impl RenderOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff_sigma.is_finite() && self.cutoff_sigma > 0.0) {
            return Err(Error::InvalidConfig {
                field: "render.cutoff_sigma".into(),
                reason: "must be finite and positive".into(),
            });
        }
        if self.tile_size == 0 {
            return Err(Error::InvalidConfig {
                field: "render.tile_size".into(),
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Per-primitive gradients, index-aligned with the scene.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientBuffer {
    pub d_mean: Vec<[f64; 2]>,
    pub d_log_scale: Vec<[f64; 2]>,
    pub d_rotation: Vec<f64>,
    pub d_v: Vec<f64>,
    pub d_color: Vec<[f64; 3]>,
}

impl GradientBuffer {
    pub fn zeros(n: usize) -> Self {
        Self {
            d_mean: vec![[0.0; 2]; n],
            d_log_scale: vec![[0.0; 2]; n],
            d_rotation: vec![0.0; n],
            d_v: vec![0.0; n],
            d_color: vec![[0.0; 3]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.d_v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_v.is_empty()
    }

    /// Gradient of primitive `i` in optimizer parameter order.
    pub fn flat(&self, i: usize) -> [f64; PARAMS_PER_PRIMITIVE] {
        let m = self.d_mean[i];
        let s = self.d_log_scale[i];
        let c = self.d_color[i];
        [m[0], m[1], s[0], s[1], self.d_rotation[i], self.d_v[i], c[0], c[1], c[2]]
    }

    /// Element-wise `self += other`.
    pub fn accumulate(&mut self, other: &GradientBuffer) {
        for i in 0..self.len() {
            for k in 0..2 {
                self.d_mean[i][k] += other.d_mean[i][k];
                self.d_log_scale[i][k] += other.d_log_scale[i][k];
            }
            self.d_rotation[i] += other.d_rotation[i];
            self.d_v[i] += other.d_v[i];
            for k in 0..3 {
                self.d_color[i][k] += other.d_color[i][k];
            }
        }
    }

    pub fn scale(&mut self, f: f64) {
        for i in 0..self.len() {
            for k in 0..2 {
                self.d_mean[i][k] *= f;
                self.d_log_scale[i][k] *= f;
            }
            self.d_rotation[i] *= f;
            self.d_v[i] *= f;
            for k in 0..3 {
                self.d_color[i][k] *= f;
            }
        }
    }
}

#[derive(Clone, Debug)]
struct Splat {
    index: usize,
    mean: [f64; 2],
    conic: [f64; 3],
    alpha: f64,
    color: [f64; 3],
    /// Pixel range `[x0, x1) x [y0, y1)` whose centers can be inside the cutoff.
    bbox: [usize; 4],
}

#[derive(Clone, Debug)]
struct Prepared {
    splats: Vec<Splat>,
    tiles_x: usize,
    tile_lists: Vec<Vec<u32>>,
    num_primitives: usize,
    cutoff_sq: f64,
    tile_size: usize,
    /// Sum of cutoff-ellipse areas clipped to bounding boxes.
    eval_estimate: usize,
}

/// Composited image plus per-primitive contribution statistics.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub image: Image,
    /// Sum over pixels of `T_i * a_i`.
    pub per_gaussian_weight: Vec<f64>,
    /// Largest single-pixel `T_i * a_i`.
    pub per_gaussian_max_contrib: Vec<f64>,
    prepared: Prepared,
    composite: Composite,
}

fn prepare(
    gaussians: &[Gaussian2D],
    alive: &[bool],
    width: usize,
    height: usize,
    opts: &RenderOptions,
) -> Prepared {
    let mut order: Vec<usize> = (0..gaussians.len()).filter(|&i| alive[i]).collect();
    order.sort_by(|&a, &b| gaussians[a].layer.total_cmp(&gaussians[b].layer).then(a.cmp(&b)));

    let tile = opts.tile_size.max(1);
    let tiles_x = width.div_ceil(tile);
    let tiles_y = height.div_ceil(tile);
    let mut tile_lists = vec![Vec::new(); tiles_x * tiles_y];
    let mut splats = Vec::with_capacity(order.len());
    let mut eval_estimate = 0.0;

    for i in order {
        let g = &gaussians[i];
        // axis-aligned extent of the cutoff ellipse: c * sqrt(Sigma_xx), c * sqrt(Sigma_yy)
        let (sn, cs) = g.rotation.sin_cos();
        let (v1, v2) = ((2.0 * g.log_scale[0]).exp(), (2.0 * g.log_scale[1]).exp());
        let rx = opts.cutoff_sigma * (cs * cs * v1 + sn * sn * v2).sqrt();
        let ry = opts.cutoff_sigma * (sn * sn * v1 + cs * cs * v2).sqrt();
        // pixel x covers center x + 0.5
        let lo_x = (g.mean[0] - rx - 0.5).ceil().max(0.0);
        let hi_x = (g.mean[0] + rx - 0.5).floor() + 1.0;
        let lo_y = (g.mean[1] - ry - 0.5).ceil().max(0.0);
        let hi_y = (g.mean[1] + ry - 0.5).floor() + 1.0;
        if !(lo_x < width as f64 && lo_y < height as f64 && hi_x > lo_x && hi_y > lo_y) {
            continue;
        }
        let bbox = [
            lo_x as usize,
            lo_y as usize,
            (hi_x as usize).min(width),
            (hi_y as usize).min(height),
        ];
        if bbox[2] <= bbox[0] || bbox[3] <= bbox[1] {
            continue;
        }
        let box_area = ((bbox[2] - bbox[0]) * (bbox[3] - bbox[1])) as f64;
        eval_estimate += box_area.min(std::f64::consts::PI * rx * ry);
        let s = splats.len() as u32;
        for ty in bbox[1] / tile..=(bbox[3] - 1) / tile {
            for tx in bbox[0] / tile..=(bbox[2] - 1) / tile {
                tile_lists[ty * tiles_x + tx].push(s);
            }
        }
        splats.push(Splat {
            index: i,
            mean: g.mean,
            conic: conic_of(g.log_scale, g.rotation),
            alpha: sigmoid(g.v),
            color: g.color,
            bbox,
        });
    }

    Prepared {
        splats,
        tiles_x,
        tile_lists,
        num_primitives: gaussians.len(),
        cutoff_sq: opts.cutoff_sigma * opts.cutoff_sigma,
        tile_size: tile,
        eval_estimate: eval_estimate as usize,
    }
}

impl Prepared {
    fn tile_pixels(&self, t: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let tx = t % self.tiles_x;
        let ty = t / self.tiles_x;
        let x0 = tx * self.tile_size;
        let y0 = ty * self.tile_size;
        (x0, y0, (x0 + self.tile_size).min(width), (y0 + self.tile_size).min(height))
    }
}

/// Column and row ranges of tile `(x0, y0, x1, y1)` covered by splat `s`.
#[inline(always)]
fn overlap(s: &Splat, x0: usize, y0: usize, x1: usize, y1: usize) -> Option<(usize, usize, usize, usize)> {
    let (ax, ay) = (s.bbox[0].max(x0), s.bbox[1].max(y0));
    let (bx, by) = (s.bbox[2].min(x1), s.bbox[3].min(y1));
    (ax < bx && ay < by).then_some((ax, ay, bx, by))
}

/// Columns of row `dy` (relative to the mean) whose centers may fall inside
/// the cutoff ellipse, widened by one pixel on each side and clipped to
/// `[ax, bx)`. The exact membership test is still done per pixel.
#[inline(always)]
fn row_span(s: &Splat, dy: f64, cutoff_sq: f64, ax: usize, bx: usize) -> Option<(usize, usize)> {
    let [ca, cb, cc] = s.conic;
    let disc = dy * dy * (cb * cb - ca * cc) + ca * cutoff_sq;
    if disc < 0.0 {
        return None;
    }
    let cx = s.mean[0] - cb * dy / ca;
    let half = disc.sqrt() / ca;
    let lo = (cx - half - 0.5).ceil() - 1.0;
    let hi = (cx + half - 0.5).floor() + 2.0;
    let lo = if lo > ax as f64 { lo as usize } else { ax };
    let hi = if hi < bx as f64 { hi.max(0.0) as usize } else { bx };
    (lo < hi).then_some((lo, hi))
}

/// Per-pixel compositing state needed by the backward pass.
#[derive(Clone, Debug)]
struct Composite {
    /// Transmittance left after the last visited primitive.
    final_trans: Vec<f64>,
    /// Every (primitive, pixel) evaluation in forward order; the backward pass
    /// replays exactly this set.
    evals: Vec<Eval>,
    /// Per tile, start offsets into `evals` for each list position plus an end
    /// sentinel.
    segs: Vec<Vec<u32>>,
}

#[derive(Clone, Copy, Debug)]
struct Eval {
    x: u32,
    y: u32,
    /// Unscaled Gaussian falloff `exp(-0.5 maha)`.
    g: f64,
}

pub fn render(scene: &Scene, width: usize, height: usize) -> RenderOutput {
    render_with(&scene.gaussians, &scene.alive, width, height, &RenderOptions::default())
}

pub fn render_with(
    gaussians: &[Gaussian2D],
    alive: &[bool],
    width: usize,
    height: usize,
    opts: &RenderOptions,
) -> RenderOutput {
    assert_eq!(gaussians.len(), alive.len(), "alive mask not aligned with primitives");
    let prepared = prepare(gaussians, alive, width, height, opts);
    let mut image = Image::new(width, height);
    let n = gaussians.len();
    let mut weight = vec![0.0; n];
    let mut max_contrib = vec![0.0f64; n];
    let mut composite = Composite {
        final_trans: vec![1.0; width * height],
        evals: Vec::with_capacity(prepared.eval_estimate),
        segs: Vec::with_capacity(prepared.tile_lists.len()),
    };
    let cutoff_sq = prepared.cutoff_sq;
    let mut saturated = vec![false; width * height];

    // splat-major inside each tile: every primitive only touches the pixels
    // of its own bounding box, in depth order per pixel
    for (t, list) in prepared.tile_lists.iter().enumerate() {
        let mut seg = Vec::with_capacity(list.len() + 1);
        let (x0, y0, x1, y1) = prepared.tile_pixels(t, width, height);
        let mut active = (x1 - x0) * (y1 - y0);
        // unsaturated pixels per tile row
        let mut row_active = vec![x1 - x0; y1 - y0];
        for &si in list {
            seg.push(eval_offset(&composite.evals));
            if active == 0 {
                continue;
            }
            let s = &prepared.splats[si as usize];
            let Some((ax, ay, bx, by)) = overlap(s, x0, y0, x1, y1) else {
                continue;
            };
            let [ca, cb, cc] = s.conic;
            // along a row exp(-maha/2) is geometric with a geometrically
            // shrinking ratio; only used where neither factor can over- or
            // underflow
            let recurrence = ca <= MAX_RECURRENCE_CONIC;
            let shrink = (-ca).exp();
            let (mut w_sum, mut w_max) = (0.0, 0.0f64);
            for y in ay..by {
                if row_active[y - y0] == 0 {
                    continue;
                }
                let dy = y as f64 + 0.5 - s.mean[1];
                let Some((sx, ex)) = row_span(s, dy, cutoff_sq, ax, bx) else {
                    continue;
                };
                let row = y * width;
                let dx0 = sx as f64 + 0.5 - s.mean[0];
                let mut g_next = (-0.5 * (ca * dx0 * dx0 + 2.0 * cb * dx0 * dy + cc * dy * dy)).exp();
                let mut ratio = (-0.5 * (ca * (2.0 * dx0 + 1.0) + 2.0 * cb * dy)).exp();
                for x in sx..ex {
                    let g_rec = g_next;
                    g_next *= ratio;
                    ratio *= shrink;
                    let p = row + x;
                    if saturated[p] {
                        continue;
                    }
                    let dx = x as f64 + 0.5 - s.mean[0];
                    let maha = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy;
                    if maha > cutoff_sq {
                        continue;
                    }
                    let g = if recurrence { g_rec } else { (-0.5 * maha).exp() };
                    composite.evals.push(Eval {
                        x: x as u32,
                        y: y as u32,
                        g,
                    });
                    let a = (s.alpha * g).min(ALPHA_CLAMP);
                    let trans = &mut composite.final_trans[p];
                    let w = *trans * a;
                    let px = &mut image.data[3 * p..3 * p + 3];
                    for k in 0..3 {
                        px[k] += w * s.color[k];
                    }
                    w_sum += w;
                    w_max = w_max.max(w);
                    *trans *= 1.0 - a;
                    if *trans < MIN_TRANSMITTANCE {
                        saturated[p] = true;
                        active -= 1;
                        row_active[y - y0] -= 1;
                    }
                }
            }
            weight[s.index] += w_sum;
            max_contrib[s.index] = max_contrib[s.index].max(w_max);
        }
        seg.push(eval_offset(&composite.evals));
        composite.segs.push(seg);
    }

    RenderOutput {
        image,
        per_gaussian_weight: weight,
        per_gaussian_max_contrib: max_contrib,
        prepared,
        composite,
    }
}

fn eval_offset(evals: &[Eval]) -> u32 {
    u32::try_from(evals.len()).expect("more than u32::MAX primitive-pixel evaluations")
}

/// Exact gradients of a scalar loss given `d_image = dL/dC`.
pub fn render_backward(scene: &Scene, output: &RenderOutput, d_image: &Image) -> Result<GradientBuffer> {
    render_backward_with(&scene.gaussians, output, d_image)
}

pub fn render_backward_with(
    gaussians: &[Gaussian2D],
    output: &RenderOutput,
    d_image: &Image,
) -> Result<GradientBuffer> {
    let prep = &output.prepared;
    if prep.num_primitives != gaussians.len() {
        return Err(Error::Contract(format!(
            "render output was produced for {} primitives, scene has {}",
            prep.num_primitives,
            gaussians.len()
        )));
    }
    output.image.check_same_shape(d_image).map_err(|_| {
        Error::Contract(format!(
            "d_image is {}x{}, render output is {}x{}",
            d_image.width, d_image.height, output.image.width, output.image.height
        ))
    })?;
    let width = d_image.width;
    let Composite { evals, segs, .. } = &output.composite;

    // [d_mean_x, d_mean_y, d_conic_a, d_conic_b, d_conic_c, d_alpha, d_r, d_g, d_b]
    let mut acc = vec![[0.0f64; 9]; prep.splats.len()];
    // per pixel: transmittance in front of the current primitive (unwound
    // back to front) and dL/dT of the transmittance behind it
    let mut trans = output.composite.final_trans.clone();
    let mut d_trans_next = vec![0.0f64; trans.len()];

    for (list, seg) in prep.tile_lists.iter().zip(segs) {
        for (pos, &si) in list.iter().enumerate().rev() {
            let run = &evals[seg[pos] as usize..seg[pos + 1] as usize];
            if run.is_empty() {
                continue;
            }
            let s = &prep.splats[si as usize];
            let [ca, cb, cc] = s.conic;
            let dc_c = s.color;
            let mut gacc = acc[si as usize];
            for e in run {
                let p = e.y as usize * width + e.x as usize;
                let dc = &d_image.data[3 * p..3 * p + 3];
                if dc[0] == 0.0 && dc[1] == 0.0 && dc[2] == 0.0 {
                    continue;
                }
                let dx = e.x as f64 + 0.5 - s.mean[0];
                let dy = e.y as f64 + 0.5 - s.mean[1];
                let g = e.g;
                let raw = s.alpha * g;
                let clamped = raw > ALPHA_CLAMP;
                let a = if clamped { ALPHA_CLAMP } else { raw };
                let t_i = trans[p] / (1.0 - a);
                trans[p] = t_i;
                let w = t_i * a;
                let dc_dot_c = dc[0] * dc_c[0] + dc[1] * dc_c[1] + dc[2] * dc_c[2];
                for k in 0..3 {
                    gacc[6 + k] += dc[k] * w;
                }
                let dtn = d_trans_next[p];
                let d_a = t_i * dc_dot_c - dtn * t_i;
                d_trans_next[p] = a * dc_dot_c + dtn * (1.0 - a);
                if clamped {
                    continue;
                }
                gacc[5] += d_a * g;
                // power = -0.5 * maha, g = exp(power)
                let d_power = d_a * s.alpha * g;
                gacc[0] += d_power * (ca * dx + cb * dy);
                gacc[1] += d_power * (cb * dx + cc * dy);
                gacc[2] += d_power * (-0.5 * dx * dx);
                gacc[3] += d_power * (-dx * dy);
                gacc[4] += d_power * (-0.5 * dy * dy);
            }
            acc[si as usize] = gacc;
        }
    }

    let mut out = GradientBuffer::zeros(gaussians.len());
    for (s, a) in prep.splats.iter().zip(&acc) {
        let g = &gaussians[s.index];
        let i = s.index;
        out.d_mean[i] = [a[0], a[1]];
        let (sn, cs) = g.rotation.sin_cos();
        let q1 = (-2.0 * g.log_scale[0]).exp();
        let q2 = (-2.0 * g.log_scale[1]).exp();
        let (da, db, dcc) = (a[2], a[3], a[4]);
        out.d_log_scale[i] = [
            -2.0 * q1 * (da * cs * cs + db * cs * sn + dcc * sn * sn),
            -2.0 * q2 * (da * sn * sn - db * cs * sn + dcc * cs * cs),
        ];
        out.d_rotation[i] = da * 2.0 * cs * sn * (q2 - q1)
            + db * (cs * cs - sn * sn) * (q1 - q2)
            + dcc * 2.0 * cs * sn * (q1 - q2);
        out.d_v[i] = a[5] * s.alpha * (1.0 - s.alpha);
        out.d_color[i] = [a[6], a[7], a[8]];
    }
    Ok(out)
}

/// Maps canvas coordinates into a cropped and/or mirrored view.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ViewTransform {
    pub origin: [f64; 2],
    pub width: usize,
    pub height: usize,
    pub flip_x: bool,
    pub flip_y: bool,
}

impl ViewTransform {
    pub fn identity(width: usize, height: usize) -> Self {
        Self {
            origin: [0.0, 0.0],
            width,
            height,
            flip_x: false,
            flip_y: false,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.origin == [0.0, 0.0] && !self.flip_x && !self.flip_y
    }

    fn rotation_sign(&self) -> f64 {
        if self.flip_x != self.flip_y {
            -1.0
        } else {
            1.0
        }
    }

    pub fn apply(&self, g: &Gaussian2D) -> Gaussian2D {
        let mut x = g.mean[0] - self.origin[0];
        let mut y = g.mean[1] - self.origin[1];
        if self.flip_x {
            x = self.width as f64 - x;
        }
        if self.flip_y {
            y = self.height as f64 - y;
        }
        Gaussian2D {
            mean: [x, y],
            rotation: g.rotation * self.rotation_sign(),
            ..*g
        }
    }

    /// Pulls view-space gradients back to canvas parameters in place.
    pub fn pull_back(&self, grads: &mut GradientBuffer) {
        let sx = if self.flip_x { -1.0 } else { 1.0 };
        let sy = if self.flip_y { -1.0 } else { 1.0 };
        let sr = self.rotation_sign();
        for i in 0..grads.len() {
            grads.d_mean[i][0] *= sx;
            grads.d_mean[i][1] *= sy;
            grads.d_rotation[i] *= sr;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::{OptimConfig, OptimState};

    fn scene_of(gs: Vec<Gaussian2D>) -> Scene {
        Scene::new(gs, OptimState::new(&OptimConfig::default()))
    }

    fn blob(mean: [f64; 2], sigma: f64, v: f64, color: [f64; 3], layer: f64) -> Gaussian2D {
        Gaussian2D {
            mean,
            log_scale: [sigma.ln(); 2],
            rotation: 0.0,
            v,
            color,
            layer,
        }
    }

    #[test]
    fn opaque_white_at_its_mean_is_clamped() {
        let s = scene_of(vec![blob([2.5, 2.5], 1.0, 50.0, [1.0; 3], 0.0)]);
        let out = render(&s, 5, 5);
        assert_eq!(out.image.pixel(2, 2), [ALPHA_CLAMP; 3]);
    }

    #[test]
    fn two_half_opaque_layers_compose() {
        // very wide blobs so the falloff at the pixel is ~1
        let s = scene_of(vec![
            blob([0.5, 0.5], 1e6, 0.0, [1.0; 3], 0.0),
            blob([0.5, 0.5], 1e6, 0.0, [1.0; 3], 1.0),
        ]);
        let out = render(&s, 1, 1);
        assert!((out.image.pixel(0, 0)[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn empty_scene_is_black() {
        let s = scene_of(vec![]);
        let out = render(&s, 7, 3);
        assert!(out.image.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_order_decides_visibility() {
        let red = blob([1.5, 1.5], 100.0, 50.0, [1.0, 0.0, 0.0], 0.0);
        let blue = blob([1.5, 1.5], 100.0, 50.0, [0.0, 0.0, 1.0], 1.0);
        let out = render(&scene_of(vec![blue, red]), 3, 3);
        let p = out.image.pixel(1, 1);
        assert!(p[0] > 0.99 && p[2] < 0.01);
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let s = scene_of(vec![
            blob([2.0, 3.0], 1.5, 0.3, [0.2, 0.5, 0.9], 0.0),
            blob([4.0, 1.0], 2.0, -0.5, [0.7, 0.1, 0.3], 1.0),
        ]);
        let out = render(&s, 8, 8);
        let g = render_backward(&s, &out, &Image::new(8, 8)).unwrap();
        assert_eq!(g, GradientBuffer::zeros(2));
    }

    #[test]
    fn primitive_without_support_gets_exactly_zero() {
        let s = scene_of(vec![
            blob([4.0, 4.0], 1.5, 0.3, [0.2, 0.5, 0.9], 0.0),
            blob([-500.0, 900.0], 0.01, 2.0, [1.0; 3], 1.0),
        ]);
        let out = render(&s, 8, 8);
        let d = Image::filled(8, 8, 1.0);
        let g = render_backward(&s, &out, &d).unwrap();
        assert_eq!(g.flat(1), [0.0; PARAMS_PER_PRIMITIVE]);
        assert!(g.flat(0).iter().any(|&x| x != 0.0));
        assert_eq!(out.per_gaussian_weight[1], 0.0);
    }

    #[test]
    fn mismatched_shapes_are_contract_violations() {
        let s = scene_of(vec![blob([2.0, 2.0], 1.0, 0.0, [1.0; 3], 0.0)]);
        let out = render(&s, 4, 4);
        assert!(matches!(
            render_backward(&s, &out, &Image::new(5, 4)),
            Err(Error::Contract(_))
        ));
        let bigger = scene_of(vec![s.gaussians[0], s.gaussians[0]]);
        assert!(matches!(
            render_backward(&bigger, &out, &Image::new(4, 4)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn dead_primitives_do_not_render() {
        let mut s = scene_of(vec![
            blob([2.0, 2.0], 1.0, 0.0, [1.0; 3], 0.0),
            blob([2.0, 2.0], 1.0, 0.0, [1.0; 3], 1.0),
        ]);
        let both = render(&s, 4, 4).image;
        s.alive[1] = false;
        let one = render(&s, 4, 4).image;
        assert!(both.data.iter().zip(&one.data).any(|(a, b)| a != b));
    }

    #[test]
    fn negligible_primitive_barely_changes_pixels() {
        let base = vec![
            blob([3.0, 3.0], 2.0, 0.5, [0.3, 0.6, 0.9], 0.0),
            blob([5.0, 2.0], 1.5, 1.0, [0.9, 0.2, 0.1], 2.0),
        ];
        let mut with = base.clone();
        with.push(blob([4.0, 4.0], 3.0, crate::gaussian::logit(0.9e-6), [1.0; 3], 1.0));
        let a = render(&scene_of(base), 8, 8).image;
        let b = render(&scene_of(with), 8, 8).image;
        let worst = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn flipped_view_matches_flipped_image() {
        let gs = vec![
            Gaussian2D {
                mean: [3.2, 5.1],
                log_scale: [0.9, 0.2],
                rotation: 0.6,
                v: 0.4,
                color: [0.9, 0.3, 0.1],
                layer: 0.0,
            },
            blob([6.0, 2.0], 1.3, -0.2, [0.1, 0.8, 0.4], 1.0),
        ];
        let alive = vec![true; 2];
        let opts = RenderOptions::default();
        let canvas = render_with(&gs, &alive, 9, 7, &opts).image;
        for (fx, fy) in [(true, false), (false, true), (true, true)] {
            let view = ViewTransform {
                flip_x: fx,
                flip_y: fy,
                ..ViewTransform::identity(9, 7)
            };
            let moved: Vec<_> = gs.iter().map(|g| view.apply(g)).collect();
            let img = render_with(&moved, &alive, 9, 7, &opts).image;
            let want = canvas.flipped(fx, fy);
            for (a, b) in img.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
