//! Image-quality metrics and the opacity decay probe.

use crate::error::{Error, Result};
use crate::gaussian::sigmoid;
use crate::image::Image;

/// Reported instead of +inf for identical images.
pub const PSNR_MAX_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    if a.data.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data.len() as f64)
}

pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_MAX_DB);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_MAX_DB))
}

/// Median of `values`; NaN when empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Separable Gaussian window in "valid" placement, or a single uniform window
/// covering the whole image when it is smaller than the kernel.
struct Window {
    taps: Vec<f64>,
    width: usize,
    height: usize,
    global: bool,
}

impl Window {
    fn new(width: usize, height: usize) -> Self {
        let r = (SSIM_WINDOW / 2) as f64;
        let mut taps: Vec<f64> = (0..SSIM_WINDOW)
            .map(|k| {
                let d = k as f64 - r;
                (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
            })
            .collect();
        let s: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= s);
        Self {
            taps,
            width,
            height,
            global: width < SSIM_WINDOW || height < SSIM_WINDOW,
        }
    }

    fn out_dims(&self) -> (usize, usize) {
        if self.global {
            (1, 1)
        } else {
            (self.width - SSIM_WINDOW + 1, self.height - SSIM_WINDOW + 1)
        }
    }

    fn filter(&self, plane: &[f64]) -> Vec<f64> {
        if self.global {
            return vec![plane.iter().sum::<f64>() / plane.len() as f64];
        }
        let (w, h) = (self.width, self.height);
        let (ow, oh) = self.out_dims();
        let k = self.taps.len();
        let mut horiz = vec![0.0; ow * h];
        for y in 0..h {
            let row = &plane[y * w..(y + 1) * w];
            let out = &mut horiz[y * ow..(y + 1) * ow];
            for (j, &t) in self.taps.iter().enumerate() {
                for (o, &p) in out.iter_mut().zip(&row[j..j + ow]) {
                    *o += t * p;
                }
            }
        }
        let mut out = vec![0.0; ow * oh];
        for y in 0..oh {
            let dst = &mut out[y * ow..(y + 1) * ow];
            for j in 0..k {
                let t = self.taps[j];
                let src = &horiz[(y + j) * ow..(y + j + 1) * ow];
                for (o, &p) in dst.iter_mut().zip(src) {
                    *o += t * p;
                }
            }
        }
        out
    }

    /// Adjoint of [`Window::filter`].
    fn filter_transpose(&self, grad: &[f64]) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        if self.global {
            return vec![grad[0] / (w * h) as f64; w * h];
        }
        let (ow, oh) = self.out_dims();
        let mut horiz = vec![0.0; ow * h];
        for y in 0..oh {
            let src = &grad[y * ow..(y + 1) * ow];
            for (j, &t) in self.taps.iter().enumerate() {
                let dst = &mut horiz[(y + j) * ow..(y + j + 1) * ow];
                for (o, &g) in dst.iter_mut().zip(src) {
                    *o += t * g;
                }
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            let src = &horiz[y * ow..(y + 1) * ow];
            let row = &mut out[y * w..(y + 1) * w];
            for (j, &t) in self.taps.iter().enumerate() {
                for (o, &g) in row[j..j + ow].iter_mut().zip(src) {
                    *o += t * g;
                }
            }
        }
        out
    }
}

fn plane(img: &Image, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(3).copied().collect()
}

/// Mean SSIM over windows and channels, plus `d ssim / d a` when requested.
fn ssim_impl(a: &Image, b: &Image, want_grad: bool) -> Result<(f64, Option<Image>)> {
    a.check_same_shape(b)?;
    if a.data.is_empty() {
        return Err(Error::InvalidParameter {
            name: "image",
            reason: "SSIM of an empty image".into(),
        });
    }
    let win = Window::new(a.width, a.height);
    let (ow, oh) = win.out_dims();
    let count = (ow * oh * 3) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Image::new(a.width, a.height));

    for c in 0..3 {
        let pa = plane(a, c);
        let pb = plane(b, c);
        let mu_a = win.filter(&pa);
        let mu_b = win.filter(&pb);
        let e_aa = win.filter(&pa.iter().map(|x| x * x).collect::<Vec<_>>());
        let e_bb = win.filter(&pb.iter().map(|x| x * x).collect::<Vec<_>>());
        let e_ab = win.filter(&pa.iter().zip(&pb).map(|(x, y)| x * y).collect::<Vec<_>>());

        let n = mu_a.len();
        let (mut g_mu, mut g_aa, mut g_ab) = if want_grad {
            (vec![0.0; n], vec![0.0; n], vec![0.0; n])
        } else {
            (Vec::new(), Vec::new(), Vec::new())
        };
        for i in 0..n {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = e_aa[i] - ma * ma;
            let var_b = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            let n1 = 2.0 * ma * mb + SSIM_C1;
            let n2 = 2.0 * cov + SSIM_C2;
            let d1 = ma * ma + mb * mb + SSIM_C1;
            let d2 = var_a + var_b + SSIM_C2;
            let s = (n1 * n2) / (d1 * d2);
            total += s;
            if want_grad {
                g_mu[i] = s * (2.0 * mb / n1 - 2.0 * mb / n2 - 2.0 * ma / d1 + 2.0 * ma / d2) / count;
                g_aa[i] = -s / d2 / count;
                g_ab[i] = 2.0 * s / n2 / count;
            }
        }
        if let Some(grad) = grad.as_mut() {
            let t_mu = win.filter_transpose(&g_mu);
            let t_aa = win.filter_transpose(&g_aa);
            let t_ab = win.filter_transpose(&g_ab);
            for p in 0..pa.len() {
                grad.data[p * 3 + c] = t_mu[p] + 2.0 * pa[p] * t_aa[p] + pb[p] * t_ab[p];
            }
        }
    }
    Ok((total / count, grad))
}

/// Windowed SSIM: 11x11 Gaussian window (sigma 1.5), `L = 1`, mean over all
/// fully-contained windows and channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    Ok(ssim_impl(a, b, false)?.0)
}

/// SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Image)> {
    let (s, g) = ssim_impl(a, b, true)?;
    Ok((s, g.expect("gradient requested")))
}

/// Per-primitive decay ratio `(alpha_before - alpha_after) / alpha_before`;
/// `None` where the earlier opacity is zero.
pub fn decay_probe(v_before: &[f64], v_after: &[f64]) -> Result<Vec<Option<f64>>> {
    if v_before.len() != v_after.len() {
        return Err(Error::ShapeMismatch {
            expected: v_before.len().to_string(),
            actual: v_after.len().to_string(),
        });
    }
    Ok(v_before
        .iter()
        .zip(v_after)
        .map(|(&b, &a)| {
            let ab = sigmoid(b);
            if ab == 0.0 || !ab.is_finite() {
                None
            } else {
                Some((ab - sigmoid(a)) / ab)
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::logit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |_, _, _| rng.gen::<f64>())
    }

    #[test]
    fn psnr_reference_values() {
        let a = Image::filled(4, 3, 0.3);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_MAX_DB);
        assert_eq!(psnr(&Image::filled(4, 3, 0.0), &Image::filled(4, 3, 1.0)).unwrap(), 0.0);
        let b = Image::filled(4, 3, 0.4);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &Image::new(3, 3)).is_err());
    }

    #[test]
    fn psnr_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_image(&mut rng, 9, 6);
        let b = random_image(&mut rng, 9, 6);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn ssim_identity_symmetry_and_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_image(&mut rng, 20, 16);
        let b = random_image(&mut rng, 20, 16);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        let neg = Image {
            data: a.data.iter().map(|x| 1.0 - x).collect(),
            ..a.clone()
        };
        assert!(ssim(&a, &neg).unwrap() < 0.0);
    }

    #[test]
    fn ssim_small_images_use_one_global_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_image(&mut rng, 8, 8);
        let b = random_image(&mut rng, 8, 8);
        // brute-force global statistics
        let mut total = 0.0;
        for c in 0..3 {
            let xs: Vec<f64> = a.data.iter().skip(c).step_by(3).copied().collect();
            let ys: Vec<f64> = b.data.iter().skip(c).step_by(3).copied().collect();
            let n = xs.len() as f64;
            let mx = xs.iter().sum::<f64>() / n;
            let my = ys.iter().sum::<f64>() / n;
            let vx = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n;
            let vy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n;
            let cxy = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n;
            total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        assert!((ssim(&a, &b).unwrap() - total / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for (w, h) in [(8, 8), (14, 13)] {
            let a = random_image(&mut rng, w, h);
            let b = random_image(&mut rng, w, h);
            let (_, g) = ssim_with_grad(&a, &b).unwrap();
            for idx in (0..a.data.len()).step_by(7) {
                let step = 1e-5;
                let mut p = a.clone();
                p.data[idx] += step;
                let mut m = a.clone();
                m.data[idx] -= step;
                let fd = (ssim(&p, &b).unwrap() - ssim(&m, &b).unwrap()) / (2.0 * step);
                let err = (fd - g.data[idx]).abs() / fd.abs().max(g.data[idx].abs()).max(1e-6);
                assert!(err < 1e-5, "{w}x{h} idx {idx}: fd {fd} vs {}", g.data[idx]);
            }
        }
    }

    #[test]
    fn decay_probe_examples() {
        let r = decay_probe(&[0.3, 0.0], &[0.3, logit(0.25)]).unwrap();
        assert_eq!(r[0], Some(0.0));
        assert!((r[1].unwrap() - 0.5).abs() < 1e-12);
        let missing = decay_probe(&[f64::NEG_INFINITY], &[0.0]).unwrap();
        assert_eq!(missing[0], None);
        assert!(decay_probe(&[0.0], &[]).is_err());
    }

    #[test]
    fn decay_probe_follows_taylor_law_for_small_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..500 {
            let v: f64 = rng.gen_range(-6.0..6.0);
            let dv: f64 = -rng.gen_range(1e-4..2e-2);
            let r = decay_probe(&[v], &[v + dv]).unwrap()[0].unwrap();
            let alpha = sigmoid(v);
            assert!((r - (1.0 - alpha) * dv.abs()).abs() <= 0.7 * dv * dv);
        }
    }
}
