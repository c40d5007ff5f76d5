//! Rendering loss `L1 + w * (1 - SSIM)` and its pixel gradient.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::Image;
use crate::metrics::ssim_with_grad;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub ssim_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { ssim_weight: 0.2 }
    }
}

#[derive(Clone, Debug)]
pub struct LossValue {
    pub total: f64,
    pub l1: f64,
    pub ssim: Option<f64>,
    pub d_image: Image,
}

pub fn compute_loss(rendered: &Image, target: &Image) -> Result<(f64, Image)> {
    let v = compute_loss_with(rendered, target, &LossConfig::default())?;
    Ok((v.total, v.d_image))
}

pub fn compute_loss_with(rendered: &Image, target: &Image, cfg: &LossConfig) -> Result<LossValue> {
    rendered.check_same_shape(target)?;
    let n = rendered.data.len().max(1) as f64;
    let mut d_image = Image::new(rendered.width, rendered.height);
    let mut l1 = 0.0;
    for ((d, &r), &t) in d_image.data.iter_mut().zip(&rendered.data).zip(&target.data) {
        let diff = r - t;
        l1 += diff.abs();
        *d = if diff > 0.0 {
            1.0 / n
        } else if diff < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    l1 /= n;

    let mut total = l1;
    let mut ssim_value = None;
    if cfg.ssim_weight != 0.0 && !rendered.data.is_empty() {
        let (s, g) = ssim_with_grad(rendered, target)?;
        total += cfg.ssim_weight * (1.0 - s);
        for (d, gs) in d_image.data.iter_mut().zip(&g.data) {
            *d -= cfg.ssim_weight * gs;
        }
        ssim_value = Some(s);
    }
    Ok(LossValue {
        total,
        l1,
        ssim: ssim_value,
        d_image,
    })
}
