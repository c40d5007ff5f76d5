//! The 2D Gaussian primitive and its derived quantities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One anisotropic 2D Gaussian.
///
/// Opacity is stored pre-activation (`v`); the rendered opacity is `sigmoid(v)`.
/// Scales are stored as the log of the per-axis standard deviation in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian2D {
    pub mean: [f64; 2],
    pub log_scale: [f64; 2],
    pub rotation: f64,
    pub v: f64,
    pub color: [f64; 3],
    /// Compositing order key; lower keys are in front.
    pub layer: f64,
}

impl Gaussian2D {
    pub fn alpha(&self) -> f64 {
        sigmoid(self.v)
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().all(|x| x.is_finite())
            && self.log_scale.iter().all(|x| x.is_finite())
            && self.rotation.is_finite()
            && self.v.is_finite()
            && self.color.iter().all(|x| x.is_finite())
            && self.layer.is_finite()
    }

    /// Standard deviation along the wider principal axis.
    pub fn max_sigma(&self) -> f64 {
        self.log_scale[0].max(self.log_scale[1]).exp()
    }
}

/// Logistic sigmoid without the range checks of [`activate_opacity`].
#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`] on (0, 1).
#[inline]
pub fn logit(alpha: f64) -> f64 {
    (alpha / (1.0 - alpha)).ln()
}

/// Opacity activation `alpha = 1 / (1 + exp(-v))`.
pub fn activate_opacity(v: f64) -> Result<f64> {
    if !v.is_finite() {
        return Err(Error::InvalidParameter {
            name: "v",
            reason: format!("pre-activation opacity must be finite, got {v}"),
        });
    }
    Ok(sigmoid(v))
}

/// 2x2 covariance `R S S^T R^T` as `[[xx, xy], [xy, yy]]`.
pub fn covariance_of(g: &Gaussian2D) -> Result<[[f64; 2]; 2]> {
    if !(g.log_scale.iter().all(|x| x.is_finite()) && g.rotation.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "covariance",
            reason: "log_scale and rotation must be finite".into(),
        });
    }
    let (s, c) = g.rotation.sin_cos();
    let v1 = (2.0 * g.log_scale[0]).exp();
    let v2 = (2.0 * g.log_scale[1]).exp();
    let xy = c * s * (v1 - v2);
    Ok([[c * c * v1 + s * s * v2, xy], [xy, s * s * v1 + c * c * v2]])
}

/// Inverse covariance `(A, B, C)` for `[[A, B], [B, C]]`, built directly from
/// the rotation and inverse variances so it stays well conditioned.
#[inline]
pub fn conic_of(log_scale: [f64; 2], rotation: f64) -> [f64; 3] {
    let (s, c) = rotation.sin_cos();
    let q1 = (-2.0 * log_scale[0]).exp();
    let q2 = (-2.0 * log_scale[1]).exp();
    [c * c * q1 + s * s * q2, c * s * (q1 - q2), s * s * q1 + c * c * q2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, LN_2};

    fn blob(log_scale: [f64; 2], rotation: f64) -> Gaussian2D {
        Gaussian2D {
            mean: [0.0, 0.0],
            log_scale,
            rotation,
            v: 0.0,
            color: [1.0; 3],
            layer: 0.0,
        }
    }

    #[test]
    fn sigmoid_reference_points() {
        assert_eq!(activate_opacity(0.0).unwrap(), 0.5);
        let lo = activate_opacity(-20.0).unwrap();
        let expected = 1.0 / (1.0 + 20f64.exp());
        assert!((lo - expected).abs() < 1e-24);
        assert!((lo - 2.061e-9).abs() < 1e-12);
        let hi = activate_opacity(20.0).unwrap();
        assert!((hi + lo - 1.0).abs() < 1e-15);
    }

    #[test]
    fn non_finite_v_is_rejected() {
        assert!(activate_opacity(f64::NAN).is_err());
        assert!(activate_opacity(f64::INFINITY).is_err());
    }

    #[test]
    fn sigmoid_derivative_matches_central_difference() {
        for i in -40..=40 {
            let v = i as f64 * 0.37;
            let h = 1e-5;
            // for v > 0 difference 1 - S(v) = S(-v) to avoid cancellation near 1
            let fd = if v > 0.0 {
                (sigmoid(-(v - h)) - sigmoid(-(v + h))) / (2.0 * h)
            } else {
                (sigmoid(v + h) - sigmoid(v - h)) / (2.0 * h)
            };
            let a = sigmoid(v);
            let analytic = a * (1.0 - a);
            let rel = (fd - analytic).abs() / analytic.abs().max(1e-300);
            assert!(rel < 1e-6, "v={v}: rel {rel}");
        }
    }

    #[test]
    fn logit_inverts_sigmoid() {
        for &a in &[1e-6, 0.001, 0.1, 0.5, 0.9, 0.999] {
            assert!((sigmoid(logit(a)) - a).abs() < 1e-15);
        }
    }

    #[test]
    fn covariance_examples() {
        let id = covariance_of(&blob([0.0, 0.0], 0.0)).unwrap();
        assert_eq!(id, [[1.0, 0.0], [0.0, 1.0]]);

        let rot = covariance_of(&blob([LN_2, 0.0], FRAC_PI_2)).unwrap();
        assert!((rot[0][0] - 1.0).abs() < 1e-12);
        assert!((rot[1][1] - 4.0).abs() < 1e-12);
        assert!(rot[0][1].abs() < 1e-12);
    }

    #[test]
    fn conic_inverts_covariance() {
        let g = blob([0.3, -0.7], 0.9);
        let s = covariance_of(&g).unwrap();
        let [a, b, c] = conic_of(g.log_scale, g.rotation);
        let p00 = s[0][0] * a + s[0][1] * b;
        let p01 = s[0][0] * b + s[0][1] * c;
        let p11 = s[1][0] * b + s[1][1] * c;
        assert!((p00 - 1.0).abs() < 1e-12 && p01.abs() < 1e-12 && (p11 - 1.0).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sigmoid_is_strictly_increasing(v in -30.0f64..30.0, dv in 1e-6f64..5.0) {
                prop_assert!(sigmoid(v + dv) > sigmoid(v));
                let a = activate_opacity(v).unwrap();
                prop_assert!(a > 0.0 && a < 1.0);
            }

            #[test]
            fn covariance_is_symmetric_positive_definite(
                s0 in -4.0f64..4.0, s1 in -4.0f64..4.0, theta in -10.0f64..10.0,
            ) {
                let m = covariance_of(&blob([s0, s1], theta)).unwrap();
                prop_assert_eq!(m[0][1], m[1][0]);
                let tr = m[0][0] + m[1][1];
                let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
                prop_assert!(m[0][0] > 0.0 && det > 0.0);
                // eigenvalues are the variances
                let (e1, e2) = ((2.0 * s0).exp(), (2.0 * s1).exp());
                prop_assert!((tr - (e1 + e2)).abs() <= 1e-9 * (e1 + e2));
                prop_assert!((det - e1 * e2).abs() <= 1e-9 * (e1 * e2).max(e1.max(e2).powi(2)));
            }
        }
    }
}
