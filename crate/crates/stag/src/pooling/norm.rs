//! Power and L2 normalization with the gradients the checker needs.

use crate::mat::{dot, norm2};

/// out[i] = sign(x[i]) * |x[i]|^sigma. Total function; sigma is validated
/// where configs are built (must lie in (0, 1]).
pub fn power_normalize(x: &[f64], sigma: f64) -> Vec<f64> {
    debug_assert!(sigma > 0.0 && sigma <= 1.0);
    x.iter()
        .map(|&v| v.signum() * v.abs().powf(sigma))
        .collect()
}

/// Elementwise derivative sigma * |x|^(sigma-1); 0 at the (non-differentiable)
/// origin. Meaningful away from 0; the checker only probes |x| > 1e-3.
pub fn power_normalize_grad(x: &[f64], sigma: f64) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            if v == 0.0 {
                0.0
            } else {
                sigma * v.abs().powf(sigma - 1.0)
            }
        })
        .collect()
}

const L2_EPS: f64 = 1e-12;

/// x / ||x|| when ||x|| > 1e-12, otherwise x unchanged (avoids NaN on the
/// zero vector).
pub fn l2_normalize(x: &[f64]) -> Vec<f64> {
    l2_normalize_with_norm(x).0
}

pub fn l2_normalize_with_norm(x: &[f64]) -> (Vec<f64>, f64) {
    let n = norm2(x);
    if n > L2_EPS {
        (x.iter().map(|&v| v / n).collect(), n)
    } else {
        (x.to_vec(), n)
    }
}

/// Gradient pullback through y = x/||x||: dx = (g - y <g,y>) / ||x||.
/// Takes the forward outputs so callers do not recompute the norm.
pub fn l2_normalize_backward(y: &[f64], norm: f64, grad_out: &[f64]) -> Vec<f64> {
    if norm <= L2_EPS {
        return grad_out.to_vec();
    }
    let gy = dot(grad_out, y);
    y.iter()
        .zip(grad_out)
        .map(|(&yi, &gi)| (gi - yi * gy) / norm)
        .collect()
}
