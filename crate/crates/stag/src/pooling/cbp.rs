//! Compact bilinear pooling via tensor sketch.
//!
//! Each feature x is count-sketched twice; the circular convolution of the
//! two sketches (a pointwise product in the Fourier domain) sketches the
//! outer product x (x)ᵀ. Summing over the feature set estimates the summed
//! self-outer-product, and inner products between pooled vectors estimate
//! inner products of the full bilinear descriptors.

use num_complex::Complex64;

use crate::error::{Result, StagError};
use crate::numkit::{fft_in_place, to_complex, FftDirection};
use crate::pooling::sketch::{count_sketch, SketchParams};

fn check_features(features: &[&[f64]], params: &SketchParams) -> Result<()> {
    if features.is_empty() {
        return Err(StagError::EmptyInput("cbp_pool needs at least one feature"));
    }
    for f in features {
        if f.len() != params.input_dim {
            return Err(StagError::InvalidLength(format!(
                "cbp_pool feature dim {} does not match sketch input dim {}",
                f.len(),
                params.input_dim
            )));
        }
    }
    Ok(())
}

/// Pool a feature set into a d-dimensional sketch of its summed
/// self-outer-product. The product is accumulated in the Fourier domain
/// and inverted once, which is exactly the per-feature sum by linearity.
pub fn cbp_pool(features: &[&[f64]], params: &SketchParams) -> Result<Vec<f64>> {
    check_features(features, params)?;
    let d = params.sketch_dim;
    let mut acc = vec![Complex64::new(0.0, 0.0); d];
    for x in features {
        let mut u = to_complex(&count_sketch(x, &params.h1, &params.s1, d)?);
        fft_in_place(&mut u, FftDirection::Forward)?;
        let mut v = to_complex(&count_sketch(x, &params.h2, &params.s2, d)?);
        fft_in_place(&mut v, FftDirection::Forward)?;
        for ((a, &fu), &fv) in acc.iter_mut().zip(&u).zip(&v) {
            *a += fu * fv;
        }
    }
    fft_in_place(&mut acc, FftDirection::Inverse)?;
    Ok(acc.into_iter().map(|c| c.re).collect())
}

/// Gradient of <grad_out, cbp_pool(features)> with respect to each feature.
///
/// For one feature with sketches u, v and y = u (*) v (circular convolution),
/// d<g,y>/du is the circular correlation of g with v, whose spectrum is
/// conj(V) * G for real v; likewise for dv. The count-sketch adjoint then
/// scatters back through the index/sign maps.
pub fn cbp_pool_backward(
    features: &[&[f64]],
    params: &SketchParams,
    grad_out: &[f64],
) -> Result<Vec<Vec<f64>>> {
    check_features(features, params)?;
    let d = params.sketch_dim;
    if grad_out.len() != d {
        return Err(StagError::InvalidLength(format!(
            "cbp_pool_backward cotangent dim {} does not match sketch dim {}",
            grad_out.len(),
            d
        )));
    }
    let mut g = to_complex(grad_out);
    fft_in_place(&mut g, FftDirection::Forward)?;
    let mut grads = Vec::with_capacity(features.len());
    for x in features {
        let mut u = to_complex(&count_sketch(x, &params.h1, &params.s1, d)?);
        fft_in_place(&mut u, FftDirection::Forward)?;
        let mut v = to_complex(&count_sketch(x, &params.h2, &params.s2, d)?);
        fft_in_place(&mut v, FftDirection::Forward)?;
        let mut du: Vec<Complex64> = g.iter().zip(&v).map(|(&gi, &vi)| gi * vi.conj()).collect();
        fft_in_place(&mut du, FftDirection::Inverse)?;
        let mut dv: Vec<Complex64> = g.iter().zip(&u).map(|(&gi, &ui)| gi * ui.conj()).collect();
        fft_in_place(&mut dv, FftDirection::Inverse)?;
        let mut dx = vec![0.0; params.input_dim];
        for i in 0..params.input_dim {
            dx[i] = params.s1[i] * du[params.h1[i]].re + params.s2[i] * dv[params.h2[i]].re;
        }
        grads.push(dx);
    }
    Ok(grads)
}

/// Reference bilinear pooler at full D^2 dimension: the flattened summed
/// self-outer-product. Used by the validation suite as the exact oracle
/// that `cbp_pool` approximates; not intended for large D.
pub fn bilinear_pool_exact(features: &[&[f64]]) -> Result<Vec<f64>> {
    if features.is_empty() {
        return Err(StagError::EmptyInput(
            "bilinear_pool_exact needs at least one feature",
        ));
    }
    let d = features[0].len();
    let mut out = vec![0.0; d * d];
    for x in features {
        if x.len() != d {
            return Err(StagError::InvalidLength(
                "bilinear_pool_exact feature dim mismatch".into(),
            ));
        }
        for (i, &xi) in x.iter().enumerate() {
            for (j, &xj) in x.iter().enumerate() {
                out[i * d + j] += xi * xj;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::dot;
    use rand::Rng;

    fn unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = crate::mat::norm2(&v);
        v.into_iter().map(|x| x / n).collect()
    }

    #[test]
    fn zero_features_pool_to_zero() {
        let p = SketchParams::new(4, 8, 1).unwrap();
        let z = [0.0; 4];
        let out = cbp_pool(&[&z, &z], &p).unwrap();
        assert!(out.iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn closed_form_at_dimension_one() {
        // D = d = 1: the pooled value is s1*s2*x^2, so inner products of
        // pooled vectors are exactly squared inner products.
        for seed in 0..4 {
            let p = SketchParams::new(1, 1, seed).unwrap();
            let x = 1.7;
            let y = -0.6;
            let px = cbp_pool(&[&[x]], &p).unwrap();
            let py = cbp_pool(&[&[y]], &p).unwrap();
            let s = p.s1[0] * p.s2[0];
            assert!((px[0] - s * x * x).abs() < 1e-12);
            assert!((px[0] * py[0] - (x * y) * (x * y)).abs() < 1e-12);
        }
    }

    #[test]
    fn seed_averaged_estimate_tracks_squared_inner_product() {
        let mut rng = crate::seeds::rng(11, "cbp-mc");
        let d = 32;
        let x = unit(&mut rng, d);
        // y with inner product 0.6 against x: mix with an orthogonalized
        // random direction.
        let mut z = unit(&mut rng, d);
        let xz = dot(&x, &z);
        for i in 0..d {
            z[i] -= xz * x[i];
        }
        let zn = crate::mat::norm2(&z);
        let rho = 0.6f64;
        let y: Vec<f64> = (0..d)
            .map(|i| rho * x[i] + (1.0 - rho * rho).sqrt() * z[i] / zn)
            .collect();
        let truth = dot(&x, &y).powi(2);
        let mut mean = 0.0;
        for seed in 0..200u64 {
            let p = SketchParams::new(d, 512, 1000 + seed).unwrap();
            let px = cbp_pool(&[&x], &p).unwrap();
            let py = cbp_pool(&[&y], &p).unwrap();
            mean += dot(&px, &py);
        }
        mean /= 200.0;
        assert!(
            (mean - truth).abs() <= 0.10 * truth,
            "estimate {mean} vs truth {truth}"
        );
    }

    #[test]
    fn permutation_invariance() {
        let p = SketchParams::new(6, 16, 5).unwrap();
        let mut rng = crate::seeds::rng(6, "cbp-perm");
        let feats: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let fwd: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
        let rev: Vec<&[f64]> = feats.iter().rev().map(|f| f.as_slice()).collect();
        let a = cbp_pool(&fwd, &p).unwrap();
        let b = cbp_pool(&rev, &p).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn empty_and_mismatched_inputs_error() {
        let p = SketchParams::new(4, 8, 1).unwrap();
        assert!(matches!(cbp_pool(&[], &p), Err(StagError::EmptyInput(_))));
        let bad = [1.0, 2.0, 3.0];
        assert!(matches!(
            cbp_pool(&[&bad], &p),
            Err(StagError::InvalidLength(_))
        ));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let p = SketchParams::new(4, 8, 7).unwrap();
        let mut rng = crate::seeds::rng(8, "cbp-fd");
        let feats: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let g: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let refs: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
        let grads = cbp_pool_backward(&refs, &p, &g).unwrap();
        let step = 1e-5;
        for (n, feat) in feats.iter().enumerate() {
            for i in 0..feat.len() {
                let mut plus = feats.clone();
                plus[n][i] += step;
                let mut minus = feats.clone();
                minus[n][i] -= step;
                let rp: Vec<&[f64]> = plus.iter().map(|f| f.as_slice()).collect();
                let rm: Vec<&[f64]> = minus.iter().map(|f| f.as_slice()).collect();
                let fp = dot(&cbp_pool(&rp, &p).unwrap(), &g);
                let fm = dot(&cbp_pool(&rm, &p).unwrap(), &g);
                let num = (fp - fm) / (2.0 * step);
                let ana = grads[n][i];
                let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-8);
                assert!(rel < 1e-4, "feature {n} coord {i}: {ana} vs {num}");
            }
        }
    }

    #[test]
    fn exact_bilinear_oracle_inner_products() {
        // <phi(X), phi(Y)> must equal the sum of squared cross inner
        // products; check on a tiny instance against direct evaluation.
        let x1 = [1.0, 2.0];
        let x2 = [0.5, -1.0];
        let y1 = [-1.0, 0.25];
        let px = bilinear_pool_exact(&[&x1, &x2]).unwrap();
        let py = bilinear_pool_exact(&[&y1]).unwrap();
        let direct = dot(&x1, &y1).powi(2) + dot(&x2, &y1).powi(2);
        assert!((dot(&px, &py) - direct).abs() < 1e-12);
    }
}
