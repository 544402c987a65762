//! PCA on local features, backed by a cyclic Jacobi eigensolver.
//!
//! Jacobi is exact enough for the moderate dimensions this pipeline sees
//! (local feature dims up to a few hundred) and has no convergence
//! tuning knobs that could make runs diverge across platforms.

use crate::error::{Result, StagError};
use crate::mat::Mat;

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// D x r, orthonormal columns ordered by non-increasing explained
    /// variance. Column signs are fixed so the entry of largest magnitude
    /// is positive.
    pub basis: Mat,
    pub r: usize,
}

/// Eigendecomposition of a symmetric matrix, eigenvalues sorted in
/// non-increasing order, eigenvectors as the columns of the returned
/// matrix. Cyclic Jacobi with a fixed sweep budget.
pub fn symmetric_eig(a: &Mat) -> (Vec<f64>, Mat) {
    assert_eq!(a.rows(), a.cols(), "symmetric_eig needs a square matrix");
    let n = a.rows();
    let mut m = a.clone();
    let mut v = Mat::identity(n);
    let frob: f64 = m.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-14 * frob.max(1e-300);
    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m.at(p, q).abs();
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.at(p, q);
                if apq.abs() <= tol / (n * n) as f64 {
                    continue;
                }
                // Rotation angle zeroing a_pq: tan(2t) = 2 a_pq / (a_pp - a_qq).
                let t = 0.5 * (2.0 * apq).atan2(m.at(p, p) - m.at(q, q));
                let (s, c) = t.sin_cos();
                // A <- R^T (A R), applied as a column then a row update.
                for k in 0..n {
                    let mkp = m.at(k, p);
                    let mkq = m.at(k, q);
                    *m.at_mut(k, p) = c * mkp + s * mkq;
                    *m.at_mut(k, q) = -s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m.at(p, k);
                    let mqk = m.at(q, k);
                    *m.at_mut(p, k) = c * mpk + s * mqk;
                    *m.at_mut(q, k) = -s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    *v.at_mut(k, p) = c * vkp + s * vkq;
                    *v.at_mut(k, q) = -s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let eig: Vec<f64> = (0..n).map(|i| m.at(i, i)).collect();
    order.sort_by(|&i, &j| eig[j].partial_cmp(&eig[i]).unwrap().then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| eig[i]).collect();
    let vectors = Mat::from_fn(n, n, |r, c| v.at(r, order[c]));
    (values, vectors)
}

/// Fit mean and top-r orthonormal basis of the sample covariance
/// (1/(n-1) normalization). Needs at least r + 1 samples.
pub fn pca_fit(samples: &[&[f64]], r: usize) -> Result<PcaModel> {
    if samples.is_empty() {
        return Err(StagError::InvalidReduction("pca_fit needs samples".into()));
    }
    let d = samples[0].len();
    if r > d {
        return Err(StagError::InvalidReduction(format!(
            "reduced dimension {r} exceeds input dimension {d}"
        )));
    }
    if r == 0 {
        return Err(StagError::InvalidReduction(
            "reduced dimension must be positive".into(),
        ));
    }
    if samples.len() < r + 1 {
        return Err(StagError::InvalidReduction(format!(
            "pca_fit needs at least {} samples for r = {r}, got {}",
            r + 1,
            samples.len()
        )));
    }
    for s in samples {
        if s.len() != d {
            return Err(StagError::InvalidLength(
                "pca_fit sample dimension mismatch".into(),
            ));
        }
    }
    let n = samples.len();
    let mut mean = vec![0.0; d];
    for s in samples {
        crate::mat::axpy(&mut mean, 1.0, s);
    }
    crate::mat::scale(&mut mean, 1.0 / n as f64);
    let mut cov = Mat::zeros(d, d);
    let mut centered = vec![0.0; d];
    for s in samples {
        for i in 0..d {
            centered[i] = s[i] - mean[i];
        }
        cov.add_outer(&centered, &centered, 1.0);
    }
    for v in cov.data_mut() {
        *v /= (n - 1) as f64;
    }
    let (_values, vectors) = symmetric_eig(&cov);
    let mut basis = Mat::from_fn(d, r, |row, col| vectors.at(row, col));
    for c in 0..r {
        let col = basis.column(c);
        let mut best = 0usize;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            for row in 0..d {
                *basis.at_mut(row, c) = -basis.at(row, c);
            }
        }
    }
    Ok(PcaModel { mean, basis, r })
}

/// basis^T (x - mean)
pub fn pca_transform(x: &[f64], model: &PcaModel) -> Result<Vec<f64>> {
    if x.len() != model.mean.len() {
        return Err(StagError::InvalidLength(format!(
            "pca_transform input dim {} does not match model dim {}",
            x.len(),
            model.mean.len()
        )));
    }
    let centered: Vec<f64> = x.iter().zip(&model.mean).map(|(a, b)| a - b).collect();
    Ok(model.basis.matvec_t(&centered))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::dot;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian_samples(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = crate::seeds::rng(seed, "pca-test");
        (0..n)
            .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect()
    }

    fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(|x| x.as_slice()).collect()
    }

    /// Independent spectral oracle: power iteration with deflation on a
    /// symmetric matrix. Deliberately avoids sharing code with Jacobi.
    fn top_eigenvalues_power(a: &Mat, k: usize, seed: u64) -> Vec<f64> {
        let n = a.rows();
        let mut deflated = a.clone();
        let mut rng = crate::seeds::rng(seed, "power-oracle");
        let mut out = Vec::new();
        for _ in 0..k {
            let mut v: Vec<f64> =
                (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let mut lambda = 0.0;
            for _ in 0..5000 {
                let w = deflated.matvec(&v);
                let nw = crate::mat::norm2(&w);
                if nw < 1e-300 {
                    break;
                }
                v = w.into_iter().map(|x| x / nw).collect();
                lambda = dot(&v, &deflated.matvec(&v));
            }
            out.push(lambda);
            let mut next = deflated.clone();
            next.add_outer(&v, &v, -lambda);
            deflated = next;
        }
        out
    }

    #[test]
    fn rank_one_line_recovers_direction() {
        let dir = [0.6, 0.0, 0.8];
        let samples: Vec<Vec<f64>> = (-5..=5)
            .map(|i| dir.iter().map(|&d| d * i as f64).collect())
            .collect();
        let model = pca_fit(&refs(&samples), 1).unwrap();
        let col = model.basis.column(0);
        let align = dot(&col, &dir).abs();
        assert!((align - 1.0).abs() < 1e-10, "alignment {align}");
    }

    #[test]
    fn full_rank_round_trip() {
        let samples = gaussian_samples(40, 2, 1);
        let model = pca_fit(&refs(&samples), 2).unwrap();
        for s in &samples {
            let z = pca_transform(s, &model).unwrap();
            let back: Vec<f64> = (0..2)
                .map(|i| model.mean[i] + model.basis.row(i)[0] * z[0] + model.basis.row(i)[1] * z[1])
                .collect();
            for (a, b) in back.iter().zip(s) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn projected_variance_matches_power_iteration_oracle() {
        let mut samples = gaussian_samples(100, 8, 2);
        // Stretch a few directions so the spectrum is well separated.
        for s in samples.iter_mut() {
            s[0] *= 3.0;
            s[1] *= 2.0;
            s[2] *= 1.5;
        }
        let n = samples.len();
        let d = 8;
        let mut mean = vec![0.0; d];
        for s in &samples {
            crate::mat::axpy(&mut mean, 1.0, s);
        }
        crate::mat::scale(&mut mean, 1.0 / n as f64);
        let mut cov = Mat::zeros(d, d);
        for s in &samples {
            let c: Vec<f64> = s.iter().zip(&mean).map(|(a, b)| a - b).collect();
            cov.add_outer(&c, &c, 1.0);
        }
        for v in cov.data_mut() {
            *v /= (n - 1) as f64;
        }

        let model = pca_fit(&refs(&samples), 3).unwrap();
        let projected: f64 = samples
            .iter()
            .map(|s| {
                let z = pca_transform(s, &model).unwrap();
                dot(&z, &z)
            })
            .sum::<f64>()
            / (n - 1) as f64;
        let oracle: f64 = top_eigenvalues_power(&cov, 3, 3).iter().sum();
        assert!(
            (projected - oracle).abs() < 1e-8 * oracle.max(1.0),
            "projected {projected} vs oracle {oracle}"
        );
    }

    #[test]
    fn centering_isometry_and_hand_projection() {
        let samples = gaussian_samples(30, 4, 4);
        let model = pca_fit(&refs(&samples), 4).unwrap();
        let z = pca_transform(&model.mean.clone(), &model).unwrap();
        assert!(z.iter().all(|&v| v.abs() < 1e-12));
        // r = D with an orthonormal basis preserves norms and inner products.
        let a = &samples[0];
        let b = &samples[1];
        let za = pca_transform(a, &model).unwrap();
        let zb = pca_transform(b, &model).unwrap();
        let ca: Vec<f64> = a.iter().zip(&model.mean).map(|(x, m)| x - m).collect();
        let cb: Vec<f64> = b.iter().zip(&model.mean).map(|(x, m)| x - m).collect();
        assert!((crate::mat::norm2(&za) - crate::mat::norm2(&ca)).abs() < 1e-10);
        assert!((dot(&za, &zb) - dot(&ca, &cb)).abs() < 1e-10);

        let hand = PcaModel {
            mean: vec![0.0, 0.0],
            basis: Mat::from_vec(2, 1, vec![1.0, 0.0]),
            r: 1,
        };
        assert_eq!(pca_transform(&[3.0, 4.0], &hand).unwrap(), vec![3.0]);
    }

    #[test]
    fn basis_is_orthonormal() {
        let samples = gaussian_samples(60, 6, 5);
        let model = pca_fit(&refs(&samples), 4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let g = dot(&model.basis.column(i), &model.basis.column(j));
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g - want).abs() < 1e-8, "gram[{i}][{j}] = {g}");
            }
        }
    }

    #[test]
    fn rejects_bad_reductions() {
        let samples = gaussian_samples(3, 4, 6);
        assert!(matches!(
            pca_fit(&refs(&samples), 5),
            Err(StagError::InvalidReduction(_))
        ));
        assert!(matches!(
            pca_fit(&refs(&samples), 3),
            Err(StagError::InvalidReduction(_))
        ));
        let model = pca_fit(&refs(&samples), 2).unwrap();
        assert!(matches!(
            pca_transform(&[1.0; 3], &model),
            Err(StagError::InvalidLength(_))
        ));
    }
}
