//! NetVLAD: soft-assignment VLAD pooling with trainable parameters.
//!
//! Assignment uses an affine softmax (w_c . x + b_c) decoupled from the
//! centers. Centers are initialized by seeded k-means over a feature
//! subsample; w_c = 2 alpha mu_c and b_c = -alpha ||mu_c||^2 with
//! alpha = 10, so initial soft assignments approximate nearest-center
//! assignment.

use rand::Rng;

use crate::error::{Result, StagError};
use crate::mat::{axpy, dot, Mat};
use crate::pooling::norm::{l2_normalize_backward, l2_normalize_with_norm};

pub const NETVLAD_ALPHA: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct NetVladParams {
    /// C_k x D cluster centers mu_c.
    pub centers: Mat,
    /// C_k x D assignment weights w_c.
    pub weights: Mat,
    /// C_k assignment biases b_c.
    pub biases: Vec<f64>,
}

impl NetVladParams {
    pub fn clusters(&self) -> usize {
        self.centers.rows()
    }

    pub fn dim(&self) -> usize {
        self.centers.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.clusters() * self.dim()
    }

    /// Centers from seeded k-means (20 Lloyd iterations), assignment
    /// parameters from the alpha heuristic above.
    pub fn init_from_kmeans(samples: &[&[f64]], clusters: usize, seed: u64) -> Result<Self> {
        let centers = kmeans(samples, clusters, 20, seed)?;
        let d = centers.cols();
        let mut weights = Mat::zeros(clusters, d);
        let mut biases = vec![0.0; clusters];
        for c in 0..clusters {
            let mu = centers.row(c);
            for (w, &m) in weights.row_mut(c).iter_mut().zip(mu) {
                *w = 2.0 * NETVLAD_ALPHA * m;
            }
            biases[c] = -NETVLAD_ALPHA * dot(mu, mu);
        }
        Ok(NetVladParams {
            centers,
            weights,
            biases,
        })
    }
}

/// Plain Lloyd k-means with k-means++ seeding; empty clusters are reseeded
/// to the point farthest from its current center. Deterministic given seed.
pub fn kmeans(samples: &[&[f64]], k: usize, iters: usize, seed: u64) -> Result<Mat> {
    if samples.is_empty() {
        return Err(StagError::EmptyInput("kmeans needs samples"));
    }
    if k == 0 || samples.len() < k {
        return Err(StagError::InvalidLength(format!(
            "kmeans needs at least k = {k} samples, got {}",
            samples.len()
        )));
    }
    let d = samples[0].len();
    for s in samples {
        if s.len() != d {
            return Err(StagError::InvalidLength(
                "kmeans sample dimension mismatch".into(),
            ));
        }
    }
    let mut rng = crate::seeds::rng(seed, "kmeans");
    let n = samples.len();

    // k-means++ seeding.
    let mut centers = Mat::zeros(k, d);
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from_slice(samples[first]);
    let mut dist2: Vec<f64> = samples
        .iter()
        .map(|s| sq_dist(s, centers.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = dist2.iter().sum();
        let chosen = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in dist2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        };
        centers.row_mut(c).copy_from_slice(samples[chosen]);
        for (i, s) in samples.iter().enumerate() {
            dist2[i] = dist2[i].min(sq_dist(s, centers.row(c)));
        }
    }

    let mut assign = vec![0usize; n];
    for _ in 0..iters {
        for (i, s) in samples.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let dd = sq_dist(s, centers.row(c));
                if dd < best_d {
                    best_d = dd;
                    best = c;
                }
            }
            assign[i] = best;
        }
        let mut counts = vec![0usize; k];
        let mut sums = Mat::zeros(k, d);
        for (i, s) in samples.iter().enumerate() {
            counts[assign[i]] += 1;
            axpy(sums.row_mut(assign[i]), 1.0, s);
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, src) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = src * inv;
                }
            } else {
                // Reseed to the point farthest from its assigned center.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(samples[a], centers.row(assign[a]));
                        let db = sq_dist(samples[b], centers.row(assign[b]));
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                centers.row_mut(c).copy_from_slice(samples[far]);
            }
        }
    }
    Ok(centers)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Forward tape for the backward pass.
#[derive(Clone, Debug)]
pub struct NetVladTape {
    /// N x C_k soft assignments.
    assignments: Mat,
    /// Per-block norms and intra-normalized blocks.
    block_norms: Vec<f64>,
    intra: Vec<f64>,
    /// Global norm of the concatenated intra-normalized vector.
    global_norm: f64,
    output: Vec<f64>,
}

fn check_inputs(features: &[&[f64]], params: &NetVladParams) -> Result<()> {
    if features.is_empty() {
        return Err(StagError::EmptyInput(
            "netvlad_pool needs at least one feature",
        ));
    }
    for f in features {
        if f.len() != params.dim() {
            return Err(StagError::InvalidLength(format!(
                "netvlad_pool feature dim {} does not match parameter dim {}",
                f.len(),
                params.dim()
            )));
        }
    }
    Ok(())
}

/// Soft-assigned residual aggregation: block c is
/// sum_n a_c(x_n) (x_n - mu_c), each block L2-intra-normalized, then the
/// concatenation L2-normalized. Output dim C_k * D.
pub fn netvlad_pool(features: &[&[f64]], params: &NetVladParams) -> Result<Vec<f64>> {
    Ok(netvlad_pool_forward(features, params)?.0)
}

pub fn netvlad_pool_forward(
    features: &[&[f64]],
    params: &NetVladParams,
) -> Result<(Vec<f64>, NetVladTape)> {
    check_inputs(features, params)?;
    let n = features.len();
    let ck = params.clusters();
    let d = params.dim();

    let mut assignments = Mat::zeros(n, ck);
    for (i, x) in features.iter().enumerate() {
        let row = assignments.row_mut(i);
        for c in 0..ck {
            row[c] = dot(params.weights.row(c), x) + params.biases[c];
        }
        softmax_in_place(row);
    }

    let mut blocks = Mat::zeros(ck, d);
    for (i, x) in features.iter().enumerate() {
        for c in 0..ck {
            let a = assignments.at(i, c);
            for (dst, (&xv, &mv)) in blocks
                .row_mut(c)
                .iter_mut()
                .zip(x.iter().zip(params.centers.row(c)))
            {
                *dst += a * (xv - mv);
            }
        }
    }

    let mut intra = vec![0.0; ck * d];
    let mut block_norms = vec![0.0; ck];
    for c in 0..ck {
        let (normed, norm) = l2_normalize_with_norm(blocks.row(c));
        block_norms[c] = norm;
        intra[c * d..(c + 1) * d].copy_from_slice(&normed);
    }
    let (output, global_norm) = l2_normalize_with_norm(&intra);
    let tape = NetVladTape {
        assignments,
        block_norms,
        intra,
        global_norm,
        output: output.clone(),
    };
    Ok((output, tape))
}

#[derive(Clone, Debug)]
pub struct NetVladGrads {
    pub features: Vec<Vec<f64>>,
    pub centers: Mat,
    pub weights: Mat,
    pub biases: Vec<f64>,
}

/// Gradients of <grad_out, netvlad_pool(features)> with respect to the
/// features and every trainable parameter.
pub fn netvlad_pool_backward(
    features: &[&[f64]],
    params: &NetVladParams,
    tape: &NetVladTape,
    grad_out: &[f64],
) -> Result<NetVladGrads> {
    check_inputs(features, params)?;
    let n = features.len();
    let ck = params.clusters();
    let d = params.dim();
    if grad_out.len() != ck * d {
        return Err(StagError::InvalidLength(format!(
            "netvlad_pool_backward cotangent dim {} does not match output dim {}",
            grad_out.len(),
            ck * d
        )));
    }

    // Through the global normalization, then each intra-normalization.
    let g_intra = l2_normalize_backward(&tape.output, tape.global_norm, grad_out);
    let mut g_blocks = Mat::zeros(ck, d);
    for c in 0..ck {
        let gb = l2_normalize_backward(
            &tape.intra[c * d..(c + 1) * d],
            tape.block_norms[c],
            &g_intra[c * d..(c + 1) * d],
        );
        g_blocks.row_mut(c).copy_from_slice(&gb);
    }

    let mut g_features = vec![vec![0.0; d]; n];
    let mut g_centers = Mat::zeros(ck, d);
    let mut g_weights = Mat::zeros(ck, d);
    let mut g_biases = vec![0.0; ck];

    // dV_c = g_blocks[c]; V_c = sum_n a_nc (x_n - mu_c).
    for c in 0..ck {
        let a_sum: f64 = (0..n).map(|i| tape.assignments.at(i, c)).sum();
        axpy(g_centers.row_mut(c), -a_sum, g_blocks.row(c));
    }
    for (i, x) in features.iter().enumerate() {
        // dA_nc and the softmax pullback to the affine scores.
        let mut da = vec![0.0; ck];
        for c in 0..ck {
            let resid: f64 = x
                .iter()
                .zip(params.centers.row(c))
                .zip(g_blocks.row(c))
                .map(|((&xv, &mv), &gv)| gv * (xv - mv))
                .sum();
            da[c] = resid;
            axpy(&mut g_features[i], tape.assignments.at(i, c), g_blocks.row(c));
        }
        let a_row = tape.assignments.row(i);
        let inner: f64 = (0..ck).map(|c| da[c] * a_row[c]).sum();
        for c in 0..ck {
            let dt = a_row[c] * (da[c] - inner);
            if dt != 0.0 {
                axpy(g_weights.row_mut(c), dt, x);
                g_biases[c] += dt;
                axpy(&mut g_features[i], dt, params.weights.row(c));
            }
        }
    }

    Ok(NetVladGrads {
        features: g_features,
        centers: g_centers,
        weights: g_weights,
        biases: g_biases,
    })
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
