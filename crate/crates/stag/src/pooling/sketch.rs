//! Count sketch: the random projection underlying compact bilinear pooling.

use rand::Rng;

use crate::error::{Result, StagError};
use crate::numkit::is_power_of_two;

/// Frozen random maps of one tensor-sketch layer.
///
/// Fully determined by `(input_dim, sketch_dim, seed)`; model files persist
/// only the seed, so the generation order below (h1, s1, h2, s2) is part of
/// the on-disk contract.
#[derive(Clone, Debug, PartialEq)]
pub struct SketchParams {
    pub input_dim: usize,
    pub sketch_dim: usize,
    pub h1: Vec<usize>,
    pub s1: Vec<f64>,
    pub h2: Vec<usize>,
    pub s2: Vec<f64>,
    pub seed: u64,
}

impl SketchParams {
    pub fn new(input_dim: usize, sketch_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(StagError::InvalidLength(
                "sketch input dimension must be positive".into(),
            ));
        }
        if !is_power_of_two(sketch_dim) {
            return Err(StagError::InvalidLength(format!(
                "sketch dimension {sketch_dim} is not a power of two"
            )));
        }
        let mut rng = crate::seeds::rng(seed, "sketch-maps");
        let index_map = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<usize> {
            (0..input_dim).map(|_| rng.random_range(0..sketch_dim)).collect()
        };
        let sign_map = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            (0..input_dim)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect()
        };
        let h1 = index_map(&mut rng);
        let s1 = sign_map(&mut rng);
        let h2 = index_map(&mut rng);
        let s2 = sign_map(&mut rng);
        Ok(SketchParams {
            input_dim,
            sketch_dim,
            h1,
            s1,
            h2,
            s2,
            seed,
        })
    }
}

/// out[j] = sum over i with h(i) = j of s(i) * x[i]
pub fn count_sketch(x: &[f64], h: &[usize], s: &[f64], d: usize) -> Result<Vec<f64>> {
    if x.len() != h.len() || x.len() != s.len() {
        return Err(StagError::InvalidLength(format!(
            "count_sketch map size mismatch: x {} h {} s {}",
            x.len(),
            h.len(),
            s.len()
        )));
    }
    let mut out = vec![0.0; d];
    for ((&xi, &hi), &si) in x.iter().zip(h).zip(s) {
        out[hi] += si * xi;
    }
    Ok(out)
}
