//! Minimal dense numeric kernels: radix-2 FFT and circular convolution.
//!
//! Everything is 64-bit. The FFT accepts power-of-two lengths only;
//! non-power-of-two sketch dimensions are rejected rather than padded so
//! the sketch inner-product estimator stays unbiased.

use num_complex::Complex64;

use crate::error::{Result, StagError};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FftDirection {
    Forward,
    Inverse,
}

pub fn is_power_of_two(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

/// In-place iterative Cooley-Tukey. `Inverse` includes the 1/n scaling.
pub fn fft_in_place(buf: &mut [Complex64], direction: FftDirection) -> Result<()> {
    let n = buf.len();
    if !is_power_of_two(n) {
        return Err(StagError::InvalidLength(format!(
            "fft length {n} is not a power of two"
        )));
    }
    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }
    let sign = match direction {
        FftDirection::Forward => -1.0,
        FftDirection::Inverse => 1.0,
    };
    let mut len = 2;
    while len <= n {
        let ang = sign * std::f64::consts::TAU / len as f64;
        let wlen = Complex64::from_polar(1.0, ang);
        for start in (0..n).step_by(len) {
            let mut w = Complex64::new(1.0, 0.0);
            for k in 0..len / 2 {
                let a = buf[start + k];
                let b = buf[start + k + len / 2] * w;
                buf[start + k] = a + b;
                buf[start + k + len / 2] = a - b;
                w *= wlen;
            }
        }
        len <<= 1;
    }
    if direction == FftDirection::Inverse {
        let scale = 1.0 / n as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
    Ok(())
}

pub fn fft(input: &[Complex64], direction: FftDirection) -> Result<Vec<Complex64>> {
    let mut buf = input.to_vec();
    fft_in_place(&mut buf, direction)?;
    Ok(buf)
}

pub fn to_complex(x: &[f64]) -> Vec<Complex64> {
    x.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

/// c[j] = sum_i a[i] * b[(j - i) mod d], computed in the Fourier domain.
/// The imaginary residue (below 1e-9 for well-scaled inputs) is discarded.
pub fn circular_convolve(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(StagError::InvalidLength(format!(
            "circular_convolve length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut fa = to_complex(a);
    fft_in_place(&mut fa, FftDirection::Forward)?;
    let mut fb = to_complex(b);
    fft_in_place(&mut fb, FftDirection::Forward)?;
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= *y;
    }
    fft_in_place(&mut fa, FftDirection::Inverse)?;
    Ok(fa.into_iter().map(|c| c.re).collect())
}
