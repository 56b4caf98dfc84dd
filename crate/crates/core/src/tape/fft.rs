//! Multi-dimensional FFT helpers on channel-major tensors, with a global
//! plan cache shared across threads.
//!
//! Normalization: the forward transform is unnormalized; the inverse is
//! scaled by 1/N (N = number of spatial points). The adjoint of the forward
//! transform is therefore the unnormalized inverse, and vice versa.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

static PLANS: OnceLock<Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>> = OnceLock::new();

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let cache = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard
        .entry((len, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(len)
            } else {
                planner.plan_fft_forward(len)
            }
        })
        .clone()
}

/// In-place transform along one axis of a row-major tensor with the given
/// full shape (channel axis included). Unnormalized in both directions.
fn fft_axis(data: &mut [Complex64], shape: &[usize], axis: usize, inverse: bool) {
    let len = shape[axis];
    if len == 1 {
        return;
    }
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let fft = plan(len, inverse);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    if inner == 1 {
        // contiguous: batch all `outer` rows in one pass
        for chunk in data.chunks_exact_mut(len) {
            fft.process_with_scratch(chunk, &mut scratch);
        }
        return;
    }
    // gather strided lines into a contiguous block, transform, scatter back
    let mut block = vec![Complex64::default(); len * inner];
    for o in 0..outer {
        let base = o * len * inner;
        // transpose [len, inner] -> [inner, len]
        for l in 0..len {
            for i in 0..inner {
                block[i * len + l] = data[base + l * inner + i];
            }
        }
        for chunk in block.chunks_exact_mut(len) {
            fft.process_with_scratch(chunk, &mut scratch);
        }
        for l in 0..len {
            for i in 0..inner {
                data[base + l * inner + i] = block[i * len + l];
            }
        }
    }
}

/// Forward FFT over every spatial axis (all axes after the first).
pub fn fft_spatial_forward(data: &mut [Complex64], shape: &[usize]) {
    for axis in 1..shape.len() {
        fft_axis(data, shape, axis, false);
    }
}

/// Inverse FFT over every spatial axis, scaled by 1/N.
pub fn fft_spatial_inverse(data: &mut [Complex64], shape: &[usize]) {
    for axis in 1..shape.len() {
        fft_axis(data, shape, axis, true);
    }
    let n: usize = shape[1..].iter().product();
    let scale = 1.0 / n as f64;
    for v in data.iter_mut() {
        *v *= scale;
    }
}

/// Unnormalized inverse transform: the adjoint of [`fft_spatial_forward`].
pub fn fft_spatial_forward_adjoint(data: &mut [Complex64], shape: &[usize]) {
    for axis in 1..shape.len() {
        fft_axis(data, shape, axis, true);
    }
}

/// Forward transform scaled by 1/N: the adjoint of [`fft_spatial_inverse`].
pub fn fft_spatial_inverse_adjoint(data: &mut [Complex64], shape: &[usize]) {
    for axis in 1..shape.len() {
        fft_axis(data, shape, axis, false);
    }
    let n: usize = shape[1..].iter().product();
    let scale = 1.0 / n as f64;
    for v in data.iter_mut() {
        *v *= scale;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_inverse_round_trip() {
        let shape = [2usize, 5, 7];
        let n: usize = shape.iter().product();
        let orig: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new((i as f64 * 0.31).sin(), (i as f64 * 0.17).cos()))
            .collect();
        let mut data = orig.clone();
        fft_spatial_forward(&mut data, &shape);
        fft_spatial_inverse(&mut data, &shape);
        for (a, b) in data.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn forward_matches_direct_dft_1d() {
        let shape = [1usize, 8];
        let orig: Vec<Complex64> =
            (0..8).map(|i| Complex64::new(i as f64, -(i as f64) * 0.5)).collect();
        let mut data = orig.clone();
        fft_spatial_forward(&mut data, &shape);
        for k in 0..8 {
            let mut acc = Complex64::default();
            for (j, v) in orig.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * (k * j) as f64 / 8.0;
                acc += v * Complex64::new(ang.cos(), ang.sin());
            }
            assert!((data[k] - acc).norm() < 1e-10, "bin {k}");
        }
    }

    #[test]
    fn adjoint_identity_holds() {
        // <F x, y> == <x, F^H y> with the real inner product Re(a^H b)
        let shape = [1usize, 6, 4];
        let n: usize = shape.iter().product();
        let x: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.7).cos()))
            .collect();
        let y: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new((i as f64 * 1.3).cos(), (i as f64 * 0.9).sin()))
            .collect();
        let mut fx = x.clone();
        fft_spatial_forward(&mut fx, &shape);
        let mut fhy = y.clone();
        fft_spatial_forward_adjoint(&mut fhy, &shape);
        let lhs: f64 = fx.iter().zip(&y).map(|(a, b)| (a.conj() * b).re).sum();
        let rhs: f64 = x.iter().zip(&fhy).map(|(a, b)| (a.conj() * b).re).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}
