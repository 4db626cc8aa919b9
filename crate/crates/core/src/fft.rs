//! Centered 1-D DFTs (`ifftshift → FFT → fftshift`).
//!
//! Forward transforms are unnormalized; inverse transforms carry the `1/N`.
//! Index `N/2` (integer division) of a centered spectrum is zero frequency.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub const FFT_NORMALIZATION: &str = "forward-unnormalized;inverse-1/N";
pub const SHIFT_CONVENTION: &str = "ifftshift-fft-fftshift";

pub struct CenteredFft {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
}

impl CenteredFft {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        let scratch_len = forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len());
        Self {
            len,
            forward,
            inverse,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn forward(&mut self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.len);
        ifftshift(buf);
        self.forward.process_with_scratch(buf, &mut self.scratch);
        fftshift(buf);
    }

    pub fn inverse(&mut self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.len);
        ifftshift(buf);
        self.inverse.process_with_scratch(buf, &mut self.scratch);
        fftshift(buf);
        let scale = 1.0 / self.len as f64;
        for z in buf.iter_mut() {
            *z *= scale;
        }
    }
}

/// Move index 0 to index `N/2`.
pub fn fftshift<T>(buf: &mut [T]) {
    let half = buf.len() / 2;
    buf.rotate_right(half);
}

/// Inverse of [`fftshift`].
pub fn ifftshift<T>(buf: &mut [T]) {
    let half = buf.len() / 2;
    buf.rotate_left(half);
}

/// Frequency (cycles per unit length) of centered bin `k` for a length-`n`
/// transform with sample spacing `dt`.
pub fn frequency(k: usize, n: usize, dt: f64) -> f64 {
    (k as f64 - (n / 2) as f64) / (n as f64 * dt)
}

/// Angular frequency (radians per unit length) of centered bin `k` for a
/// length-`n` transform with sample spacing `dt`.
pub fn angular_frequency(k: usize, n: usize, dt: f64) -> f64 {
    let m = k as f64 - (n / 2) as f64;
    std::f64::consts::TAU * m / (n as f64 * dt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shifts_match_numpy() {
        let mut odd = [0, 1, 2, 3, 4];
        fftshift(&mut odd);
        assert_eq!(odd, [3, 4, 0, 1, 2]);
        ifftshift(&mut odd);
        assert_eq!(odd, [0, 1, 2, 3, 4]);
        let mut even = [0, 1, 2, 3];
        fftshift(&mut even);
        assert_eq!(even, [2, 3, 0, 1]);
    }

    #[test]
    fn constant_maps_to_center_impulse() {
        for n in [7, 8] {
            let mut f = CenteredFft::new(n);
            let mut buf = vec![Complex64::new(1.0, 0.0); n];
            f.forward(&mut buf);
            for (k, z) in buf.iter().enumerate() {
                let expected = if k == n / 2 { n as f64 } else { 0.0 };
                assert!((z.re - expected).abs() < 1e-12 && z.im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn round_trip() {
        let mut f = CenteredFft::new(12);
        let orig: Vec<Complex64> = (0..12)
            .map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.3).cos()))
            .collect();
        let mut buf = orig.clone();
        f.forward(&mut buf);
        f.inverse(&mut buf);
        for (a, b) in buf.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-14);
        }
    }
}
