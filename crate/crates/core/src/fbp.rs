//! Ramp-filtered backprojection.
//!
//! Reconstruction is `m(x, y) = (π / N_θ) Σ_θ q_θ(x cos θ + y sin θ)` where
//! `q_θ` is the projection filtered by `|ω|` in the centered DFT domain. The
//! frequency is measured in cycles per unit length, so together with the
//! `π / N_θ` weight the reconstruction has the phantom's amplitude for any
//! number of views.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::fft::{frequency, CenteredFft};
use crate::image::{ComplexImage, Image};
use crate::kspace::{default_pad_length, kspace_to_sinogram, ComplexSinogram, RadialKSpace};
use crate::projection::Sinogram;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    /// Plain `|ω|`.
    #[default]
    RamLak,
    /// `|ω|` apodized by `½(1 + cos(π ω / ω_max))`.
    Hann,
}

impl Window {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "ramlak" | "ram-lak" | "ramp" => Ok(Self::RamLak),
            "hann" | "hanning" => Ok(Self::Hann),
            other => Err(Error::InvalidArgument(format!("unknown window '{other}'"))),
        }
    }
}

/// Filter gains per centered DFT bin for a row of `len` samples spaced `dt`.
pub fn ramp_response(len: usize, dt: f64, window: Window) -> Vec<f64> {
    let nyquist = 0.5 / dt;
    (0..len)
        .map(|k| {
            let w = frequency(k, len, dt).abs();
            match window {
                Window::RamLak => w,
                Window::Hann => w * 0.5 * (1.0 + (std::f64::consts::PI * w / nyquist).cos()),
            }
        })
        .collect()
}

fn filter_rows_complex(data: &mut [Complex64], len: usize, dt: f64, window: Window) {
    let gains = ramp_response(len, dt, window);
    let mut fft = CenteredFft::new(len);
    for row in data.chunks_exact_mut(len) {
        fft.forward(row);
        for (z, g) in row.iter_mut().zip(&gains) {
            *z *= *g;
        }
        fft.inverse(row);
    }
}

/// Ramp-filter every row of a real sinogram (no padding).
pub fn ramp_filter(sino: &Sinogram, window: Window) -> Result<Sinogram> {
    ensure!(sino.num_bins >= 2, Shape, "ramp filter needs rows of length >= 2");
    let mut buf: Vec<Complex64> = sino.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    filter_rows_complex(&mut buf, sino.num_bins, sino.bin_spacing, window);
    Ok(Sinogram {
        data: buf.into_iter().map(|z| z.re).collect(),
        ..sino.clone()
    })
}

/// Ramp-filter a complex sinogram; the filter is real and even, so this is
/// the same as filtering the real and imaginary channels separately.
pub fn ramp_filter_complex(sino: &ComplexSinogram, window: Window) -> Result<ComplexSinogram> {
    ensure!(sino.num_bins >= 2, Shape, "ramp filter needs rows of length >= 2");
    let mut out = sino.clone();
    filter_rows_complex(&mut out.data, sino.num_bins, sino.bin_spacing, window);
    Ok(out)
}

/// Pixel-driven backprojection with linear interpolation in `t`, weighted by
/// `π / N_θ`. Samples outside the detector read as zero.
pub fn backproject(filtered: &Sinogram, height: usize, width: usize) -> Result<Image> {
    let n_theta = filtered.num_angles();
    ensure!(n_theta > 0, InvalidArgument, "cannot backproject an empty schedule");
    crate::projection::check_angles(&filtered.angles)?;
    let nb = filtered.num_bins;
    let inv_dt = 1.0 / filtered.bin_spacing;
    let ps = filtered.bin_spacing;
    let trig: Vec<(f64, f64)> = filtered.angles.iter().map(|a| a.sin_cos()).collect();
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let weight = std::f64::consts::PI / n_theta as f64;
    let last = (nb - 1) as f64;
    let mut out = vec![0.0; height * width];
    for row in 0..height {
        let y = (cy - row as f64) * ps;
        for col in 0..width {
            let x = (col as f64 - cx) * ps;
            let mut acc = 0.0;
            for (a, &(s, c)) in trig.iter().enumerate() {
                let pos = filtered.center + (x * c + y * s) * inv_dt;
                if pos < 0.0 || pos > last {
                    continue;
                }
                let k0 = pos.floor();
                let frac = pos - k0;
                let k0 = k0 as usize;
                let r = filtered.row(a);
                let v0 = r[k0];
                let v1 = if k0 + 1 < nb { r[k0 + 1] } else { 0.0 };
                acc += v0 + frac * (v1 - v0);
            }
            out[row * width + col] = acc * weight;
        }
    }
    Image::from_vec(height, width, out)?.with_pixel_spacing(ps)
}

/// Full FBP of a real sinogram: zero-pad to the default length, ramp-filter,
/// backproject.
pub fn fbp(sino: &Sinogram, size: usize, window: Window) -> Result<Image> {
    let padded = sino.zero_padded(default_pad_length(sino.num_bins))?;
    backproject(&ramp_filter(&padded, window)?, size, size)
}

/// Magnitude backprojection: `|kspace_to_sinogram(k)|`, filter, backproject.
pub fn fbp_magnitude(k: &RadialKSpace, size: usize, window: Window) -> Result<Image> {
    let sino = kspace_to_sinogram(k)?.magnitude();
    backproject(&ramp_filter(&sino, window)?, size, size)
}

/// Complex backprojection: real and imaginary channels separately.
pub fn fbp_complex(k: &RadialKSpace, size: usize, window: Window) -> Result<ComplexImage> {
    let filtered = ramp_filter_complex(&kspace_to_sinogram(k)?, window)?;
    let re = backproject(&filtered.re(), size, size)?;
    let im = backproject(&filtered.im(), size, size)?;
    ComplexImage::from_parts(&re, &im)
}

/// Pixelwise `sqrt(Σ_c |z_c|²)`.
pub fn ssos(images: &[ComplexImage]) -> Result<Image> {
    ensure!(!images.is_empty(), InvalidArgument, "ssos of an empty image list");
    let dims = images[0].dims();
    ensure!(
        images.iter().all(|z| z.dims() == dims),
        Shape,
        "ssos inputs differ in size"
    );
    let n = dims.0 * dims.1;
    let data = (0..n)
        .map(|i| images.iter().map(|z| z.data()[i].norm_sqr()).sum::<f64>().sqrt())
        .collect();
    Image::from_vec(dims.0, dims.1, data)
}

/// How multi-coil or complex k-space is turned into one real image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Magnitude backprojection per coil, combined by SSOS.
    #[default]
    Magnitude,
    /// Complex backprojection per coil, combined by SSOS (`|z|` for one coil).
    Complex,
}

impl Variant {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "magnitude" | "mag" => Ok(Self::Magnitude),
            "complex" | "ssos" => Ok(Self::Complex),
            other => Err(Error::InvalidArgument(format!("unknown FBP variant '{other}'"))),
        }
    }
}

/// Reconstruct one real image from per-coil k-space.
pub fn fbp_coils(coils: &[RadialKSpace], size: usize, variant: Variant, window: Window) -> Result<Image> {
    ensure!(!coils.is_empty(), InvalidArgument, "no coil data");
    let per_coil = coils
        .iter()
        .map(|k| match variant {
            Variant::Magnitude => fbp_magnitude(k, size, window).map(|m| ComplexImage::from_real(&m)),
            Variant::Complex => fbp_complex(k, size, window),
        })
        .collect::<Result<Vec<_>>>()?;
    ssos(&per_coil)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::nmse;
    use crate::phantom::{make_phantom, EllipsePhantomSpec};
    use crate::projection::{default_num_bins, make_schedule, radon_forward, ScheduleMode};

    #[test]
    fn zero_and_constant_rows() {
        let z = Sinogram::new(vec![0.0, 1.0], 16, 1.0, vec![0.0; 32]).unwrap();
        assert!(ramp_filter(&z, Window::RamLak).unwrap().data.iter().all(|&v| v == 0.0));
        let c = Sinogram::new(vec![0.0], 16, 1.0, vec![2.5; 16]).unwrap();
        let f = ramp_filter(&c, Window::RamLak).unwrap();
        assert!(f.data.iter().all(|v| v.abs() < 1e-12));
        assert!(ramp_filter(&Sinogram::new(vec![0.0], 1, 1.0, vec![1.0]).unwrap(), Window::RamLak).is_err());
    }

    #[test]
    fn dft_basis_vectors_scale_by_abs_omega() {
        // cos(2π ν t) is an eigenvector of the ramp filter with gain |ν|
        let n = 64;
        for m in 1..n / 2 {
            let row: Vec<f64> = (0..n)
                .map(|j| (std::f64::consts::TAU * (m * j) as f64 / n as f64).cos())
                .collect();
            let s = Sinogram::new(vec![0.0], n, 0.5, row.clone()).unwrap();
            let f = ramp_filter(&s, Window::RamLak).unwrap();
            let omega = m as f64 / (n as f64 * 0.5);
            for (a, b) in f.data.iter().zip(&row) {
                assert!((a - omega * b).abs() < 1e-9, "m={m}");
            }
        }
    }

    #[test]
    fn hann_window_attenuates_high_frequencies() {
        let r = ramp_response(32, 1.0, Window::RamLak);
        let h = ramp_response(32, 1.0, Window::Hann);
        assert_eq!(h[16], 0.0);
        assert!(h[17] < r[17] && h[17] > 0.9 * r[17]);
        assert!(h[0] < 1e-12);
    }

    #[test]
    fn backproject_rejects_empty() {
        let s = Sinogram::new(vec![], 8, 1.0, vec![]).unwrap();
        assert!(backproject(&s, 4, 4).is_err());
        let z = Sinogram::new(vec![0.3], 8, 1.0, vec![0.0; 8]).unwrap();
        assert!(backproject(&z, 4, 4).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shepp_logan_reconstructs() {
        let n = 64;
        let img = make_phantom(&EllipsePhantomSpec::shepp_logan(), n).unwrap();
        let sched = make_schedule(ScheduleMode::Uniform, 120).unwrap();
        let sino = radon_forward(&img, &sched, default_num_bins(n)).unwrap();
        let rec = fbp(&sino, n, Window::RamLak).unwrap();
        let e = nmse(&img, &rec).unwrap();
        assert!(e < 0.11, "nmse {e}");
    }

    #[test]
    fn ssos_cases() {
        let img = make_phantom(&EllipsePhantomSpec::shepp_logan(), 16).unwrap();
        let z = ComplexImage::from_real(&img);
        assert_eq!(ssos(std::slice::from_ref(&z)).unwrap(), img.map(f64::abs));
        let two = ssos(&[z.clone(), z.clone()]).unwrap();
        for (a, b) in two.data().iter().zip(img.data()) {
            assert!((a - std::f64::consts::SQRT_2 * b.abs()).abs() < 1e-12);
        }
        assert!(ssos(&[]).is_err());
        assert!(ssos(&[z, ComplexImage::zeros(8, 8)]).is_err());
    }
}
