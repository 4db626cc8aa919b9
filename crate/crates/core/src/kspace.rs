//! Radial k-space simulation.
//!
//! By the projection-slice theorem each radial spoke is the 1-D DFT of the
//! parallel projection at the same angle. Spokes are produced by zero-padding
//! projections to `pad_length` and applying the centered forward DFT;
//! [`kspace_to_sinogram`] inverts that per spoke.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ensure, Error, Result};
use crate::fft::CenteredFft;
use crate::image::{ComplexImage, Image};
use crate::projection::{self, check_angles, pad_offset, AngleSchedule, Sinogram, UndersampleMode};

/// Complex-valued projections, e.g. from a complex image or from k-space.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSinogram {
    pub angles: Vec<f64>,
    pub num_bins: usize,
    pub bin_spacing: f64,
    pub center: f64,
    pub data: Vec<Complex64>,
}

impl ComplexSinogram {
    pub fn from_parts(re: &Sinogram, im: &Sinogram) -> Result<Self> {
        ensure!(
            re.angles == im.angles && re.num_bins == im.num_bins && re.center == im.center,
            Shape,
            "real and imaginary sinograms differ in geometry"
        );
        Ok(Self {
            angles: re.angles.clone(),
            num_bins: re.num_bins,
            bin_spacing: re.bin_spacing,
            center: re.center,
            data: re
                .data
                .iter()
                .zip(&im.data)
                .map(|(&a, &b)| Complex64::new(a, b))
                .collect(),
        })
    }

    pub fn from_real(sino: &Sinogram) -> Self {
        Self {
            angles: sino.angles.clone(),
            num_bins: sino.num_bins,
            bin_spacing: sino.bin_spacing,
            center: sino.center,
            data: sino.data.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    pub fn num_angles(&self) -> usize {
        self.angles.len()
    }

    fn channel(&self, f: impl Fn(&Complex64) -> f64) -> Sinogram {
        Sinogram {
            angles: self.angles.clone(),
            num_bins: self.num_bins,
            bin_spacing: self.bin_spacing,
            center: self.center,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn re(&self) -> Sinogram {
        self.channel(|z| z.re)
    }

    pub fn im(&self) -> Sinogram {
        self.channel(|z| z.im)
    }

    pub fn magnitude(&self) -> Sinogram {
        self.channel(|z| z.norm())
    }
}

/// Spoke samples, one row of `pad_length` complex values per angle.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialKSpace {
    pub angles: Vec<f64>,
    /// Readout length before zero-padding.
    pub num_samples: usize,
    pub pad_length: usize,
    /// Detector spacing of the underlying projections.
    pub bin_spacing: f64,
    /// Fractional index of `t = 0` in the padded projection frame.
    pub center: f64,
    pub data: Vec<Complex64>,
}

impl RadialKSpace {
    pub fn num_spokes(&self) -> usize {
        self.angles.len()
    }

    pub fn spoke(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.pad_length..(i + 1) * self.pad_length]
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.data.len() == self.angles.len() * self.pad_length,
            Shape,
            "k-space has {} samples, expected {} spokes of {}",
            self.data.len(),
            self.angles.len(),
            self.pad_length
        );
        ensure!(self.pad_length >= 1, Shape, "empty spokes");
        check_angles(&self.angles)
    }

    pub fn undersample(
        &self,
        schedule: &AngleSchedule,
        keep: usize,
        mode: UndersampleMode,
    ) -> Result<(RadialKSpace, AngleSchedule)> {
        ensure!(
            schedule.angles == self.angles,
            InvalidArgument,
            "schedule does not match k-space angles"
        );
        let (data, sched) = projection::undersample(&self.data, self.pad_length, schedule, keep, mode)?;
        Ok((
            RadialKSpace {
                angles: sched.angles.clone(),
                data,
                ..self.clone()
            },
            sched,
        ))
    }
}

/// Desk-scale default zero-pad: next power of two at or above `2 * num_bins`.
pub fn default_pad_length(num_bins: usize) -> usize {
    (2 * num_bins).next_power_of_two()
}

pub fn sinogram_to_kspace(sino: &Sinogram, pad_length: usize) -> Result<RadialKSpace> {
    complex_sinogram_to_kspace(&ComplexSinogram::from_real(sino), pad_length)
}

pub fn complex_sinogram_to_kspace(sino: &ComplexSinogram, pad_length: usize) -> Result<RadialKSpace> {
    ensure!(
        pad_length >= sino.num_bins,
        InvalidArgument,
        "pad length {pad_length} is shorter than {} bins",
        sino.num_bins
    );
    check_angles(&sino.angles)?;
    let nb = sino.num_bins;
    let offset = pad_offset(nb, pad_length);
    let mut fft = CenteredFft::new(pad_length);
    let mut data = vec![Complex64::new(0.0, 0.0); sino.num_angles() * pad_length];
    for (row_in, row_out) in sino.data.chunks_exact(nb).zip(data.chunks_exact_mut(pad_length)) {
        row_out[offset..offset + nb].copy_from_slice(row_in);
        fft.forward(row_out);
    }
    Ok(RadialKSpace {
        angles: sino.angles.clone(),
        num_samples: nb,
        pad_length,
        bin_spacing: sino.bin_spacing,
        center: sino.center + offset as f64,
        data,
    })
}

/// Per-spoke inverse DFT; the result lives on the padded detector grid.
pub fn kspace_to_sinogram(k: &RadialKSpace) -> Result<ComplexSinogram> {
    k.validate()?;
    let l = k.pad_length;
    let mut fft = CenteredFft::new(l);
    let mut data = k.data.clone();
    for row in data.chunks_exact_mut(l) {
        fft.inverse(row);
    }
    Ok(ComplexSinogram {
        angles: k.angles.clone(),
        num_bins: l,
        bin_spacing: k.bin_spacing,
        center: k.center,
        data,
    })
}

/// Magnitude of the spoke-wise inverse DFT, cropped back to the unpadded
/// detector: the real sinogram that iterative reconstructors fit.
pub fn measured_sinogram(k: &RadialKSpace) -> Result<Sinogram> {
    let full = kspace_to_sinogram(k)?.magnitude();
    let nb = k.num_samples;
    ensure!(
        nb >= 1 && nb <= k.pad_length,
        Shape,
        "k-space readout length {nb} exceeds its padding"
    );
    let off = pad_offset(nb, k.pad_length);
    let mut data = Vec::with_capacity(k.num_spokes() * nb);
    for i in 0..k.num_spokes() {
        data.extend_from_slice(&full.row(i)[off..off + nb]);
    }
    Sinogram::with_center(k.angles.clone(), nb, k.bin_spacing, k.center - off as f64, data)
}

/// Project real and imaginary channels of a complex image separately.
pub fn radon_forward_complex(
    image: &ComplexImage,
    schedule: &AngleSchedule,
    num_bins: usize,
) -> Result<ComplexSinogram> {
    let re = projection::radon_forward(&image.re(), schedule, num_bins)?;
    let im = projection::radon_forward(&image.im(), schedule, num_bins)?;
    ComplexSinogram::from_parts(&re, &im)
}

/// Simulate a fully sampled single-coil radial acquisition of `image`.
pub fn acquire(
    image: &ComplexImage,
    schedule: &AngleSchedule,
    num_bins: usize,
    pad_length: usize,
) -> Result<RadialKSpace> {
    let sino = radon_forward_complex(image, schedule, num_bins)?;
    complex_sinogram_to_kspace(&sino, pad_length)
}

/// Receive-coil sensitivity maps.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilSet {
    pub maps: Vec<ComplexImage>,
}

impl CoilSet {
    pub fn new(maps: Vec<ComplexImage>) -> Result<Self> {
        ensure!(!maps.is_empty(), InvalidArgument, "coil set is empty");
        let dims = maps[0].dims();
        ensure!(maps.iter().all(|m| m.dims() == dims), Shape, "coil maps differ in size");
        Ok(Self { maps })
    }

    pub fn num_coils(&self) -> usize {
        self.maps.len()
    }

    /// Smooth Gaussian-magnitude maps centred on a ring around the object,
    /// each with a random linear phase ramp.
    pub fn gaussian(num_coils: usize, size: usize, seed: u64) -> Result<Self> {
        ensure!(num_coils >= 1, InvalidArgument, "need at least one coil");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = (size as f64 - 1.0) / 2.0;
        let half = size as f64 / 2.0;
        let width = 0.9;
        let mut maps = Vec::with_capacity(num_coils);
        for j in 0..num_coils {
            let phi = std::f64::consts::TAU * j as f64 / num_coils as f64;
            let (cx, cy) = (0.8 * phi.cos(), 0.8 * phi.sin());
            let ramp_x = rng.random_range(-1.5..1.5);
            let ramp_y = rng.random_range(-1.5..1.5);
            let phase0 = rng.random_range(0.0..std::f64::consts::TAU);
            let mut data = Vec::with_capacity(size * size);
            for row in 0..size {
                let y = (c - row as f64) / half;
                for col in 0..size {
                    let x = (col as f64 - c) / half;
                    let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                    let mag = (-d2 / (2.0 * width * width)).exp();
                    data.push(Complex64::from_polar(mag, phase0 + ramp_x * x + ramp_y * y));
                }
            }
            maps.push(ComplexImage::from_vec(size, size, data)?);
        }
        Self::new(maps)
    }

    /// Pixelwise root-sum-of-squares of the map magnitudes.
    pub fn ssos(&self) -> Image {
        let (h, w) = self.maps[0].dims();
        let data = (0..h * w)
            .map(|i| self.maps.iter().map(|m| m.data()[i].norm_sqr()).sum::<f64>().sqrt())
            .collect();
        Image::from_vec(h, w, data).expect("shape preserved")
    }
}

/// Coil images `image ⊙ map_c`.
pub fn simulate_coils(image: &Image, coils: &CoilSet) -> Result<Vec<ComplexImage>> {
    coils
        .maps
        .iter()
        .map(|m| {
            ensure!(
                m.dims() == image.dims(),
                Shape,
                "coil map {:?} does not match image {:?}",
                m.dims(),
                image.dims()
            );
            let data = m.data().iter().zip(image.data()).map(|(s, &v)| s * v).collect();
            ComplexImage::from_vec(image.height(), image.width(), data)
        })
        .collect()
}

/// Add i.i.d. circular complex Gaussian noise with standard deviation
/// `sigma` per component.
pub fn add_noise(k: &RadialKSpace, sigma: f64, seed: u64) -> Result<RadialKSpace> {
    ensure!(
        sigma >= 0.0 && sigma.is_finite(),
        InvalidArgument,
        "noise sigma must be non-negative, got {sigma}"
    );
    let mut out = k.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for z in out.data.iter_mut() {
        z.re += normal.sample(&mut rng);
        z.im += normal.sample(&mut rng);
    }
    Ok(out)
}
