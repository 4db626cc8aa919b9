//! Parallel-beam projection: spoke schedules, the Radon transform and
//! retrospective undersampling.
//!
//! The forward projector rotates the image by `-θ` with bilinear
//! interpolation and sums along the ray direction. Detector bin `k` sits at
//! `t = (k - center) * bin_spacing` and the ray through it is sampled at the
//! same lattice spacing, so at `θ = 0` every sample lands on a pixel centre.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::image::Image;

/// Golden-angle increment used for radial spoke ordering, `π (√5 - 1) / 2`
/// (≈ 111.246°).
pub const GOLDEN_ANGLE: f64 = 1.941_611_038_725_466_5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    Uniform,
    Golden,
}

impl ScheduleMode {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Self::Uniform),
            "golden" => Ok(Self::Golden),
            other => Err(Error::InvalidArgument(format!("unknown schedule mode '{other}'"))),
        }
    }

    /// Undersampling rule that matches how spokes of this schedule were
    /// acquired: every n-th uniform view, or the first golden-angle spokes.
    pub fn natural_undersampling(self) -> UndersampleMode {
        match self {
            Self::Uniform => UndersampleMode::Stride,
            Self::Golden => UndersampleMode::Prefix,
        }
    }
}

/// Projection angles in acquisition order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleSchedule {
    pub mode: ScheduleMode,
    pub angles: Vec<f64>,
}

impl AngleSchedule {
    pub fn count(&self) -> usize {
        self.angles.len()
    }
}

/// `uniform`: `θ_k = kπ/N`. `golden`: `θ_n = (n Δ_G) mod π`.
pub fn make_schedule(mode: ScheduleMode, count: usize) -> Result<AngleSchedule> {
    ensure!(count >= 1, InvalidArgument, "schedule needs at least one angle");
    let angles = match mode {
        ScheduleMode::Uniform => (0..count).map(|k| k as f64 * PI / count as f64).collect(),
        ScheduleMode::Golden => (0..count).map(|n| (n as f64 * GOLDEN_ANGLE).rem_euclid(PI)).collect(),
    };
    Ok(AngleSchedule { mode, angles })
}

/// Line integrals `P_θ(t)`, one row per angle.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    pub angles: Vec<f64>,
    pub num_bins: usize,
    /// Detector bin spacing in the same length units as the pixel spacing.
    pub bin_spacing: f64,
    /// Fractional bin index of `t = 0`.
    pub center: f64,
    pub data: Vec<f64>,
}

impl Sinogram {
    pub fn new(angles: Vec<f64>, num_bins: usize, bin_spacing: f64, data: Vec<f64>) -> Result<Self> {
        let center = (num_bins as f64 - 1.0) / 2.0;
        Self::with_center(angles, num_bins, bin_spacing, center, data)
    }

    pub fn with_center(
        angles: Vec<f64>,
        num_bins: usize,
        bin_spacing: f64,
        center: f64,
        data: Vec<f64>,
    ) -> Result<Self> {
        ensure!(
            data.len() == angles.len() * num_bins,
            Shape,
            "sinogram data has {} entries, expected {}x{}",
            data.len(),
            angles.len(),
            num_bins
        );
        check_angles(&angles)?;
        ensure!(
            data.iter().all(|v| v.is_finite()),
            Numeric,
            "sinogram contains non-finite values"
        );
        Ok(Self {
            angles,
            num_bins,
            bin_spacing,
            center,
            data,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            data: vec![0.0; self.data.len()],
            ..self.clone()
        }
    }

    pub fn num_angles(&self) -> usize {
        self.angles.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.num_bins..(i + 1) * self.num_bins]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.num_bins;
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn dot(&self, other: &Sinogram) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Keep `keep` rows according to `mode`; see [`undersample`].
    pub fn undersample(
        &self,
        schedule: &AngleSchedule,
        keep: usize,
        mode: UndersampleMode,
    ) -> Result<(Sinogram, AngleSchedule)> {
        ensure!(
            schedule.angles == self.angles,
            InvalidArgument,
            "schedule does not match sinogram angles"
        );
        let (data, sched) = undersample(&self.data, self.num_bins, schedule, keep, mode)?;
        Ok((
            Sinogram {
                angles: sched.angles.clone(),
                data,
                ..self.clone()
            },
            sched,
        ))
    }

    /// Zero-pad every row to `length` bins, keeping `t = 0` as close as
    /// possible to index `length / 2`.
    pub fn zero_padded(&self, length: usize) -> Result<Sinogram> {
        ensure!(
            length >= self.num_bins,
            InvalidArgument,
            "pad length {length} is shorter than {} bins",
            self.num_bins
        );
        let offset = pad_offset(self.num_bins, length);
        let mut data = vec![0.0; self.num_angles() * length];
        for (i, row) in self.data.chunks_exact(self.num_bins).enumerate() {
            data[i * length + offset..i * length + offset + self.num_bins].copy_from_slice(row);
        }
        Ok(Sinogram {
            angles: self.angles.clone(),
            num_bins: length,
            bin_spacing: self.bin_spacing,
            center: self.center + offset as f64,
            data,
        })
    }
}

/// Offset at which a row of `bins` samples is placed inside `length`.
pub(crate) fn pad_offset(bins: usize, length: usize) -> usize {
    (length - bins).div_ceil(2)
}

pub(crate) fn check_angles(angles: &[f64]) -> Result<()> {
    ensure!(
        angles.iter().all(|&a| (0.0..PI).contains(&a)),
        InvalidArgument,
        "projection angles must lie in [0, π)"
    );
    Ok(())
}

/// Smallest bin count that covers the image diagonal.
pub fn min_num_bins(height: usize, width: usize) -> usize {
    ((height * height + width * width) as f64).sqrt().ceil() as usize
}

/// Default detector size `ceil(√2 N) + 1`, bumped by one when needed so that
/// `num_bins - N` is even and detector bins line up with pixel centres.
pub fn default_num_bins(size: usize) -> usize {
    let n = (std::f64::consts::SQRT_2 * size as f64).ceil() as usize + 1;
    if (n - size) % 2 == 0 {
        n
    } else {
        n + 1
    }
}

/// Geometry shared by the forward projector and its exact adjoint.
struct RayLattice {
    num_bins: usize,
    center: f64,
    /// Detector and ray sample spacing in pixel units.
    step: f64,
    col_center: f64,
    row_center: f64,
    height: usize,
    width: usize,
}

impl RayLattice {
    /// Visit every ray sample `(bin, row, col)` of angle `theta` in a fixed
    /// order, passing the fractional pixel coordinates.
    #[inline]
    fn for_each_sample(&self, theta: f64, mut f: impl FnMut(usize, f64, f64)) {
        let (sin_t, cos_t) = theta.sin_cos();
        let h = self.height as f64;
        let w = self.width as f64;
        for k in 0..self.num_bins {
            let t = (k as f64 - self.center) * self.step;
            for l in 0..self.num_bins {
                let s = (l as f64 - self.center) * self.step;
                let x = t * cos_t - s * sin_t;
                let y = t * sin_t + s * cos_t;
                let col = x + self.col_center;
                let row = self.row_center - y;
                if col > -1.0 && col < w && row > -1.0 && row < h {
                    f(k, row, col);
                }
            }
        }
    }
}

#[inline]
fn bilinear_taps(row: f64, col: f64, height: usize, width: usize, mut f: impl FnMut(usize, f64)) {
    let r0 = row.floor();
    let c0 = col.floor();
    let fr = row - r0;
    let fc = col - c0;
    let r0 = r0 as isize;
    let c0 = c0 as isize;
    let taps = [
        (r0, c0, (1.0 - fr) * (1.0 - fc)),
        (r0, c0 + 1, (1.0 - fr) * fc),
        (r0 + 1, c0, fr * (1.0 - fc)),
        (r0 + 1, c0 + 1, fr * fc),
    ];
    for (r, c, wgt) in taps {
        if r >= 0 && c >= 0 && (r as usize) < height && (c as usize) < width {
            f(r as usize * width + c as usize, wgt);
        }
    }
}

fn lattice_for(image_h: usize, image_w: usize, num_bins: usize, center: f64, step: f64) -> RayLattice {
    RayLattice {
        num_bins,
        center,
        step,
        col_center: (image_w as f64 - 1.0) / 2.0,
        row_center: (image_h as f64 - 1.0) / 2.0,
        height: image_h,
        width: image_w,
    }
}

/// Radon transform of `image` over the schedule's angles.
pub fn radon_forward(image: &Image, schedule: &AngleSchedule, num_bins: usize) -> Result<Sinogram> {
    check_angles(&schedule.angles)?;
    radon_forward_angles(image, &schedule.angles, num_bins)
}

/// Radon transform at arbitrary angles (no `[0, π)` restriction).
pub fn radon_forward_angles(image: &Image, angles: &[f64], num_bins: usize) -> Result<Sinogram> {
    let (h, w) = image.dims();
    let needed = min_num_bins(h, w);
    ensure!(
        num_bins >= needed,
        InvalidArgument,
        "{num_bins} detector bins truncate a {h}x{w} image (need >= {needed})"
    );
    ensure!(!angles.is_empty(), InvalidArgument, "no projection angles");
    let center = (num_bins as f64 - 1.0) / 2.0;
    let lattice = lattice_for(h, w, num_bins, center, 1.0);
    let ds = image.pixel_spacing();
    let pix = image.data();
    let mut data = vec![0.0; angles.len() * num_bins];
    for (a, &theta) in angles.iter().enumerate() {
        let row_out = &mut data[a * num_bins..(a + 1) * num_bins];
        lattice.for_each_sample(theta, |k, r, c| {
            let mut v = 0.0;
            bilinear_taps(r, c, h, w, |idx, wgt| v += wgt * pix[idx]);
            row_out[k] += v;
        });
        for v in row_out.iter_mut() {
            *v *= ds;
        }
    }
    Ok(Sinogram {
        angles: angles.to_vec(),
        num_bins,
        bin_spacing: ds,
        center,
        data,
    })
}

/// Exact transpose of [`radon_forward`] (unfiltered, unscaled backprojection).
///
/// Satisfies `<radon(x), s> = <x, radon_adjoint(s)>` up to rounding. The
/// sinogram must use the projector's own detector layout.
pub fn radon_adjoint(sino: &Sinogram, height: usize, width: usize) -> Result<Image> {
    let (h, w) = (height, width);
    ensure!(
        sino.num_bins >= min_num_bins(h, w),
        InvalidArgument,
        "{} bins cannot cover a {h}x{w} image",
        sino.num_bins
    );
    let lattice = lattice_for(h, w, sino.num_bins, sino.center, 1.0);
    let ds = sino.bin_spacing;
    let mut out = vec![0.0; h * w];
    for (a, &theta) in sino.angles.iter().enumerate() {
        let row = sino.row(a);
        lattice.for_each_sample(theta, |k, r, c| {
            let v = row[k] * ds;
            if v != 0.0 {
                bilinear_taps(r, c, h, w, |idx, wgt| out[idx] += wgt * v);
            }
        });
    }
    let img = Image::from_vec(h, w, out)?;
    img.with_pixel_spacing(ds)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UndersampleMode {
    /// Every `(N / keep)`-th row, starting at row 0.
    Stride,
    /// The first `keep` rows in acquisition order.
    Prefix,
}

/// Row indices kept by an undersampling rule.
pub fn undersample_indices(total: usize, keep: usize, mode: UndersampleMode) -> Result<Vec<usize>> {
    ensure!(
        keep >= 1 && keep <= total,
        InvalidArgument,
        "cannot keep {keep} of {total} rows"
    );
    Ok(match mode {
        UndersampleMode::Prefix => (0..keep).collect(),
        UndersampleMode::Stride => {
            ensure!(
                total % keep == 0,
                InvalidArgument,
                "stride undersampling needs {total} divisible by {keep}"
            );
            let stride = total / keep;
            (0..keep).map(|i| i * stride).collect()
        }
    })
}

/// Retrospectively keep `keep` of the schedule's rows from a row-major array
/// with `row_len` entries per row.
pub fn undersample<T: Clone>(
    rows: &[T],
    row_len: usize,
    schedule: &AngleSchedule,
    keep: usize,
    mode: UndersampleMode,
) -> Result<(Vec<T>, AngleSchedule)> {
    ensure!(
        rows.len() == schedule.count() * row_len,
        Shape,
        "row array has {} entries, expected {} rows of {row_len}",
        rows.len(),
        schedule.count()
    );
    let idx = undersample_indices(schedule.count(), keep, mode)?;
    let mut out = Vec::with_capacity(keep * row_len);
    for &i in &idx {
        out.extend_from_slice(&rows[i * row_len..(i + 1) * row_len]);
    }
    let angles = idx.iter().map(|&i| schedule.angles[i]).collect();
    Ok((
        out,
        AngleSchedule {
            mode: schedule.mode,
            angles,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{make_phantom, Ellipse, EllipsePhantomSpec};

    #[test]
    fn golden_constant() {
        let expected = PI * (5f64.sqrt() - 1.0) / 2.0;
        assert!((GOLDEN_ANGLE - expected).abs() < 1e-15);
        assert!((GOLDEN_ANGLE.to_degrees() - 111.246).abs() < 1e-3);
    }

    #[test]
    fn uniform_schedule() {
        let s = make_schedule(ScheduleMode::Uniform, 4).unwrap();
        assert_eq!(s.angles, vec![0.0, PI / 4.0, PI / 2.0, 3.0 * PI / 4.0]);
        assert!(make_schedule(ScheduleMode::Golden, 0).is_err());
    }

    #[test]
    fn golden_schedule_two() {
        let s = make_schedule(ScheduleMode::Golden, 2).unwrap();
        assert_eq!(s.angles[0], 0.0);
        assert!((s.angles[1] - GOLDEN_ANGLE.rem_euclid(PI)).abs() < 1e-15);
    }

    #[test]
    fn stride_and_prefix() {
        let sched = make_schedule(ScheduleMode::Uniform, 180).unwrap();
        let rows: Vec<usize> = (0..180).collect();
        let (kept, s) = undersample(&rows, 1, &sched, 45, UndersampleMode::Stride).unwrap();
        assert_eq!(kept, (0..45).map(|i| 4 * i).collect::<Vec<_>>());
        assert_eq!(s.angles[1], sched.angles[4]);
        assert!(undersample(&rows, 1, &sched, 7, UndersampleMode::Stride).is_err());
        let (same, _) = undersample(&rows, 1, &sched, 180, UndersampleMode::Stride).unwrap();
        assert_eq!(same, rows);

        let golden = make_schedule(ScheduleMode::Golden, 302).unwrap();
        let rows: Vec<usize> = (0..302).collect();
        let (kept, s) = undersample(&rows, 1, &golden, 75, UndersampleMode::Prefix).unwrap();
        assert_eq!(kept, (0..75).collect::<Vec<_>>());
        assert_eq!(&s.angles[..], &golden.angles[..75]);
    }

    #[test]
    fn default_bins_align_with_pixels() {
        for n in [16, 63, 64, 128, 129] {
            let nb = default_num_bins(n);
            assert_eq!((nb - n) % 2, 0);
            assert!(nb >= min_num_bins(n, n));
        }
        assert_eq!(default_num_bins(128), 184);
    }

    #[test]
    fn truncating_detector_is_rejected() {
        let img = Image::zeros(32, 32);
        let s = make_schedule(ScheduleMode::Uniform, 4).unwrap();
        assert!(radon_forward(&img, &s, 40).is_err());
        assert!(radon_forward(&img, &s, 46).is_ok());
    }

    #[test]
    fn zero_image_zero_sinogram() {
        let img = Image::zeros(24, 24);
        let s = make_schedule(ScheduleMode::Golden, 7).unwrap();
        let sino = radon_forward(&img, &s, default_num_bins(24)).unwrap();
        assert!(sino.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn centered_impulse_peaks_at_center_bin() {
        let n = 33;
        let mut img = Image::zeros(n, n);
        img.set(16, 16, 1.0);
        let nb = default_num_bins(n);
        let s = make_schedule(ScheduleMode::Uniform, 12).unwrap();
        let sino = radon_forward(&img, &s, nb).unwrap();
        let mid = (nb - 1) / 2;
        for a in 0..12 {
            let row = sino.row(a);
            let argmax = (0..nb).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap();
            assert_eq!(argmax, mid, "angle {a}");
        }
    }

    #[test]
    fn axis_aligned_rows_are_exact_column_and_row_sums() {
        let img = make_phantom(&EllipsePhantomSpec::shepp_logan(), 32).unwrap();
        let nb = default_num_bins(32);
        let sino = radon_forward_angles(&img, &[0.0, PI / 2.0], nb).unwrap();
        let off = (nb - 32) / 2;
        for col in 0..32 {
            let colsum: f64 = (0..32).map(|r| img.get(r, col)).sum();
            assert!((sino.row(0)[off + col] - colsum).abs() < 1e-12);
        }
        // θ = π/2 integrates along x; t = y increases upward (row decreases)
        for row in 0..32 {
            let rowsum: f64 = (0..32).map(|c| img.get(row, c)).sum();
            assert!((sino.row(1)[off + 31 - row] - rowsum).abs() < 1e-9);
        }
    }

    #[test]
    fn disk_matches_analytic_chords() {
        let n = 128;
        let radius_norm = 0.6;
        let spec = EllipsePhantomSpec::new(vec![Ellipse::disk(0.0, 0.0, radius_norm, 1.0)]);
        let img = make_phantom(&spec, n).unwrap();
        let nb = default_num_bins(n);
        let s = make_schedule(ScheduleMode::Uniform, 9).unwrap();
        let sino = radon_forward(&img, &s, nb).unwrap();
        let r = radius_norm * n as f64 / 2.0;
        for a in 0..9 {
            let mut num = 0.0;
            let mut den = 0.0;
            for k in 0..nb {
                let t = k as f64 - sino.center;
                let exact = if t.abs() < r { 2.0 * (r * r - t * t).sqrt() } else { 0.0 };
                num += (sino.row(a)[k] - exact).powi(2);
                den += exact * exact;
            }
            assert!((num / den).sqrt() < 0.02, "angle {a}: {}", (num / den).sqrt());
        }
    }
}
