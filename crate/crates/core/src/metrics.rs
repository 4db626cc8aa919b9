//! Scalar image-quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::image::Image;

/// Quality figures for one reconstruction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub nmse: f64,
    /// Decibels; `f64::INFINITY` when the estimate is exact.
    pub psnr: f64,
    /// Seconds spent producing the estimate.
    pub wall_time: f64,
}

/// Normalized mean squared error `||x - x̂||² / ||x||²`.
pub fn nmse(reference: &Image, estimate: &Image) -> Result<f64> {
    reference.same_dims(estimate)?;
    let denom = reference.norm_sq();
    ensure!(denom > 0.0, InvalidArgument, "nmse reference image is all zeros");
    let num: f64 = reference
        .data()
        .iter()
        .zip(estimate.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(num / denom)
}

pub fn mse(reference: &Image, estimate: &Image) -> Result<f64> {
    reference.same_dims(estimate)?;
    let n = reference.data().len().max(1) as f64;
    let sum: f64 = reference
        .data()
        .iter()
        .zip(estimate.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / n)
}

/// Peak signal-to-noise ratio `10 log10(peak² / MSE)` in dB.
///
/// Identical images give `f64::INFINITY`, which callers treat as "exact".
pub fn psnr(reference: &Image, estimate: &Image, peak: f64) -> Result<f64> {
    ensure!(peak > 0.0, InvalidArgument, "psnr peak must be positive");
    let err = mse(reference, estimate)?;
    Ok(psnr_from_mse(err, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}
