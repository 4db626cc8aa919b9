//! Residual multi-scale U-Net with hand-written backward passes.

pub mod layers;
mod params;
mod tensor;
mod unet;

pub use params::{ArchConfig, BlockIndex, Layout, NamedTensor, NetworkParams, ParamKind};
pub use tensor::Tensor4;
pub use unet::{backward, forward_infer, forward_train, predict, update_bn_stats, ForwardCache, Mode};

/// Helpers for finite-difference gradient checks, shared by unit and
/// integration tests.
pub mod gradcheck {
    /// `|a − b| / max(|a| + |b|, floor)`.
    pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
        (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(floor)
    }

    /// Central difference of `f` along coordinate `i` of `x`.
    pub fn central_diff(x: &[f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        let mut xp = x.to_vec();
        xp[i] += h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        (fp - fm) / (2.0 * h)
    }

    /// Largest relative error between `analytic` and central differences of
    /// `f` over every coordinate.
    pub fn max_rel_err(x: &[f64], analytic: &[f64], h: f64, floor: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        (0..x.len())
            .map(|i| rel_err(analytic[i], central_diff(x, i, h, &mut f), floor))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests;
