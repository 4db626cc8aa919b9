//! Compressed-sensing comparison reconstructors: TV-regularized least squares
//! via ADMM, and FOCUSS reweighted least squares.
//!
//! Both work against the real sinogram with the rotate-and-sum projector as
//! the system matrix and its exact transpose as `Aᵀ`.

mod cg;
mod focuss;
mod tv;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::image::Image;
use crate::projection::{radon_adjoint, radon_forward_angles, Sinogram};

pub use cg::{conjugate_gradient, CgInfo};
pub use focuss::{focuss_reconstruct, FocussConfig};
pub use tv::{tv_reconstruct, TvConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TvFlavor {
    #[default]
    Isotropic,
    Anisotropic,
}

impl TvFlavor {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "isotropic" | "iso" => Ok(Self::Isotropic),
            "anisotropic" | "aniso" => Ok(Self::Anisotropic),
            _ => Err(Error::InvalidArgument(format!("unknown TV flavor {name:?}"))),
        }
    }
}

/// Forward differences with a zero last difference along each axis.
pub(crate) fn gradient(x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; h * w];
    let mut dy = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if c + 1 < w {
                dx[i] = x[i + 1] - x[i];
            }
            if r + 1 < h {
                dy[i] = x[i + w] - x[i];
            }
        }
    }
    (dx, dy)
}

/// Transpose of [`gradient`] (negative divergence).
pub(crate) fn gradient_adjoint(dx: &[f64], dy: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if c + 1 < w {
                out[i] -= dx[i];
                out[i + 1] += dx[i];
            }
            if r + 1 < h {
                out[i] -= dy[i];
                out[i + w] += dy[i];
            }
        }
    }
    out
}

fn tv_of(dx: &[f64], dy: &[f64], flavor: TvFlavor) -> f64 {
    match flavor {
        TvFlavor::Isotropic => dx.iter().zip(dy).map(|(a, b)| a.hypot(*b)).sum(),
        TvFlavor::Anisotropic => dx.iter().zip(dy).map(|(a, b)| a.abs() + b.abs()).sum(),
    }
}

/// Total variation with forward differences and a zero-gradient boundary.
pub fn tv_value(x: &Image, flavor: TvFlavor) -> f64 {
    let (h, w) = x.dims();
    let (dx, dy) = gradient(x.data(), h, w);
    tv_of(&dx, &dy, flavor)
}

/// The system matrix `A` of one sparse-view acquisition.
pub(crate) struct SystemOperator {
    template: Sinogram,
    height: usize,
    width: usize,
}

impl SystemOperator {
    pub(crate) fn new(sino: &Sinogram, size: usize) -> Result<Self> {
        let center = (sino.num_bins as f64 - 1.0) / 2.0;
        ensure!(
            sino.center == center,
            InvalidArgument,
            "sinogram is not in the projector's detector layout (centre {} vs {center})",
            sino.center
        );
        ensure!(sino.num_angles() > 0, InvalidArgument, "sinogram has no views");
        ensure!(size > 0, InvalidArgument, "image size must be positive");
        // Surface a truncating detector now rather than inside the loop.
        radon_adjoint(&sino.zeros_like(), size, size)?;
        Ok(Self {
            template: sino.zeros_like(),
            height: size,
            width: size,
        })
    }

    pub(crate) fn forward(&self, x: &[f64]) -> Vec<f64> {
        let img = Image::from_vec(self.height, self.width, x.to_vec())
            .and_then(|i| i.with_pixel_spacing(self.template.bin_spacing))
            .expect("operator input has the operator's shape");
        radon_forward_angles(&img, &self.template.angles, self.template.num_bins)
            .expect("detector checked at construction")
            .data
    }

    pub(crate) fn adjoint(&self, s: &[f64]) -> Vec<f64> {
        let sino = Sinogram {
            data: s.to_vec(),
            ..self.template.clone()
        };
        radon_adjoint(&sino, self.height, self.width)
            .expect("detector checked at construction")
            .into_vec()
    }

    pub(crate) fn image(&self, x: Vec<f64>) -> Result<Image> {
        Image::from_vec(self.height, self.width, x)?.with_pixel_spacing(self.template.bin_spacing)
    }
}

pub(crate) fn half_sq_residual(a: &SystemOperator, x: &[f64], y: &[f64]) -> f64 {
    0.5 * a.forward(x).iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>()
}

/// One outer iteration of an iterative reconstructor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// TV: `½||y - Ax||² + λ TV(x)`. FOCUSS: `||y - Ax||`.
    pub objective: f64,
    pub cg_iterations: usize,
    pub cg_residual: f64,
    pub cg_converged: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReconTrace {
    /// Objective of the initialization, before any iteration.
    pub initial_objective: f64,
    pub iterations: Vec<IterationRecord>,
}

impl ReconTrace {
    pub fn objectives(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.objective).collect()
    }

    /// Number of inner solves that stopped at the iteration cap.
    pub fn cg_warnings(&self) -> usize {
        self.iterations.iter().filter(|r| !r.cg_converged).count()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut buf = String::from("iteration,objective,cg_iterations,cg_residual,cg_converged\n");
        buf.push_str(&format!("0,{:e},0,0,true\n", self.initial_objective));
        for r in &self.iterations {
            buf.push_str(&format!(
                "{},{:e},{},{:e},{}\n",
                r.iteration, r.objective, r.cg_iterations, r.cg_residual, r.cg_converged
            ));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force_tv(x: &Image, flavor: TvFlavor) -> f64 {
        let (h, w) = x.dims();
        let mut total = 0.0;
        for r in 0..h {
            for c in 0..w {
                let gx = if c + 1 < w { x.get(r, c + 1) - x.get(r, c) } else { 0.0 };
                let gy = if r + 1 < h { x.get(r + 1, c) - x.get(r, c) } else { 0.0 };
                total += match flavor {
                    TvFlavor::Isotropic => (gx * gx + gy * gy).sqrt(),
                    TvFlavor::Anisotropic => gx.abs() + gy.abs(),
                };
            }
        }
        total
    }

    #[test]
    fn constant_image_has_zero_tv() {
        let x = Image::from_vec(5, 7, vec![2.5; 35]).unwrap();
        assert_eq!(tv_value(&x, TvFlavor::Isotropic), 0.0);
        assert_eq!(tv_value(&x, TvFlavor::Anisotropic), 0.0);
    }

    #[test]
    fn unit_step_edge_has_tv_equal_to_its_length() {
        let (h, w) = (9, 6);
        let mut x = Image::zeros(h, w);
        for r in 0..h {
            for c in 3..w {
                x.set(r, c, 1.0);
            }
        }
        assert_eq!(tv_value(&x, TvFlavor::Anisotropic), h as f64);
        assert_eq!(tv_value(&x, TvFlavor::Isotropic), h as f64);
    }

    proptest! {
        #[test]
        fn tv_matches_direct_summation(data in proptest::collection::vec(-3.0f64..3.0, 36)) {
            let x = Image::from_vec(6, 6, data).unwrap();
            for f in [TvFlavor::Isotropic, TvFlavor::Anisotropic] {
                prop_assert!((tv_value(&x, f) - brute_force_tv(&x, f)).abs() < 1e-12);
            }
        }

        #[test]
        fn gradient_adjoint_is_transpose(
            x in proptest::collection::vec(-1.0f64..1.0, 20),
            gx in proptest::collection::vec(-1.0f64..1.0, 20),
            gy in proptest::collection::vec(-1.0f64..1.0, 20),
        ) {
            let (dx, dy) = gradient(&x, 4, 5);
            let lhs: f64 = dx.iter().zip(&gx).chain(dy.iter().zip(&gy)).map(|(a, b)| a * b).sum();
            let back = gradient_adjoint(&gx, &gy, 4, 5);
            let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn flavor_parse() {
        assert_eq!(TvFlavor::parse("iso").unwrap(), TvFlavor::Isotropic);
        assert_eq!(TvFlavor::parse("Anisotropic").unwrap(), TvFlavor::Anisotropic);
        assert!(TvFlavor::parse("l0").is_err());
    }
}
