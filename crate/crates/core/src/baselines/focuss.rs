//! FOCUSS: sparsity by iteratively reweighted, ridge-regularized least
//! squares with `x = W q`.

use serde::{Deserialize, Serialize};

use super::cg::conjugate_gradient;
use super::{IterationRecord, ReconTrace, SystemOperator};
use crate::error::{ensure, Result};
use crate::fbp::{fbp, Window};
use crate::image::Image;
use crate::projection::Sinogram;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FocussConfig {
    pub outer_iterations: usize,
    pub inner_cg_iterations: usize,
    /// Exponent `p` in `W = diag(max(|x|, floor)^p)`.
    pub weight_power: f64,
    /// Ridge weight as a fraction of `||Aᵀy||∞`.
    pub ridge_rel: f64,
    /// Weight floor as a fraction of `max |x₀|`.
    pub floor_rel: f64,
    pub cg_tolerance: f64,
}

impl Default for FocussConfig {
    fn default() -> Self {
        Self {
            outer_iterations: 10,
            inner_cg_iterations: 20,
            weight_power: 0.5,
            ridge_rel: 1e-6,
            floor_rel: 1e-6,
            cg_tolerance: 1e-10,
        }
    }
}

impl FocussConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.weight_power > 0.0 && self.weight_power <= 1.0,
            InvalidArgument,
            "FOCUSS weight power must lie in (0, 1], got {}",
            self.weight_power
        );
        ensure!(self.floor_rel > 0.0, InvalidArgument, "FOCUSS floor must be > 0");
        ensure!(
            self.ridge_rel >= 0.0,
            InvalidArgument,
            "FOCUSS ridge weight must be >= 0"
        );
        ensure!(
            self.inner_cg_iterations >= 1,
            InvalidArgument,
            "inner_cg_iterations must be >= 1"
        );
        ensure!(self.cg_tolerance > 0.0, InvalidArgument, "cg_tolerance must be > 0");
        Ok(())
    }
}

fn residual_norm(a: &SystemOperator, x: &[f64], y: &[f64]) -> f64 {
    (2.0 * super::half_sq_residual(a, x, y)).sqrt()
}

/// FOCUSS reconstruction of a `size`x`size` image from an FBP start. The
/// trace records `||y - Ax||` after each outer iteration.
pub fn focuss_reconstruct(sino: &Sinogram, size: usize, cfg: &FocussConfig) -> Result<(Image, ReconTrace)> {
    cfg.validate()?;
    let a = SystemOperator::new(sino, size)?;
    let y = &sino.data;
    let mut x = fbp(sino, size, Window::RamLak)?.into_vec();
    let mut trace = ReconTrace {
        initial_objective: residual_norm(&a, &x, y),
        iterations: Vec::with_capacity(cfg.outer_iterations),
    };
    let aty = a.adjoint(y);
    let lambda = cfg.ridge_rel * aty.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = cfg.floor_rel * x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ensure!(floor > 0.0, Numeric, "FOCUSS initialization is identically zero");

    for it in 1..=cfg.outer_iterations {
        let wts: Vec<f64> = x.iter().map(|v| v.abs().max(floor).powf(cfg.weight_power)).collect();
        let rhs: Vec<f64> = aty.iter().zip(&wts).map(|(g, w)| g * w).collect();
        let mut q = vec![0.0; x.len()];
        let info = conjugate_gradient(
            |v, out| {
                let wv: Vec<f64> = v.iter().zip(&wts).map(|(a, w)| a * w).collect();
                let back = a.adjoint(&a.forward(&wv));
                for i in 0..out.len() {
                    out[i] = wts[i] * back[i] + lambda * v[i];
                }
            },
            &rhs,
            &mut q,
            cfg.inner_cg_iterations,
            cfg.cg_tolerance,
        );
        x = q.iter().zip(&wts).map(|(q, w)| q * w).collect();
        ensure!(
            x.iter().all(|v| v.is_finite()),
            Numeric,
            "FOCUSS iterate became non-finite at iteration {it}"
        );
        trace.iterations.push(IterationRecord {
            iteration: it,
            objective: residual_norm(&a, &x, y),
            cg_iterations: info.iterations,
            cg_residual: info.relative_residual,
            cg_converged: info.converged,
        });
    }
    Ok((a.image(x)?, trace))
}
