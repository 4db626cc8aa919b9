//! Sparse-view radial reconstruction: phantoms, projection, radial k-space,
//! filtered backprojection, a residual U-Net with training and fine-tuning,
//! iterative baselines, evaluation and file formats.

pub mod baselines;
mod error;
pub mod eval;

pub mod fbp;
pub mod fft;
pub mod image;
pub mod io;
pub mod kspace;
pub mod metrics;
pub mod network;
pub mod phantom;
pub mod projection;
pub mod train;

pub use error::{Error, Result};
