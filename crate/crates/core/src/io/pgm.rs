//! 16-bit binary PGM (P5) export with linear windowing.

use std::path::Path;

use crate::error::{ensure, Error, Result};
use crate::image::Image;

const MAXVAL: f64 = 65535.0;

/// Gray level of `v` under the window `[lo, hi]`, clamped to `0..=65535`.
pub fn window_level(v: f64, lo: f64, hi: f64) -> u16 {
    let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    (t * MAXVAL).round() as u16
}

/// Encode as P5 with maxval 65535 (samples big-endian, as PGM requires).
pub fn encode_pgm(image: &Image, lo: f64, hi: f64) -> Result<Vec<u8>> {
    ensure!(
        lo.is_finite() && hi.is_finite() && hi > lo,
        InvalidArgument,
        "PGM window needs hi > lo, got [{lo}, {hi}]"
    );
    let (h, w) = image.dims();
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    out.reserve(2 * h * w);
    for &v in image.data() {
        out.extend_from_slice(&window_level(v, lo, hi).to_be_bytes());
    }
    Ok(out)
}

pub fn export_pgm(image: &Image, path: &Path, window: (f64, f64)) -> Result<()> {
    let bytes = encode_pgm(image, window.0, window.1)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Full-range window `[min, max]`; a flat image gets a unit-wide window.
pub fn auto_window(image: &Image) -> (f64, f64) {
    let (lo, hi) = (image.min(), image.max());
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    }
}
