//! Real and complex 2-D pixel grids.
//!
//! Both grids are row-major. Row 0 is the top of the image; the physical
//! `y` axis points up, so `y = (c - row)` with `c = (height - 1) / 2`.

use num_complex::Complex64;

use crate::error::{ensure, Error, Result};

/// Real-valued image on a regular grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixel_spacing: f64,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixel_spacing: 1.0,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            data.len() == height * width,
            Shape,
            "image data has {} entries, expected {}x{}",
            data.len(),
            height,
            width
        );
        ensure!(
            data.iter().all(|v| v.is_finite()),
            Numeric,
            "image data contains non-finite values"
        );
        Ok(Self {
            height,
            width,
            pixel_spacing: 1.0,
            data,
        })
    }

    pub fn with_pixel_spacing(mut self, spacing: f64) -> Result<Self> {
        ensure!(
            spacing > 0.0 && spacing.is_finite(),
            InvalidArgument,
            "pixel spacing must be positive, got {spacing}"
        );
        self.pixel_spacing = spacing;
        Ok(self)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixel_spacing(&self) -> f64 {
        self.pixel_spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    /// Physical centre of the grid in pixel index units, `((w-1)/2, (h-1)/2)`.
    pub fn center(&self) -> (f64, f64) {
        ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
    }

    pub fn same_dims(&self, other: &Image) -> Result<()> {
        ensure!(
            self.dims() == other.dims(),
            Shape,
            "image dimensions differ: {:?} vs {:?}",
            self.dims(),
            other.dims()
        );
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn scaled(&self, factor: f64) -> Image {
        self.map(|v| v * factor)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Pixelwise `self + other`.
    pub fn add(&self, other: &Image) -> Result<Image> {
        self.same_dims(other)?;
        Ok(Image {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
            ..self.clone()
        })
    }

    /// Extract the `size`x`size` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Image> {
        ensure!(
            row + height <= self.height && col + width <= self.width,
            Shape,
            "crop {}x{} at ({row},{col}) exceeds {}x{} image",
            height,
            width,
            self.height,
            self.width
        );
        let mut data = Vec::with_capacity(height * width);
        for r in row..row + height {
            let start = r * self.width + col;
            data.extend_from_slice(&self.data[start..start + width]);
        }
        Ok(Image {
            height,
            width,
            pixel_spacing: self.pixel_spacing,
            data,
        })
    }
}

/// Complex-valued image, e.g. a single-coil reconstruction before magnitude.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexImage {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl ComplexImage {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        ensure!(
            data.len() == height * width,
            Shape,
            "complex image data has {} entries, expected {}x{}",
            data.len(),
            height,
            width
        );
        ensure!(
            data.iter().all(|z| z.re.is_finite() && z.im.is_finite()),
            Numeric,
            "complex image contains non-finite values"
        );
        Ok(Self { height, width, data })
    }

    pub fn from_real(image: &Image) -> Self {
        Self {
            height: image.height(),
            width: image.width(),
            data: image.data().iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    /// Assemble from separate real and imaginary channels.
    pub fn from_parts(re: &Image, im: &Image) -> Result<Self> {
        re.same_dims(im)?;
        Ok(Self {
            height: re.height(),
            width: re.width(),
            data: re
                .data()
                .iter()
                .zip(im.data())
                .map(|(&a, &b)| Complex64::new(a, b))
                .collect(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn re(&self) -> Image {
        self.channel(|z| z.re)
    }

    pub fn im(&self) -> Image {
        self.channel(|z| z.im)
    }

    pub fn magnitude(&self) -> Image {
        self.channel(|z| z.norm())
    }

    fn channel(&self, f: impl Fn(&Complex64) -> f64) -> Image {
        let data = self.data.iter().map(f).collect();
        Image::from_vec(self.height, self.width, data).expect("channel keeps shape")
    }
}

impl From<&Image> for ComplexImage {
    fn from(image: &Image) -> Self {
        ComplexImage::from_real(image)
    }
}

pub(crate) fn check_square(image: &Image) -> Result<usize> {
    if image.height() != image.width() {
        return Err(Error::Shape(format!(
            "expected a square image, got {}x{}",
            image.height(),
            image.width()
        )));
    }
    Ok(image.height())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length_and_finiteness() {
        assert!(Image::from_vec(2, 2, vec![0.0; 3]).is_err());
        assert!(Image::from_vec(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(Image::from_vec(1, 2, vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn crop_extracts_window() {
        let img = Image::from_vec(3, 3, (0..9).map(f64::from).collect()).unwrap();
        let c = img.crop(1, 1, 2, 2).unwrap();
        assert_eq!(c.data(), &[4.0, 5.0, 7.0, 8.0]);
        assert!(img.crop(2, 2, 2, 2).is_err());
    }

    #[test]
    fn complex_channels() {
        let re = Image::from_vec(1, 2, vec![3.0, 0.0]).unwrap();
        let im = Image::from_vec(1, 2, vec![4.0, -1.0]).unwrap();
        let z = ComplexImage::from_parts(&re, &im).unwrap();
        assert_eq!(z.magnitude().data(), &[5.0, 1.0]);
        assert_eq!(z.re(), re);
        assert_eq!(z.im(), im);
    }
}
