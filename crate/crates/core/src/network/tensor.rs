use crate::error::{ensure, Result};
use crate::image::Image;

/// Dense `N × C × H × W` activations, row-major in that order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            data.len() == n * c * h * w,
            Shape,
            "tensor data has {} values, shape {n}x{c}x{h}x{w} needs {}",
            data.len(),
            n * c * h * w
        );
        ensure!(
            data.iter().all(|v| v.is_finite()),
            Numeric,
            "tensor contains non-finite values"
        );
        Ok(Self { n, c, h, w, data })
    }

    /// Stack single-channel images into a batch.
    pub fn from_images(images: &[&Image]) -> Result<Self> {
        ensure!(!images.is_empty(), InvalidArgument, "empty image batch");
        let (h, w) = images[0].dims();
        ensure!(
            images.iter().all(|im| im.dims() == (h, w)),
            Shape,
            "batch images differ in size"
        );
        let mut data = Vec::with_capacity(images.len() * h * w);
        for im in images {
            data.extend_from_slice(im.data());
        }
        Ok(Self {
            n: images.len(),
            c: 1,
            h,
            w,
            data,
        })
    }

    /// Channel 0 of sample `i` as an image.
    pub fn image(&self, i: usize) -> Image {
        let hw = self.h * self.w;
        let start = i * self.c * hw;
        Image::from_vec(self.h, self.w, self.data[start..start + hw].to_vec()).expect("tensor values are finite")
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    /// The `H × W` plane of sample `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let hw = self.plane_len();
        let start = (n * self.c + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let hw = self.plane_len();
        let start = (n * self.c + c) * hw;
        &mut self.data[start..start + hw]
    }

    pub fn dot(&self, other: &Tensor4) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
