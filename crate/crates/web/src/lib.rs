//! Browser demo: pick a phantom, drop spokes, compare FBP with TV.

use wasm_bindgen::prelude::*;

use prmr::baselines::{tv_reconstruct, TvConfig};
use prmr::fbp::fbp_magnitude;
use prmr::image::Image;
use prmr::io::pgm::auto_window;
use prmr::kspace::{measured_sinogram, RadialKSpace};
use prmr::metrics::nmse;
use prmr::phantom::PhantomFamily;
use prmr::train::AcquisitionGeometry;

fn js_err(e: prmr::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Gray RGBA bytes for a canvas `ImageData`, windowed to `[lo, hi]`.
fn rgba(img: &Image, (lo, hi): (f64, f64)) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 * img.data().len());
    for &v in img.data() {
        let g = (255.0 * ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).round() as u8;
        out.extend_from_slice(&[g, g, g, 255]);
    }
    out
}

#[wasm_bindgen]
pub struct Demo {
    geometry: AcquisitionGeometry,
    size: usize,
    slice: usize,
    phantom: Image,
    label: Image,
    sparse: Option<RadialKSpace>,
    window: (f64, f64),
    last_nmse: f64,
}

#[wasm_bindgen]
impl Demo {
    /// `family` is one of shepp-logan, abdomen, brain, brain-variant.
    #[wasm_bindgen(constructor)]
    pub fn new(family: &str, size: usize, seed: u64, slice: usize, noise: f64) -> Result<Demo, JsError> {
        let fam = PhantomFamily::parse(family).map_err(js_err)?;
        let phantom = fam
            .images(seed, slice, 1, size)
            .map_err(js_err)?
            .pop()
            .ok_or_else(|| JsError::new("no phantom"))?;
        let geometry = AcquisitionGeometry {
            noise_sigma: noise,
            noise_seed: seed,
            ..AcquisitionGeometry::default()
        };
        let (full, _) = geometry.measure(&phantom, slice, geometry.full_views).map_err(js_err)?;
        let label = fbp_magnitude(&full, size, geometry.window).map_err(js_err)?;
        let window = auto_window(&label);
        Ok(Demo {
            geometry,
            size,
            slice,
            phantom,
            label,
            sparse: None,
            window,
            last_nmse: f64::NAN,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[wasm_bindgen(js_name = fullViews)]
    pub fn full_views(&self) -> usize {
        self.geometry.full_views
    }

    pub fn phantom(&self) -> Vec<u8> {
        rgba(&self.phantom, auto_window(&self.phantom))
    }

    /// FBP of the fully sampled scan, the reference the errors are against.
    pub fn reference(&self) -> Vec<u8> {
        rgba(&self.label, self.window)
    }

    /// Keep `views` spokes and reconstruct them with FBP.
    pub fn fbp(&mut self, views: usize) -> Result<Vec<u8>, JsError> {
        let (_, sparse) = self
            .geometry
            .measure(&self.phantom, self.slice, views)
            .map_err(js_err)?;
        let img = fbp_magnitude(&sparse, self.size, self.geometry.window).map_err(js_err)?;
        self.sparse = Some(sparse);
        self.finish(&img)
    }

    /// TV-regularized reconstruction of the spokes kept by the last
    /// [`Demo::fbp`] call.
    pub fn tv(&mut self, lambda: f64, iterations: usize) -> Result<Vec<u8>, JsError> {
        let sparse = self.sparse.as_ref().ok_or_else(|| JsError::new("run fbp first"))?;
        let cfg = TvConfig {
            lambda,
            rho: lambda,
            iterations,
            ..TvConfig::default()
        };
        let sino = measured_sinogram(sparse).map_err(js_err)?;
        let (img, _) = tv_reconstruct(&sino, self.size, &cfg).map_err(js_err)?;
        self.finish(&img)
    }

    /// NMSE of the last reconstruction against the reference.
    pub fn nmse(&self) -> f64 {
        self.last_nmse
    }

    fn finish(&mut self, img: &Image) -> Result<Vec<u8>, JsError> {
        self.last_nmse = nmse(&self.label, img).map_err(js_err)?;
        Ok(rgba(img, self.window))
    }
}
