//! The `PRMR` tensor container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "PRMR" | version u16 = 1 | dtype u8 | ndim u8 | dims u64 × ndim
//!        | payload | metadata length u32 | metadata JSON (UTF-8)
//! ```
//!
//! dtype 0 is f32, 1 is f64, 2 is complex with interleaved f32 (re, im).

use std::path::Path;

use num_complex::{Complex32, Complex64};
use serde_json::{json, Map, Value};

use crate::error::{ensure, Error, Result};
use crate::image::{ComplexImage, Image};
use crate::kspace::RadialKSpace;
use crate::projection::Sinogram;

pub const MAGIC: &[u8; 4] = b"PRMR";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    C64(Vec<Complex32>),
}

impl TensorData {
    pub fn dtype_code(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::F64(_) => 1,
            TensorData::C64(_) => 2,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::C64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn element_size(code: u8) -> Result<usize> {
        match code {
            0 => Ok(4),
            1 => Ok(8),
            2 => Ok(8),
            _ => Err(Error::Format(format!("unknown dtype code {code}"))),
        }
    }

    /// Real values widened to f64; complex data is rejected.
    pub fn to_f64(&self) -> Result<Vec<f64>> {
        match self {
            TensorData::F32(v) => Ok(v.iter().map(|&x| x as f64).collect()),
            TensorData::F64(v) => Ok(v.clone()),
            TensorData::C64(_) => Err(Error::Format("expected real data, found complex".into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub dims: Vec<u64>,
    pub data: TensorData,
    /// A JSON object; written as `{}` when empty.
    pub metadata: Map<String, Value>,
}

impl Container {
    pub fn new(dims: Vec<u64>, data: TensorData, metadata: Map<String, Value>) -> Result<Self> {
        let c = Self { dims, data, metadata };
        c.check()?;
        Ok(c)
    }

    fn check(&self) -> Result<()> {
        ensure!(
            self.dims.len() <= 255,
            Format,
            "{} dimensions exceed the u8 ndim field",
            self.dims.len()
        );
        let n = self
            .dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format("dimension product overflows".into()))?;
        ensure!(
            n == self.data.len() as u64,
            Shape,
            "dims {:?} hold {n} elements but the payload has {}",
            self.dims,
            self.data.len()
        );
        Ok(())
    }

    pub fn meta_str(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).and_then(Value::as_str)
    }

    fn meta_f64(&self, key: &str) -> Result<f64> {
        self.metadata
            .get(key)
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::Format(format!("metadata field {key:?} missing or not a number")))
    }

    fn meta_angles(&self) -> Result<Vec<f64>> {
        let arr = self
            .metadata
            .get("angles")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Format("metadata field \"angles\" missing".into()))?;
        arr.iter()
            .map(|v| v.as_f64().ok_or_else(|| Error::Format("non-numeric angle".into())))
            .collect()
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        ensure!(
            self.meta_str("kind") == Some(kind),
            Format,
            "container holds {:?}, expected {kind:?}",
            self.meta_str("kind").unwrap_or("untyped data")
        );
        Ok(())
    }

    fn dims2(&self) -> Result<(usize, usize)> {
        ensure!(
            self.dims.len() == 2,
            Format,
            "expected a 2-D tensor, got dims {:?}",
            self.dims
        );
        Ok((self.dims[0] as usize, self.dims[1] as usize))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.check()?;
        let meta = serde_json::to_string(&Value::Object(self.metadata.clone()))?;
        let meta_len = u32::try_from(meta.len()).map_err(|_| Error::Format("metadata exceeds 4 GiB".into()))?;
        let esize = TensorData::element_size(self.data.dtype_code())?;
        let mut out = Vec::with_capacity(8 + 8 * self.dims.len() + esize * self.data.len() + 4 + meta.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.data.dtype_code());
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::C64(v) => v.iter().for_each(|z| {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }),
        }
        out.extend_from_slice(&meta_len.to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        ensure!(r.take(4)? == MAGIC, Format, "bad magic: not a PRMR container");
        let version = u16::from_le_bytes(r.array()?);
        ensure!(version == VERSION, Format, "unsupported container version {version}");
        let code = r.take(1)?[0];
        let esize = TensorData::element_size(code)?;
        let ndim = r.take(1)?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(u64::from_le_bytes(r.array()?));
        }
        let n = dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(|| Error::Format("dimension product overflows".into()))?;
        let payload_len = n
            .checked_mul(esize)
            .ok_or_else(|| Error::Format("payload size overflows".into()))?;
        ensure!(
            r.remaining() >= payload_len + 4,
            Format,
            "payload length mismatch: dims {dims:?} need {payload_len} bytes, {} available",
            r.remaining().saturating_sub(4)
        );
        let payload = r.take(payload_len)?;
        let data = match code {
            0 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            1 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            _ => TensorData::C64(
                payload
                    .chunks_exact(8)
                    .map(|c| {
                        Complex32::new(
                            f32::from_le_bytes(c[..4].try_into().unwrap()),
                            f32::from_le_bytes(c[4..].try_into().unwrap()),
                        )
                    })
                    .collect(),
            ),
        };
        let meta_len = u32::from_le_bytes(r.array()?) as usize;
        ensure!(
            r.remaining() == meta_len,
            Format,
            "metadata length mismatch: header says {meta_len}, {} bytes follow",
            r.remaining()
        );
        let text = std::str::from_utf8(r.take(meta_len)?).map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
        let metadata = match serde_json::from_str(text)? {
            Value::Object(m) => m,
            _ => return Err(Error::Format("metadata is not a JSON object".into())),
        };
        Ok(Self { dims, data, metadata })
    }

    pub fn from_image(img: &Image) -> Self {
        let (h, w) = img.dims();
        let meta = json!({"kind": "image", "pixel_spacing": img.pixel_spacing()});
        Self {
            dims: vec![h as u64, w as u64],
            data: TensorData::F64(img.data().to_vec()),
            metadata: object(meta),
        }
    }

    pub fn to_image(&self) -> Result<Image> {
        self.expect_kind("image")?;
        let (h, w) = self.dims2()?;
        let spacing = self.meta_f64("pixel_spacing").unwrap_or(1.0);
        Image::from_vec(h, w, self.data.to_f64()?)?.with_pixel_spacing(spacing)
    }

    pub fn from_sinogram(s: &Sinogram) -> Self {
        let meta = json!({
            "kind": "sinogram",
            "angles": s.angles,
            "bin_spacing": s.bin_spacing,
            "center": s.center,
            "units": "angles in radians; t in pixel-spacing units",
        });
        Self {
            dims: vec![s.num_angles() as u64, s.num_bins as u64],
            data: TensorData::F64(s.data.clone()),
            metadata: object(meta),
        }
    }

    pub fn to_sinogram(&self) -> Result<Sinogram> {
        self.expect_kind("sinogram")?;
        let (_, bins) = self.dims2()?;
        Sinogram::with_center(
            self.meta_angles()?,
            bins,
            self.meta_f64("bin_spacing")?,
            self.meta_f64("center")?,
            self.data.to_f64()?,
        )
    }

    pub fn from_kspace(k: &RadialKSpace) -> Self {
        let meta = json!({
            "kind": "kspace",
            "angles": k.angles,
            "num_samples": k.num_samples,
            "bin_spacing": k.bin_spacing,
            "center": k.center,
            "fft_normalization": "forward unnormalized, inverse 1/N",
            "shift": "centered: DC at index pad_length/2",
        });
        Self {
            dims: vec![k.num_spokes() as u64, k.pad_length as u64],
            data: TensorData::C64(
                k.data
                    .iter()
                    .map(|z| Complex32::new(z.re as f32, z.im as f32))
                    .collect(),
            ),
            metadata: object(meta),
        }
    }

    pub fn to_kspace(&self) -> Result<RadialKSpace> {
        self.expect_kind("kspace")?;
        let (_, pad_length) = self.dims2()?;
        let data = match &self.data {
            TensorData::C64(v) => v.iter().map(|z| Complex64::new(z.re as f64, z.im as f64)).collect(),
            _ => return Err(Error::Format("k-space container must hold complex data".into())),
        };
        let num_samples = self
            .metadata
            .get("num_samples")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Format("metadata field \"num_samples\" missing".into()))?;
        let k = RadialKSpace {
            angles: self.meta_angles()?,
            num_samples: num_samples as usize,
            pad_length,
            bin_spacing: self.meta_f64("bin_spacing")?,
            center: self.meta_f64("center")?,
            data,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn from_complex_image(img: &ComplexImage) -> Self {
        let (h, w) = img.dims();
        Self {
            dims: vec![h as u64, w as u64],
            data: TensorData::C64(
                img.data()
                    .iter()
                    .map(|z| Complex32::new(z.re as f32, z.im as f32))
                    .collect(),
            ),
            metadata: object(json!({"kind": "complex-image"})),
        }
    }
}

fn object(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => Map::new(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        ensure!(
            self.remaining() >= n,
            Format,
            "truncated container: needed {n} bytes at offset {}, {} left",
            self.pos,
            self.remaining()
        );
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }
}

pub fn write_container(path: &Path, c: &Container) -> Result<()> {
    let bytes = c.encode()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: &Path) -> Result<Container> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Container::decode(&bytes)
}
