use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Shape of the residual U-Net.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    /// Number of pooling levels.
    pub depth: usize,
    pub base_channels: usize,
    pub blocks_per_stage: usize,
    /// Blocks in the last decoder stage (full resolution).
    pub final_stage_blocks: usize,
    pub kernel: usize,
    pub output_kernel: usize,
    pub residual: bool,
    pub in_channels: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_channels: 16,
            blocks_per_stage: 4,
            final_stage_blocks: 2,
            kernel: 3,
            output_kernel: 1,
            residual: true,
            in_channels: 1,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.depth >= 1, InvalidArgument, "network depth must be >= 1");
        ensure!(self.base_channels >= 1, InvalidArgument, "base_channels must be >= 1");
        ensure!(
            self.blocks_per_stage >= 1 && self.final_stage_blocks >= 1,
            InvalidArgument,
            "every stage needs at least one block"
        );
        ensure!(
            self.kernel % 2 == 1 && self.output_kernel % 2 == 1,
            InvalidArgument,
            "kernel sizes must be odd"
        );
        ensure!(self.in_channels >= 1, InvalidArgument, "in_channels must be >= 1");
        ensure!(
            !self.residual || self.in_channels == 1,
            InvalidArgument,
            "the residual path needs a single input channel"
        );
        ensure!(
            self.depth <= 16,
            InvalidArgument,
            "depth {} is unreasonably large",
            self.depth
        );
        Ok(())
    }

    /// Channels at pooling level `level` (the bottom is level `depth`).
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Input side lengths must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Kernel,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    /// Whether the optimizer updates this tensor.
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub data: Vec<f64>,
}

/// Indices into [`NetworkParams::tensors`] for one conv → BN → ReLU block.
#[derive(Clone, Copy, Debug)]
pub struct BlockIndex {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub bias: usize,
    pub gamma: usize,
    pub beta: usize,
    pub running_mean: usize,
    pub running_var: usize,
}

#[derive(Clone, Debug)]
pub struct Layout {
    /// Encoder stages, level 0 (full resolution) first.
    pub encoder: Vec<Vec<BlockIndex>>,
    pub bottom: Vec<BlockIndex>,
    /// Decoder stages indexed by level; level 0 is the last stage run.
    pub decoder: Vec<Vec<BlockIndex>>,
    pub head_kernel: usize,
    pub head_bias: usize,
}

struct Builder {
    tensors: Vec<NamedTensor>,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>, kind: ParamKind) -> usize {
        let len = shape.iter().product();
        let fill = if matches!(kind, ParamKind::Gamma | ParamKind::RunningVar) {
            1.0
        } else {
            0.0
        };
        self.tensors.push(NamedTensor {
            name,
            shape,
            kind,
            data: vec![fill; len],
        });
        self.tensors.len() - 1
    }

    fn block(&mut self, prefix: &str, c_in: usize, c_out: usize, k: usize) -> BlockIndex {
        BlockIndex {
            c_in,
            c_out,
            kernel: self.push(
                format!("{prefix}.conv.kernel"),
                vec![c_out, c_in, k, k],
                ParamKind::Kernel,
            ),
            bias: self.push(format!("{prefix}.conv.bias"), vec![c_out], ParamKind::Bias),
            gamma: self.push(format!("{prefix}.bn.gamma"), vec![c_out], ParamKind::Gamma),
            beta: self.push(format!("{prefix}.bn.beta"), vec![c_out], ParamKind::Beta),
            running_mean: self.push(format!("{prefix}.bn.running_mean"), vec![c_out], ParamKind::RunningMean),
            running_var: self.push(format!("{prefix}.bn.running_var"), vec![c_out], ParamKind::RunningVar),
        }
    }

    fn stage(&mut self, prefix: &str, c_in: usize, c_out: usize, blocks: usize, k: usize) -> Vec<BlockIndex> {
        (0..blocks)
            .map(|b| {
                self.block(
                    &format!("{prefix}.block{b}"),
                    if b == 0 { c_in } else { c_out },
                    c_out,
                    k,
                )
            })
            .collect()
    }
}

fn build(arch: &ArchConfig) -> (Layout, Vec<NamedTensor>) {
    let mut b = Builder { tensors: Vec::new() };
    let d = arch.depth;
    let k = arch.kernel;
    let mut encoder = Vec::with_capacity(d);
    let mut c_prev = arch.in_channels;
    for level in 0..d {
        let c = arch.channels(level);
        encoder.push(b.stage(&format!("enc{level}"), c_prev, c, arch.blocks_per_stage, k));
        c_prev = c;
    }
    let bottom = b.stage("bottom", c_prev, arch.channels(d), arch.blocks_per_stage, k);
    let mut decoder = vec![Vec::new(); d];
    for level in (0..d).rev() {
        let c = arch.channels(level);
        let blocks = if level == 0 {
            arch.final_stage_blocks
        } else {
            arch.blocks_per_stage
        };
        decoder[level] = b.stage(&format!("dec{level}"), c + arch.channels(level + 1), c, blocks, k);
    }
    let ok = arch.output_kernel;
    let head_kernel = b.push(
        "head.kernel".into(),
        vec![1, arch.channels(0), ok, ok],
        ParamKind::Kernel,
    );
    let head_bias = b.push("head.bias".into(), vec![1], ParamKind::Bias);
    (
        Layout {
            encoder,
            bottom,
            decoder,
            head_kernel,
            head_bias,
        },
        b.tensors,
    )
}

/// All network tensors in a fixed order, plus the architecture they realize.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub arch: ArchConfig,
    pub tensors: Vec<NamedTensor>,
    /// Images are multiplied by this before entering the network and the
    /// output is divided by it (see [`crate::network::predict`]).
    pub intensity_scale: f64,
}

impl NetworkParams {
    /// He-initialized kernels, zero biases, `γ = 1`, `β = 0`, running
    /// statistics `(0, 1)`.
    pub fn init(arch: &ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let (_, mut tensors) = build(arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in tensors.iter_mut().filter(|t| t.kind == ParamKind::Kernel) {
            let fan_in: usize = t.shape[1..].iter().product();
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).map_err(|e| Error::Numeric(e.to_string()))?;
            for v in t.data.iter_mut() {
                *v = normal.sample(&mut rng);
            }
        }
        Ok(Self {
            arch: arch.clone(),
            tensors,
            intensity_scale: 1.0,
        })
    }

    pub fn layout(&self) -> Layout {
        build(&self.arch).0
    }

    pub fn get(&self, index: usize) -> &[f64] {
        &self.tensors[index].data
    }

    pub fn find(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn find_mut(&mut self, name: &str) -> Option<&mut NamedTensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn num_trainable(&self) -> usize {
        self.tensors
            .iter()
            .filter(|t| t.kind.trainable())
            .map(|t| t.data.len())
            .sum()
    }

    /// Zero gradient buffers aligned with `tensors`.
    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect()
    }

    /// Check shapes against the architecture and that values are usable.
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        ensure!(
            self.intensity_scale.is_finite() && self.intensity_scale > 0.0,
            InvalidArgument,
            "intensity scale must be positive"
        );
        let (_, expected) = build(&self.arch);
        ensure!(
            expected.len() == self.tensors.len(),
            Shape,
            "expected {} tensors for this architecture, found {}",
            expected.len(),
            self.tensors.len()
        );
        for (e, t) in expected.iter().zip(&self.tensors) {
            ensure!(
                e.name == t.name && e.shape == t.shape && e.kind == t.kind,
                Shape,
                "tensor '{}' {:?} does not match expected '{}' {:?}",
                t.name,
                t.shape,
                e.name,
                e.shape
            );
            ensure!(
                t.data.len() == t.shape.iter().product::<usize>(),
                Shape,
                "tensor '{}' has {} values for shape {:?}",
                t.name,
                t.data.len(),
                t.shape
            );
            ensure!(
                t.data.iter().all(|v| v.is_finite()),
                Numeric,
                "tensor '{}' is not finite",
                t.name
            );
            if t.kind == ParamKind::RunningVar {
                ensure!(
                    t.data.iter().all(|&v| v > 0.0),
                    Numeric,
                    "running variance '{}' must be > 0",
                    t.name
                );
            }
        }
        Ok(())
    }

    pub fn same_arch(&self, other: &NetworkParams) -> bool {
        self.arch == other.arch
    }

    /// Write `path` (JSON manifest) and the float32 blob next to it
    /// (`path` with extension `bin`).
    pub fn save(&self, path: &Path) -> Result<()> {
        let blob_path = blob_path(path);
        let blob_name = blob_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut offset = 0;
        let entries = self
            .tensors
            .iter()
            .map(|t| {
                let e = ManifestEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    kind: t.kind,
                    offset,
                    len: t.data.len(),
                };
                offset += t.data.len();
                e
            })
            .collect();
        let manifest = Manifest {
            format: MANIFEST_FORMAT.into(),
            version: 1,
            dtype: "f32-le".into(),
            blob: blob_name,
            arch: self.arch.clone(),
            intensity_scale: self.intensity_scale,
            tensors: entries,
        };
        let mut blob = Vec::with_capacity(self.num_values() * 4);
        for t in &self.tensors {
            for &v in &t.data {
                blob.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let json = serde_json::to_string_pretty(&manifest)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))?;
        fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        ensure!(
            manifest.format == MANIFEST_FORMAT && manifest.version == 1 && manifest.dtype == "f32-le",
            Format,
            "{} is not a version-1 float32 parameter manifest",
            path.display()
        );
        let blob_path = path.with_file_name(&manifest.blob);
        let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        ensure!(
            blob.len() % 4 == 0,
            Format,
            "parameter blob length {} is not a multiple of 4",
            blob.len()
        );
        let values: Vec<f64> = blob
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in manifest.tensors {
            ensure!(
                e.offset + e.len <= values.len(),
                Format,
                "tensor '{}' runs past the end of the blob",
                e.name
            );
            tensors.push(NamedTensor {
                name: e.name,
                shape: e.shape,
                kind: e.kind,
                data: values[e.offset..e.offset + e.len].to_vec(),
            });
        }
        let params = Self {
            arch: manifest.arch,
            tensors,
            intensity_scale: manifest.intensity_scale,
        };
        params.validate()?;
        Ok(params)
    }
}

const MANIFEST_FORMAT: &str = "prmr-network-params";

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    dtype: String,
    blob: String,
    arch: ArchConfig,
    #[serde(default = "unit_scale")]
    intensity_scale: f64,
    tensors: Vec<ManifestEntry>,
}

fn unit_scale() -> f64 {
    1.0
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    kind: ParamKind,
    offset: usize,
    len: usize,
}
