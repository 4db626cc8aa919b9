//! Training data construction, pre-training and fine-tuning.
//!
//! Both phases minimize `J = ½ Σ_batch Σ_pixels (f(x; η) − y)²` with
//! mini-batch SGD. With momentum and weight decay switched off one step is
//! `η ← η + ε Σ_i ∂_η f(x_i; η)ᵀ (y_i − f(x_i; η))`.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::fbp::{fbp_magnitude, Window};
use crate::image::{check_square, ComplexImage, Image};
use crate::kspace::{acquire, add_noise, default_pad_length, RadialKSpace};
use crate::metrics::psnr_from_mse;
use crate::network::{
    backward, forward_infer, forward_train, update_bn_stats, ArchConfig, NetworkParams, ParamKind, Tensor4,
};
use crate::projection::{default_num_bins, make_schedule, ScheduleMode, UndersampleMode};

/// How measurements are simulated from a phantom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionGeometry {
    /// Number of spokes of the fully sampled reference acquisition.
    pub full_views: usize,
    pub schedule: ScheduleMode,
    pub window: Window,
    /// Standard deviation of complex k-space noise; 0 disables it.
    pub noise_sigma: f64,
    pub noise_seed: u64,
    /// Sparse acquisitions get their own noise instead of being cut from the
    /// noisy reference scan, as when reference and test are acquired
    /// separately.
    pub independent_noise: bool,
}

impl Default for AcquisitionGeometry {
    fn default() -> Self {
        Self {
            full_views: 120,
            schedule: ScheduleMode::Uniform,
            window: Window::RamLak,
            noise_sigma: 0.0,
            noise_seed: 0,
            independent_noise: false,
        }
    }
}

impl AcquisitionGeometry {
    /// Noise-free, fully sampled k-space of `phantom`.
    pub fn full_kspace(&self, phantom: &Image) -> Result<RadialKSpace> {
        self.kspace_at(phantom, self.full_views)
    }

    fn kspace_at(&self, phantom: &Image, views: usize) -> Result<RadialKSpace> {
        let nb = default_num_bins(check_square(phantom)?);
        let schedule = make_schedule(self.schedule, views)?;
        acquire(&ComplexImage::from_real(phantom), &schedule, nb, default_pad_length(nb))
    }

    fn check_views(&self, views: usize) -> Result<()> {
        ensure!(
            views >= 1 && views <= self.full_views,
            InvalidArgument,
            "{views} views exceed the full schedule of {}",
            self.full_views
        );
        Ok(())
    }

    /// K-space with `views` spokes: a stride or prefix subset of `full` when
    /// that is possible, otherwise a fresh schedule acquired from `phantom`.
    pub fn sparse_kspace(&self, full: &RadialKSpace, phantom: &Image, views: usize) -> Result<RadialKSpace> {
        self.check_views(views)?;
        let schedule = make_schedule(self.schedule, self.full_views)?;
        match self.schedule.natural_undersampling() {
            UndersampleMode::Stride if self.full_views % views != 0 => self.kspace_at(phantom, views),
            mode => Ok(full.undersample(&schedule, views, mode)?.0),
        }
    }

    fn noisy(&self, k: RadialKSpace, slice: usize, views: usize) -> Result<RadialKSpace> {
        if self.noise_sigma > 0.0 {
            let stream = ((slice as u64) << 32) | views as u64;
            add_noise(
                &k,
                self.noise_sigma,
                self.noise_seed ^ stream.wrapping_mul(0x2545_F491_4F6C_DD1D),
            )
        } else {
            Ok(k)
        }
    }

    /// Reference and `views`-spoke measurements of one slice, noise included.
    pub fn measure(&self, phantom: &Image, slice: usize, views: usize) -> Result<(RadialKSpace, RadialKSpace)> {
        self.check_views(views)?;
        let full = self.noisy(self.full_kspace(phantom)?, slice, self.full_views)?;
        if views == self.full_views {
            return Ok((full.clone(), full));
        }
        let divides = self.full_views % views == 0;
        let retrospective =
            !self.independent_noise && (divides || self.schedule.natural_undersampling() == UndersampleMode::Prefix);
        let sparse = if retrospective {
            self.sparse_kspace(&full, phantom, views)?
        } else {
            let clean = self.full_kspace(phantom)?;
            self.noisy(self.sparse_kspace(&clean, phantom, views)?, slice, views)?
        };
        Ok((full, sparse))
    }

    /// Magnitude FBP of slice `slice` from `views` spokes.
    pub fn reconstruct(&self, phantom: &Image, slice: usize, views: usize) -> Result<Image> {
        let (_, k) = self.measure(phantom, slice, views)?;
        fbp_magnitude(&k, phantom.height(), self.window)
    }
}

/// A network input (sparse-view reconstruction) and its label (full-view
/// reconstruction) of the same slice.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub input: Image,
    pub label: Image,
    pub views: usize,
    /// Index of the source slice, for grouping pairs by slice.
    pub slice: usize,
}

/// One pair per (slice, view count). Labels are full-view reconstructions,
/// not the phantoms themselves.
pub fn build_training_set(
    phantoms: &[Image],
    view_set: &[usize],
    geometry: &AcquisitionGeometry,
) -> Result<Vec<PairedSample>> {
    ensure!(!phantoms.is_empty(), InvalidArgument, "no slices to build pairs from");
    ensure!(!view_set.is_empty(), InvalidArgument, "empty view set");
    for &v in view_set {
        ensure!(
            v >= 1 && v <= geometry.full_views,
            InvalidArgument,
            "view count {v} exceeds the full schedule of {}",
            geometry.full_views
        );
    }
    let mut pairs = Vec::with_capacity(phantoms.len() * view_set.len());
    for (slice, phantom) in phantoms.iter().enumerate() {
        let size = phantom.height();
        let mut label: Option<Image> = None;
        for &v in view_set {
            let (full, sparse) = geometry.measure(phantom, slice, v)?;
            if label.is_none() {
                label = Some(fbp_magnitude(&full, size, geometry.window)?);
            }
            let label = label.clone().expect("label set above");
            let input = fbp_magnitude(&sparse, size, geometry.window)?;
            pairs.push(PairedSample {
                input,
                label,
                views: v,
                slice,
            });
        }
    }
    Ok(pairs)
}

/// Intensity multiplier that maps the largest label value to `peak`.
pub fn intensity_scale(pairs: &[PairedSample], peak: f64) -> Result<f64> {
    ensure!(
        peak > 0.0 && peak.is_finite(),
        InvalidArgument,
        "label peak must be > 0"
    );
    let max = pairs.iter().map(|p| p.label.max()).fold(f64::NEG_INFINITY, f64::max);
    ensure!(
        max.is_finite() && max > 0.0,
        Numeric,
        "labels have no positive intensity"
    );
    Ok(peak / max)
}

/// Scale inputs and labels by the same factor.
pub fn normalize_pairs(pairs: &[PairedSample], scale: f64) -> Vec<PairedSample> {
    pairs
        .iter()
        .map(|p| PairedSample {
            input: p.input.scaled(scale),
            label: p.label.scaled(scale),
            ..p.clone()
        })
        .collect()
}

/// The same random `patch × patch` crop of input and label.
pub fn sample_patches(pair: &PairedSample, patch: usize, rng: &mut impl Rng) -> Result<(Image, Image)> {
    let (h, w) = pair.input.dims();
    ensure!(pair.label.dims() == (h, w), Shape, "input and label differ in size");
    ensure!(
        patch >= 1 && patch <= h && patch <= w,
        InvalidArgument,
        "patch {patch} does not fit a {h}x{w} image"
    );
    let r = rng.random_range(0..=h - patch);
    let c = rng.random_range(0..=w - patch);
    Ok((
        pair.input.crop(r, c, patch, patch)?,
        pair.label.crop(r, c, patch, patch)?,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_start: f64,
    pub lr_end: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// L2 penalty on convolution kernels.
    pub weight_decay: f64,
    pub momentum: f64,
    /// Running-statistics momentum of batch norm.
    pub bn_momentum: f64,
    pub patch: usize,
    pub view_set: Vec<usize>,
    pub seed: u64,
    /// Start the output head at zero so a residual network begins as the
    /// identity map. Only used when initializing a new network.
    pub zero_head_init: bool,
    /// Training units: the largest label of the corpus maps to this value.
    /// Residuals are small next to the image, and a larger peak keeps the
    /// interior layers from being starved next to the output head.
    pub label_peak: f64,
    /// Rescale the gradient to this global L2 norm when it is larger;
    /// 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_start: 1e-5,
            lr_end: 1e-6,
            epochs: 200,
            batch_size: 4,
            weight_decay: 1e-4,
            momentum: 0.9,
            bn_momentum: 0.1,
            patch: 64,
            view_set: vec![30, 40, 60],
            seed: 0,
            zero_head_init: true,
            label_peak: 10.0,
            grad_clip: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, arch: &ArchConfig) -> Result<()> {
        ensure!(
            self.lr_start.is_finite() && self.lr_end >= 0.0 && self.lr_start >= self.lr_end,
            InvalidArgument,
            "learning rates must satisfy lr_start >= lr_end >= 0"
        );
        ensure!(
            self.lr_end > 0.0 || self.lr_start == 0.0,
            InvalidArgument,
            "a decaying schedule needs lr_end > 0"
        );
        ensure!(self.batch_size >= 1, InvalidArgument, "batch size must be >= 1");
        ensure!(
            self.weight_decay >= 0.0 && (0.0..1.0).contains(&self.momentum),
            InvalidArgument,
            "weight decay must be >= 0 and momentum in [0, 1)"
        );
        ensure!(
            self.bn_momentum > 0.0 && self.bn_momentum <= 1.0,
            InvalidArgument,
            "bn_momentum must be in (0, 1]"
        );
        ensure!(
            self.label_peak > 0.0 && self.label_peak.is_finite(),
            InvalidArgument,
            "label_peak must be > 0"
        );
        ensure!(
            self.grad_clip >= 0.0 && self.grad_clip.is_finite(),
            InvalidArgument,
            "grad_clip must be >= 0"
        );
        ensure!(
            self.patch >= 1 && self.patch % arch.size_multiple() == 0,
            InvalidArgument,
            "patch {} must be divisible by 2^{}",
            self.patch,
            arch.depth
        );
        Ok(())
    }
}

/// Fine-tuning settings: a training config plus how many target slices to use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub train: TrainConfig,
    pub num_target_slices: usize,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                lr_start: 1e-5,
                lr_end: 1e-6,
                epochs: 100,
                ..TrainConfig::default()
            },
            num_target_slices: 1,
        }
    }
}

/// Geometric decay from `lr_start` at epoch 0 to `lr_end` at the last epoch.
pub fn lr_schedule(cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    ensure!(
        epoch < cfg.epochs,
        InvalidArgument,
        "epoch {epoch} outside a {}-epoch schedule",
        cfg.epochs
    );
    if cfg.epochs == 1 || cfg.lr_start == cfg.lr_end {
        return Ok(cfg.lr_start);
    }
    let t = epoch as f64 / (cfg.epochs - 1) as f64;
    Ok(cfg.lr_start * (cfg.lr_end / cfg.lr_start).powf(t))
}

/// Momentum buffers, aligned with the parameter tensors.
#[derive(Clone, Debug, Default)]
pub struct SgdState {
    velocity: Vec<Vec<f64>>,
}

/// `v ← μ v − ε (g + λ η)`, `η ← η + v` for trainable tensors; `λ` applies
/// to kernels only. Non-finite gradients abort without touching `params`.
pub fn sgd_step(
    params: &mut NetworkParams,
    grads: &[Vec<f64>],
    lr: f64,
    weight_decay: f64,
    momentum: f64,
    state: &mut SgdState,
) -> Result<()> {
    ensure!(
        grads.len() == params.tensors.len() && grads.iter().zip(&params.tensors).all(|(g, t)| g.len() == t.data.len()),
        Shape,
        "gradient buffers do not match the parameters"
    );
    if let Some((t, _)) = params
        .tensors
        .iter()
        .zip(grads)
        .find(|(t, g)| t.kind.trainable() && g.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Numeric(format!("non-finite gradient in '{}'", t.name)));
    }
    if state.velocity.len() != grads.len() {
        state.velocity = params.zero_grads();
    }
    for ((t, g), v) in params.tensors.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        if !t.kind.trainable() {
            continue;
        }
        let decay = if t.kind == ParamKind::Kernel { weight_decay } else { 0.0 };
        for ((p, gi), vi) in t.data.iter_mut().zip(g).zip(v.iter_mut()) {
            *vi = momentum * *vi - lr * (gi + decay * *p);
            *p += *vi;
        }
    }
    Ok(())
}

/// Per-epoch losses; losses are mean squared pixel errors in training units
/// and PSNR uses the configured label peak.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_psnr: f64,
    pub val_psnr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrace {
    pub epochs: Vec<EpochStats>,
}

impl TrainTrace {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,train_loss,val_loss,train_psnr,val_psnr,lr\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:e},{:e},{},{},{:e}\n",
                e.epoch, e.train_loss, e.val_loss, e.train_psnr, e.val_psnr, e.lr
            ));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

/// One SGD step on a batch. Returns the summed squared error of the batch
/// before the update.
pub fn train_step(
    params: &mut NetworkParams,
    state: &mut SgdState,
    x: &Tensor4,
    y: &Tensor4,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<f64> {
    ensure!(x.shape() == y.shape(), Shape, "input and label batches differ in shape");
    let (f, cache) = forward_train(params, x)?;
    let mut resid = f;
    for (r, t) in resid.data.iter_mut().zip(&y.data) {
        *r -= t;
    }
    let sse: f64 = resid.data.iter().map(|r| r * r).sum();
    ensure!(sse.is_finite(), Numeric, "training loss is not finite");
    let (_, mut grads) = backward(params, &cache, &resid)?;
    if cfg.grad_clip > 0.0 {
        clip_gradient(params, &mut grads, cfg.grad_clip);
    }
    sgd_step(params, &grads, lr, cfg.weight_decay, cfg.momentum, state)?;
    update_bn_stats(params, &cache, cfg.bn_momentum);
    Ok(sse)
}

/// Global L2 norm of the trainable gradients.
pub fn gradient_norm(params: &NetworkParams, grads: &[Vec<f64>]) -> f64 {
    params
        .tensors
        .iter()
        .zip(grads)
        .filter(|(t, _)| t.kind.trainable())
        .flat_map(|(_, g)| g)
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Scale `grads` down to global norm `max_norm` if it exceeds it.
pub fn clip_gradient(params: &NetworkParams, grads: &mut [Vec<f64>], max_norm: f64) {
    let n = gradient_norm(params, grads);
    if n > max_norm && n.is_finite() {
        let s = max_norm / n;
        for g in grads.iter_mut().flatten() {
            *g *= s;
        }
    }
}

/// Mean squared error of the network over whole validation images.
pub fn validation_mse(params: &NetworkParams, pairs: &[PairedSample]) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(f64::NAN);
    }
    let mut sse = 0.0;
    let mut count = 0usize;
    for p in pairs {
        let out = forward_infer(params, &Tensor4::from_images(&[&p.input])?)?;
        sse += out
            .data
            .iter()
            .zip(p.label.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        count += out.len();
    }
    Ok(sse / count as f64)
}

fn run_epochs(
    params: &mut NetworkParams,
    pairs: &[PairedSample],
    val: &[PairedSample],
    cfg: &TrainConfig,
) -> Result<TrainTrace> {
    cfg.validate(&params.arch)?;
    let mut trace = TrainTrace::default();
    if cfg.epochs == 0 {
        return Ok(trace);
    }
    ensure!(!pairs.is_empty(), InvalidArgument, "no training pairs");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = SgdState::default();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(cfg, epoch)?;
        order.shuffle(&mut rng);
        let mut sse = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut xs = Vec::with_capacity(chunk.len());
            let mut ys = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (x, y) = sample_patches(&pairs[i], cfg.patch, &mut rng)?;
                xs.push(x);
                ys.push(y);
            }
            let x = Tensor4::from_images(&xs.iter().collect::<Vec<_>>())?;
            let y = Tensor4::from_images(&ys.iter().collect::<Vec<_>>())?;
            sse += train_step(params, &mut state, &x, &y, lr, cfg)
                .map_err(|e| Error::Numeric(format!("training diverged at epoch {epoch}: {e}")))?;
            count += x.len();
        }
        let train_loss = sse / count as f64;
        let val_loss = validation_mse(params, val)?;
        trace.epochs.push(EpochStats {
            epoch,
            lr,
            train_loss,
            val_loss,
            train_psnr: psnr_from_mse(train_loss, cfg.label_peak),
            val_psnr: psnr_from_mse(val_loss, cfg.label_peak),
        });
    }
    Ok(trace)
}

/// Train a freshly initialized network on source-domain pairs.
pub fn pretrain(
    pairs: &[PairedSample],
    val: &[PairedSample],
    arch: &ArchConfig,
    cfg: &TrainConfig,
) -> Result<(NetworkParams, TrainTrace)> {
    ensure!(!pairs.is_empty(), InvalidArgument, "no source pairs");
    let mut params = NetworkParams::init(arch, cfg.seed)?;
    if cfg.zero_head_init {
        let head = params.layout().head_kernel;
        params.tensors[head].data.fill(0.0);
    }
    let trace = run_epochs(&mut params, pairs, val, cfg)?;
    Ok((params, trace))
}

/// Continue training `pretrained` on the pairs of the first
/// `cfg.num_target_slices` distinct target slices.
pub fn finetune(
    pretrained: &NetworkParams,
    target: &[PairedSample],
    val: &[PairedSample],
    cfg: &AdaptConfig,
) -> Result<(NetworkParams, TrainTrace)> {
    pretrained.validate()?;
    let chosen = select_slices(target, cfg.num_target_slices)?;
    let mut params = pretrained.clone();
    let trace = run_epochs(&mut params, &chosen, val, &cfg.train)?;
    Ok((params, trace))
}

/// Same as [`finetune`] but also checks the network against the
/// architecture the caller expects.
pub fn finetune_checked(
    pretrained: &NetworkParams,
    expected: &ArchConfig,
    target: &[PairedSample],
    val: &[PairedSample],
    cfg: &AdaptConfig,
) -> Result<(NetworkParams, TrainTrace)> {
    ensure!(
        &pretrained.arch == expected,
        InvalidArgument,
        "pre-trained network architecture {:?} does not match {:?}",
        pretrained.arch,
        expected
    );
    finetune(pretrained, target, val, cfg)
}

/// Pairs belonging to the first `count` distinct slices, in order of
/// appearance.
pub fn select_slices(pairs: &[PairedSample], count: usize) -> Result<Vec<PairedSample>> {
    ensure!(count >= 1, InvalidArgument, "need at least one target slice");
    let mut slices: Vec<usize> = Vec::new();
    for p in pairs {
        if !slices.contains(&p.slice) {
            slices.push(p.slice);
        }
    }
    ensure!(
        count <= slices.len(),
        InvalidArgument,
        "{count} target slices requested but only {} available",
        slices.len()
    );
    let keep = &slices[..count];
    Ok(pairs.iter().filter(|p| keep.contains(&p.slice)).cloned().collect())
}
