//! Residual U-Net forward and reverse passes.

use crate::error::{ensure, Error, Result};
use crate::image::Image;

use super::layers::{
    avg_unpool2, avg_unpool2_backward, batchnorm_backward, batchnorm_infer, batchnorm_train, concat_channels,
    conv2d_backward, conv2d_forward, maxpool2, maxpool2_backward, relu, relu_backward, split_channels,
    update_running_stats, BnCache,
};
use super::params::{BlockIndex, Layout, NetworkParams};
use super::tensor::Tensor4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in BN; activations are cached for the backward.
    Train,
    /// Running statistics in BN.
    Infer,
}

struct BlockCache {
    input: Tensor4,
    bn: BnCache,
    output: Tensor4,
}

/// Activations from a train-mode forward, consumed by [`backward`].
pub struct ForwardCache {
    input: Tensor4,
    encoder: Vec<Vec<BlockCache>>,
    pool_argmax: Vec<Vec<u32>>,
    bottom: Vec<BlockCache>,
    decoder: Vec<Vec<BlockCache>>,
    /// Skip channel counts per decoder level, for splitting the gradient.
    skip_channels: Vec<usize>,
    head_input: Tensor4,
}

impl ForwardCache {
    /// Batch statistics of every BN layer in parameter order.
    fn bn_caches(&self) -> impl Iterator<Item = &BnCache> {
        self.encoder
            .iter()
            .flatten()
            .chain(self.bottom.iter())
            .chain(self.decoder.iter().rev().flatten())
            .map(|b| &b.bn)
    }
}

fn check_input(params: &NetworkParams, x: &Tensor4) -> Result<()> {
    let m = params.arch.size_multiple();
    ensure!(
        x.c == params.arch.in_channels,
        Shape,
        "network expects {} input channels, got {}",
        params.arch.in_channels,
        x.c
    );
    ensure!(
        x.n >= 1 && x.h % m == 0 && x.w % m == 0 && x.h > 0 && x.w > 0,
        Shape,
        "input {}x{} is not divisible by 2^{}",
        x.h,
        x.w,
        params.arch.depth
    );
    ensure!(x.all_finite(), Numeric, "network input is not finite");
    Ok(())
}

fn block_infer(p: &NetworkParams, b: &BlockIndex, x: &Tensor4, k: usize) -> Result<Tensor4> {
    let y = conv2d_forward(x, p.get(b.kernel), p.get(b.bias), b.c_out, k)?;
    let z = batchnorm_infer(
        &y,
        p.get(b.gamma),
        p.get(b.beta),
        p.get(b.running_mean),
        p.get(b.running_var),
    )?;
    Ok(relu(&z))
}

fn block_train(p: &NetworkParams, b: &BlockIndex, x: Tensor4, k: usize) -> Result<BlockCache> {
    let y = conv2d_forward(&x, p.get(b.kernel), p.get(b.bias), b.c_out, k)?;
    let (z, bn) = batchnorm_train(&y, p.get(b.gamma), p.get(b.beta))?;
    Ok(BlockCache {
        input: x,
        bn,
        output: relu(&z),
    })
}

fn stage_train(
    p: &NetworkParams,
    blocks: &[BlockIndex],
    mut x: Tensor4,
    k: usize,
) -> Result<(Tensor4, Vec<BlockCache>)> {
    let mut caches = Vec::with_capacity(blocks.len());
    for b in blocks {
        let c = block_train(p, b, x, k)?;
        x = c.output.clone();
        caches.push(c);
    }
    Ok((x, caches))
}

fn stage_infer(p: &NetworkParams, blocks: &[BlockIndex], mut x: Tensor4, k: usize) -> Result<Tensor4> {
    for b in blocks {
        x = block_infer(p, b, &x, k)?;
    }
    Ok(x)
}

fn head(p: &NetworkParams, layout: &Layout, x: &Tensor4, features: &Tensor4) -> Result<Tensor4> {
    let mut out = conv2d_forward(
        features,
        p.get(layout.head_kernel),
        p.get(layout.head_bias),
        1,
        p.arch.output_kernel,
    )?;
    if p.arch.residual {
        for (o, v) in out.data.iter_mut().zip(&x.data) {
            *o += v;
        }
    }
    Ok(out)
}

/// Inference-mode forward pass.
pub fn forward_infer(params: &NetworkParams, x: &Tensor4) -> Result<Tensor4> {
    check_input(params, x)?;
    let layout = params.layout();
    let k = params.arch.kernel;
    let mut skips = Vec::with_capacity(layout.encoder.len());
    let mut h = x.clone();
    for blocks in &layout.encoder {
        let s = stage_infer(params, blocks, h, k)?;
        h = maxpool2(&s)?.0;
        skips.push(s);
    }
    h = stage_infer(params, &layout.bottom, h, k)?;
    for level in (0..layout.decoder.len()).rev() {
        let cat = concat_channels(&skips[level], &avg_unpool2(&h))?;
        h = stage_infer(params, &layout.decoder[level], cat, k)?;
    }
    head(params, &layout, x, &h)
}

/// Train-mode forward pass; keeps what [`backward`] needs.
pub fn forward_train(params: &NetworkParams, x: &Tensor4) -> Result<(Tensor4, ForwardCache)> {
    check_input(params, x)?;
    let layout = params.layout();
    let k = params.arch.kernel;
    let d = layout.encoder.len();
    let mut encoder = Vec::with_capacity(d);
    let mut pool_argmax = Vec::with_capacity(d);
    let mut skips = Vec::with_capacity(d);
    let mut h = x.clone();
    for blocks in &layout.encoder {
        let (s, caches) = stage_train(params, blocks, h, k)?;
        let (pooled, arg) = maxpool2(&s)?;
        encoder.push(caches);
        pool_argmax.push(arg);
        skips.push(s);
        h = pooled;
    }
    let (mut h, bottom) = stage_train(params, &layout.bottom, h, k)?;
    let mut decoder: Vec<Vec<BlockCache>> = (0..d).map(|_| Vec::new()).collect();
    let mut skip_channels = vec![0; d];
    for level in (0..d).rev() {
        skip_channels[level] = skips[level].c;
        let cat = concat_channels(&skips[level], &avg_unpool2(&h))?;
        let (out, caches) = stage_train(params, &layout.decoder[level], cat, k)?;
        decoder[level] = caches;
        h = out;
    }
    let out = head(params, &layout, x, &h)?;
    Ok((
        out,
        ForwardCache {
            input: x.clone(),
            encoder,
            pool_argmax,
            bottom,
            decoder,
            skip_channels,
            head_input: h,
        },
    ))
}

fn stage_backward(
    p: &NetworkParams,
    blocks: &[BlockIndex],
    caches: &[BlockCache],
    mut g: Tensor4,
    k: usize,
    grads: &mut [Vec<f64>],
) -> Result<Tensor4> {
    for (b, c) in blocks.iter().zip(caches).rev() {
        let gz = relu_backward(&c.output, &g);
        let bn = batchnorm_backward(&gz, &c.bn, p.get(b.gamma));
        add_into(&mut grads[b.gamma], &bn.gamma);
        add_into(&mut grads[b.beta], &bn.beta);
        let conv = conv2d_backward(&c.input, p.get(b.kernel), b.c_out, k, &bn.input)?;
        add_into(&mut grads[b.kernel], &conv.kernel);
        add_into(&mut grads[b.bias], &conv.bias);
        g = conv.input;
    }
    Ok(g)
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Reverse pass. Returns `dL/dx` and `dL/dη` aligned with `params.tensors`
/// (running statistics get zero gradients).
pub fn backward(params: &NetworkParams, cache: &ForwardCache, grad_out: &Tensor4) -> Result<(Tensor4, Vec<Vec<f64>>)> {
    ensure!(
        grad_out.shape() == [cache.input.n, 1, cache.input.h, cache.input.w],
        Shape,
        "output gradient shape {:?} does not match the cached forward",
        grad_out.shape()
    );
    let layout = params.layout();
    ensure!(
        cache.encoder.len() == layout.encoder.len() && cache.decoder.len() == layout.decoder.len(),
        InvalidArgument,
        "forward cache does not belong to this architecture"
    );
    let k = params.arch.kernel;
    let d = layout.encoder.len();
    let mut grads = params.zero_grads();

    let head = conv2d_backward(
        &cache.head_input,
        params.get(layout.head_kernel),
        1,
        params.arch.output_kernel,
        grad_out,
    )?;
    add_into(&mut grads[layout.head_kernel], &head.kernel);
    add_into(&mut grads[layout.head_bias], &head.bias);

    let mut g = head.input;
    let mut skip_grads: Vec<Option<Tensor4>> = (0..d).map(|_| None).collect();
    for (level, slot) in skip_grads.iter_mut().enumerate() {
        let g_cat = stage_backward(params, &layout.decoder[level], &cache.decoder[level], g, k, &mut grads)?;
        let (g_skip, g_up) = split_channels(&g_cat, cache.skip_channels[level])?;
        *slot = Some(g_skip);
        g = avg_unpool2_backward(&g_up)?;
    }
    g = stage_backward(params, &layout.bottom, &cache.bottom, g, k, &mut grads)?;
    for level in (0..d).rev() {
        let mut gs = maxpool2_backward(&g, &cache.pool_argmax[level]);
        let skip = skip_grads[level]
            .take()
            .ok_or_else(|| Error::InvalidArgument("missing skip gradient".into()))?;
        add_into(&mut gs.data, &skip.data);
        g = stage_backward(params, &layout.encoder[level], &cache.encoder[level], gs, k, &mut grads)?;
    }
    if params.arch.residual {
        add_into(&mut g.data, &grad_out.data);
    }
    Ok((g, grads))
}

/// Fold the batch statistics of a train-mode forward into the running
/// statistics of every BN layer.
pub fn update_bn_stats(params: &mut NetworkParams, cache: &ForwardCache, momentum: f64) {
    let layout = params.layout();
    let blocks: Vec<BlockIndex> = layout
        .encoder
        .iter()
        .flatten()
        .chain(layout.bottom.iter())
        .chain(layout.decoder.iter().rev().flatten())
        .copied()
        .collect();
    for (b, bn) in blocks.iter().zip(cache.bn_caches()) {
        let mut mean = std::mem::take(&mut params.tensors[b.running_mean].data);
        let mut var = std::mem::take(&mut params.tensors[b.running_var].data);
        update_running_stats(&mut mean, &mut var, bn, momentum);
        params.tensors[b.running_mean].data = mean;
        params.tensors[b.running_var].data = var;
    }
}

/// Run a single image through the network in inference mode, in the
/// image's own intensity units.
pub fn predict(params: &NetworkParams, image: &Image) -> Result<Image> {
    let s = params.intensity_scale;
    let x = Tensor4::from_images(&[&image.scaled(s)])?;
    let out = forward_infer(params, &x)?;
    out.image(0).scaled(1.0 / s).with_pixel_spacing(image.pixel_spacing())
}
