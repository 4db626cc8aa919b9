//! Forward and backward passes of the individual layers.
//!
//! Every backward takes the upstream gradient and whatever the forward cached
//! and returns gradients for the layer inputs and parameters. All reductions
//! run in a fixed order so results are reproducible bit for bit.

use crate::error::{ensure, Result};

use super::tensor::Tensor4;

pub const BN_EPS: f64 = 1e-5;

/// `C = A·B + beta·C` for dense row/column-strided operands.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above keep every strided access inside the slices;
    // `c` is row-major m×n and does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfold one sample into a `(C·k·k) × (H·W)` patch matrix with zero padding.
fn im2col(input: &Tensor4, sample: usize, k: usize, cols: &mut [f64]) {
    let (h, w) = (input.h, input.w);
    let hw = h * w;
    let pad = (k / 2) as isize;
    for ci in 0..input.c {
        let plane = input.plane(sample, ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let out = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x, o) in out.iter_mut().enumerate() {
                        let sx = x as isize + dx;
                        *o = if sx < 0 || sx >= w as isize {
                            0.0
                        } else {
                            src[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add a patch matrix back into one sample.
fn col2im(cols: &[f64], k: usize, grad: &mut Tensor4, sample: usize) {
    let (h, w) = (grad.h, grad.w);
    let hw = h * w;
    let pad = (k / 2) as isize;
    for ci in 0..grad.c {
        let plane = grad.plane_mut(sample, ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    for x in 0..w {
                        let sx = x as isize + dx;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] += src[y * w + x];
                        }
                    }
                }
            }
        }
    }
}

fn check_conv(input: &Tensor4, kernel: &[f64], bias: &[f64], c_out: usize, k: usize) -> Result<()> {
    ensure!(k % 2 == 1, InvalidArgument, "kernel size {k} must be odd");
    ensure!(
        kernel.len() == c_out * input.c * k * k,
        Shape,
        "kernel has {} values, expected {c_out}x{}x{k}x{k}",
        kernel.len(),
        input.c
    );
    ensure!(
        bias.len() == c_out,
        Shape,
        "bias has {} values, expected {c_out}",
        bias.len()
    );
    Ok(())
}

/// Same-size cross-correlation with zero padding `(k-1)/2`, plus bias.
/// `kernel` is `c_out × c_in × k × k`.
pub fn conv2d_forward(input: &Tensor4, kernel: &[f64], bias: &[f64], c_out: usize, k: usize) -> Result<Tensor4> {
    check_conv(input, kernel, bias, c_out, k)?;
    let hw = input.plane_len();
    let ckk = input.c * k * k;
    let mut out = Tensor4::zeros(input.n, c_out, input.h, input.w);
    let mut cols = vec![0.0; ckk * hw];
    for s in 0..input.n {
        let dst = &mut out.data[s * c_out * hw..(s + 1) * c_out * hw];
        for (co, chunk) in dst.chunks_exact_mut(hw).enumerate() {
            chunk.fill(bias[co]);
        }
        if k == 1 {
            let src = &input.data[s * ckk * hw..(s + 1) * ckk * hw];
            gemm(c_out, ckk, hw, kernel, (ckk, 1), src, (hw, 1), dst, 1.0);
        } else {
            im2col(input, s, k, &mut cols);
            gemm(c_out, ckk, hw, kernel, (ckk, 1), &cols, (hw, 1), dst, 1.0);
        }
    }
    Ok(out)
}

pub struct ConvGrads {
    pub input: Tensor4,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients of [`conv2d_forward`] given the forward input and `dL/dout`.
pub fn conv2d_backward(
    input: &Tensor4,
    kernel: &[f64],
    c_out: usize,
    k: usize,
    grad_out: &Tensor4,
) -> Result<ConvGrads> {
    check_conv(input, kernel, &vec![0.0; c_out], c_out, k)?;
    ensure!(
        grad_out.shape() == [input.n, c_out, input.h, input.w],
        Shape,
        "conv gradient shape {:?} does not match output",
        grad_out.shape()
    );
    let hw = input.plane_len();
    let ckk = input.c * k * k;
    let mut g_in = Tensor4::zeros(input.n, input.c, input.h, input.w);
    let mut g_k = vec![0.0; kernel.len()];
    let mut g_b = vec![0.0; c_out];
    let mut cols = vec![0.0; ckk * hw];
    let mut g_cols = vec![0.0; ckk * hw];
    for s in 0..input.n {
        let go = &grad_out.data[s * c_out * hw..(s + 1) * c_out * hw];
        for (co, chunk) in go.chunks_exact(hw).enumerate() {
            g_b[co] += chunk.iter().sum::<f64>();
        }
        if k == 1 {
            let src = &input.data[s * ckk * hw..(s + 1) * ckk * hw];
            gemm(c_out, hw, ckk, go, (hw, 1), src, (1, hw), &mut g_k, 1.0);
            let gi = &mut g_in.data[s * ckk * hw..(s + 1) * ckk * hw];
            gemm(ckk, c_out, hw, kernel, (1, ckk), go, (hw, 1), gi, 0.0);
        } else {
            im2col(input, s, k, &mut cols);
            gemm(c_out, hw, ckk, go, (hw, 1), &cols, (1, hw), &mut g_k, 1.0);
            gemm(ckk, c_out, hw, kernel, (1, ckk), go, (hw, 1), &mut g_cols, 0.0);
            col2im(&g_cols, k, &mut g_in, s);
        }
    }
    Ok(ConvGrads {
        input: g_in,
        kernel: g_k,
        bias: g_b,
    })
}

/// Per-channel quantities a train-mode batch norm needs for its backward.
#[derive(Clone, Debug)]
pub struct BnCache {
    /// Normalized input `x̂`, same layout as the input.
    pub hat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Biased (population) batch variance.
    pub var: Vec<f64>,
}

fn check_bn(input: &Tensor4, gamma: &[f64], beta: &[f64]) -> Result<()> {
    ensure!(
        gamma.len() == input.c && beta.len() == input.c,
        Shape,
        "batch norm parameters do not match {} channels",
        input.c
    );
    Ok(())
}

/// Normalize with batch statistics over `(N, H, W)` per channel.
pub fn batchnorm_train(input: &Tensor4, gamma: &[f64], beta: &[f64]) -> Result<(Tensor4, BnCache)> {
    check_bn(input, gamma, beta)?;
    let m = input.n * input.plane_len();
    ensure!(
        m >= 2,
        InvalidArgument,
        "batch norm needs at least 2 values per channel in train mode"
    );
    let c = input.c;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for n in 0..input.n {
            s += input.plane(n, ch).iter().sum::<f64>();
        }
        let mu = s / m as f64;
        let mut q = 0.0;
        for n in 0..input.n {
            q += input.plane(n, ch).iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = q / m as f64;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut out = input.clone();
    let mut hat = input.data.clone();
    let hw = input.plane_len();
    for (i, (o, h)) in out.data.chunks_exact_mut(hw).zip(hat.chunks_exact_mut(hw)).enumerate() {
        let ch = i % c;
        for (ov, hv) in o.iter_mut().zip(h.iter_mut()) {
            *hv = (*hv - mean[ch]) * inv_std[ch];
            *ov = gamma[ch] * *hv + beta[ch];
        }
    }
    Ok((
        out,
        BnCache {
            hat,
            inv_std,
            mean,
            var,
        },
    ))
}

/// Normalize with running statistics.
pub fn batchnorm_infer(
    input: &Tensor4,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
) -> Result<Tensor4> {
    check_bn(input, gamma, beta)?;
    ensure!(
        running_mean.len() == input.c && running_var.len() == input.c,
        Shape,
        "running statistics do not match {} channels",
        input.c
    );
    let c = input.c;
    let hw = input.plane_len();
    let mut out = input.clone();
    for (i, o) in out.data.chunks_exact_mut(hw).enumerate() {
        let ch = i % c;
        let inv = 1.0 / (running_var[ch] + BN_EPS).sqrt();
        for v in o.iter_mut() {
            *v = gamma[ch] * (*v - running_mean[ch]) * inv + beta[ch];
        }
    }
    Ok(out)
}

pub struct BnGrads {
    pub input: Tensor4,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

pub fn batchnorm_backward(grad_out: &Tensor4, cache: &BnCache, gamma: &[f64]) -> BnGrads {
    let c = grad_out.c;
    let hw = grad_out.plane_len();
    let m = (grad_out.n * hw) as f64;
    let mut sum_dy = vec![0.0; c];
    let mut sum_dy_hat = vec![0.0; c];
    for (i, (g, h)) in grad_out
        .data
        .chunks_exact(hw)
        .zip(cache.hat.chunks_exact(hw))
        .enumerate()
    {
        let ch = i % c;
        for (gv, hv) in g.iter().zip(h) {
            sum_dy[ch] += gv;
            sum_dy_hat[ch] += gv * hv;
        }
    }
    let mut g_in = grad_out.clone();
    for (i, (g, h)) in g_in
        .data
        .chunks_exact_mut(hw)
        .zip(cache.hat.chunks_exact(hw))
        .enumerate()
    {
        let ch = i % c;
        let scale = gamma[ch] * cache.inv_std[ch] / m;
        for (gv, hv) in g.iter_mut().zip(h) {
            *gv = scale * (m * *gv - sum_dy[ch] - hv * sum_dy_hat[ch]);
        }
    }
    BnGrads {
        input: g_in,
        gamma: sum_dy_hat,
        beta: sum_dy,
    }
}

/// `running ← (1 − momentum)·running + momentum·batch` for mean and variance.
pub fn update_running_stats(running_mean: &mut [f64], running_var: &mut [f64], cache: &BnCache, momentum: f64) {
    for (r, b) in running_mean.iter_mut().zip(&cache.mean) {
        *r = (1.0 - momentum) * *r + momentum * b;
    }
    for (r, b) in running_var.iter_mut().zip(&cache.var) {
        *r = (1.0 - momentum) * *r + momentum * b;
    }
}

pub fn relu(input: &Tensor4) -> Tensor4 {
    let mut out = input.clone();
    for v in out.data.iter_mut() {
        *v = v.max(0.0);
    }
    out
}

/// Gradient of [`relu`]; `output` is the forward result (positive exactly
/// where the input was).
pub fn relu_backward(output: &Tensor4, grad_out: &Tensor4) -> Tensor4 {
    let mut g = grad_out.clone();
    for (gv, o) in g.data.iter_mut().zip(&output.data) {
        if *o <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

/// 2×2 stride-2 max pooling. Also returns, per output value, the index of
/// the winning input within its plane (first maximum in row-major order).
pub fn maxpool2(input: &Tensor4) -> Result<(Tensor4, Vec<u32>)> {
    ensure!(
        input.h % 2 == 0 && input.w % 2 == 0,
        Shape,
        "max pooling needs even dimensions, got {}x{}",
        input.h,
        input.w
    );
    let (h2, w2) = (input.h / 2, input.w / 2);
    let mut out = Tensor4::zeros(input.n, input.c, h2, w2);
    let mut arg = vec![0u32; out.len()];
    let w = input.w;
    for p in 0..input.n * input.c {
        let src = &input.data[p * input.h * w..(p + 1) * input.h * w];
        for y in 0..h2 {
            for x in 0..w2 {
                let cand = [
                    (2 * y) * w + 2 * x,
                    (2 * y) * w + 2 * x + 1,
                    (2 * y + 1) * w + 2 * x,
                    (2 * y + 1) * w + 2 * x + 1,
                ];
                let mut best = cand[0];
                for &i in &cand[1..] {
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                let o = p * h2 * w2 + y * w2 + x;
                out.data[o] = src[best];
                arg[o] = best as u32;
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool2_backward(grad_out: &Tensor4, argmax: &[u32]) -> Tensor4 {
    let (h, w) = (grad_out.h * 2, grad_out.w * 2);
    let mut g = Tensor4::zeros(grad_out.n, grad_out.c, h, w);
    let out_hw = grad_out.plane_len();
    for p in 0..grad_out.n * grad_out.c {
        for i in 0..out_hw {
            let o = p * out_hw + i;
            g.data[p * h * w + argmax[o] as usize] += grad_out.data[o];
        }
    }
    g
}

/// Replicate each value into a 2×2 block.
pub fn avg_unpool2(input: &Tensor4) -> Tensor4 {
    let (h, w) = (input.h * 2, input.w * 2);
    let mut out = Tensor4::zeros(input.n, input.c, h, w);
    for p in 0..input.n * input.c {
        let src = &input.data[p * input.h * input.w..(p + 1) * input.h * input.w];
        let dst = &mut out.data[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = src[(y / 2) * input.w + x / 2];
            }
        }
    }
    out
}

/// Transpose of [`avg_unpool2`]: sum over each 2×2 block.
pub fn avg_unpool2_backward(grad_out: &Tensor4) -> Result<Tensor4> {
    block_reduce(grad_out, 1.0)
}

/// 2×2 stride-2 average pooling.
pub fn avg_pool2(input: &Tensor4) -> Result<Tensor4> {
    block_reduce(input, 0.25)
}

fn block_reduce(input: &Tensor4, scale: f64) -> Result<Tensor4> {
    ensure!(
        input.h % 2 == 0 && input.w % 2 == 0,
        Shape,
        "2x2 pooling needs even dimensions, got {}x{}",
        input.h,
        input.w
    );
    let (h2, w2) = (input.h / 2, input.w / 2);
    let w = input.w;
    let mut out = Tensor4::zeros(input.n, input.c, h2, w2);
    for p in 0..input.n * input.c {
        let src = &input.data[p * input.h * w..(p + 1) * input.h * w];
        for y in 0..h2 {
            for x in 0..w2 {
                let top = src[2 * y * w + 2 * x] + src[2 * y * w + 2 * x + 1];
                let bottom = src[(2 * y + 1) * w + 2 * x] + src[(2 * y + 1) * w + 2 * x + 1];
                out.data[p * h2 * w2 + y * w2 + x] = (top + bottom) * scale;
            }
        }
    }
    Ok(out)
}

/// Stack `a` then `b` along channels.
pub fn concat_channels(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    ensure!(
        a.n == b.n && a.h == b.h && a.w == b.w,
        Shape,
        "cannot concatenate {:?} and {:?}",
        a.shape(),
        b.shape()
    );
    let (ca, cb) = (a.c * a.plane_len(), b.c * b.plane_len());
    let mut data = Vec::with_capacity(a.len() + b.len());
    for n in 0..a.n {
        data.extend_from_slice(&a.data[n * ca..(n + 1) * ca]);
        data.extend_from_slice(&b.data[n * cb..(n + 1) * cb]);
    }
    Ok(Tensor4 {
        n: a.n,
        c: a.c + b.c,
        h: a.h,
        w: a.w,
        data,
    })
}

/// Inverse of [`concat_channels`]: first `c_first` channels, then the rest.
pub fn split_channels(t: &Tensor4, c_first: usize) -> Result<(Tensor4, Tensor4)> {
    ensure!(c_first <= t.c, Shape, "cannot split {c_first} channels from {}", t.c);
    let hw = t.plane_len();
    let (ca, cb) = (c_first * hw, (t.c - c_first) * hw);
    let mut a = Vec::with_capacity(t.n * ca);
    let mut b = Vec::with_capacity(t.n * cb);
    for n in 0..t.n {
        let s = &t.data[n * (ca + cb)..(n + 1) * (ca + cb)];
        a.extend_from_slice(&s[..ca]);
        b.extend_from_slice(&s[ca..]);
    }
    Ok((
        Tensor4 {
            n: t.n,
            c: c_first,
            h: t.h,
            w: t.w,
            data: a,
        },
        Tensor4 {
            n: t.n,
            c: t.c - c_first,
            h: t.h,
            w: t.w,
            data: b,
        },
    ))
}
