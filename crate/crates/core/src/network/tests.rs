use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{max_rel_err, rel_err};
use super::layers::*;
use super::*;

fn random(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_tensor(n: usize, c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor4 {
    Tensor4::from_vec(n, c, h, w, random(n * c * h * w, rng)).unwrap()
}

fn with_data(t: &Tensor4, data: &[f64]) -> Tensor4 {
    Tensor4::from_vec(t.n, t.c, t.h, t.w, data.to_vec()).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const H: f64 = 1e-6;
const FLOOR: f64 = 1e-4;

fn conv_check(n: usize, c_in: usize, c_out: usize, hw: (usize, usize), k: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(n, c_in, hw.0, hw.1, &mut rng);
    let kern = random(c_out * c_in * k * k, &mut rng);
    let bias = random(c_out, &mut rng);
    let w = random(n * c_out * hw.0 * hw.1, &mut rng);
    let g = conv2d_backward(
        &x,
        &kern,
        c_out,
        k,
        &with_data(&Tensor4::zeros(n, c_out, hw.0, hw.1), &w),
    )
    .unwrap();
    let e_x = max_rel_err(&x.data, &g.input.data, H, FLOOR, |d| {
        dot(
            &w,
            &conv2d_forward(&with_data(&x, d), &kern, &bias, c_out, k).unwrap().data,
        )
    });
    let e_k = max_rel_err(&kern, &g.kernel, H, FLOOR, |d| {
        dot(&w, &conv2d_forward(&x, d, &bias, c_out, k).unwrap().data)
    });
    let e_b = max_rel_err(&bias, &g.bias, H, FLOOR, |d| {
        dot(&w, &conv2d_forward(&x, &kern, d, c_out, k).unwrap().data)
    });
    e_x.max(e_k).max(e_b)
}

#[test]
fn conv_identity_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_tensor(2, 1, 5, 6, &mut rng);
    assert_eq!(conv2d_forward(&x, &[1.0], &[0.0], 1, 1).unwrap(), x);
}

#[test]
fn conv_zero_padding() {
    let x = Tensor4::from_vec(1, 1, 5, 5, vec![1.0; 25]).unwrap();
    let y = conv2d_forward(&x, &[1.0; 9], &[0.0], 1, 3).unwrap();
    assert_eq!(y.data[2 * 5 + 2], 9.0);
    assert_eq!(y.data[0], 4.0);
    assert_eq!(y.data[2], 6.0);
}

#[test]
fn conv_rejects_bad_shapes() {
    let x = Tensor4::zeros(1, 2, 4, 4);
    assert!(conv2d_forward(&x, &[0.0; 9], &[0.0], 1, 3).is_err());
    assert!(conv2d_forward(&x, &[0.0; 8], &[0.0], 1, 2).is_err());
    assert!(conv2d_forward(&x, &[0.0; 18], &[0.0, 0.0], 1, 3).is_err());
}

#[test]
fn conv_gradients_match_finite_differences() {
    assert!(conv_check(2, 3, 4, (8, 8), 3, 3) < 1e-4);
    assert!(conv_check(2, 3, 2, (4, 6), 1, 4) < 1e-4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn conv_gradients_random_shapes(
        n in 1usize..3, c_in in 1usize..4, c_out in 1usize..4,
        h in 1usize..6, w in 1usize..6, k in prop::sample::select(vec![1usize, 3, 5]), seed in any::<u64>()
    ) {
        prop_assert!(conv_check(n, c_in, c_out, (h, w), k, seed) < 1e-4);
    }

    #[test]
    fn batchnorm_gradients_random_shapes(
        n in 1usize..3, c in 1usize..4, h in 1usize..5, w in 2usize..5, seed in any::<u64>()
    ) {
        prop_assert!(bn_check(n, c, h, w, seed) < 1e-4);
    }
}

fn bn_check(n: usize, c: usize, h: usize, w: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(n, c, h, w, &mut rng);
    let gamma: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
    let beta = random(c, &mut rng);
    let wts = random(x.len(), &mut rng);
    let (_, cache) = batchnorm_train(&x, &gamma, &beta).unwrap();
    let g = batchnorm_backward(&with_data(&x, &wts), &cache, &gamma);
    let loss = |x: &Tensor4, gm: &[f64], bt: &[f64]| dot(&wts, &batchnorm_train(x, gm, bt).unwrap().0.data);
    let e_x = max_rel_err(&x.data, &g.input.data, H, FLOOR, |d| {
        loss(&with_data(&x, d), &gamma, &beta)
    });
    let e_g = max_rel_err(&gamma, &g.gamma, H, FLOOR, |d| loss(&x, d, &beta));
    let e_b = max_rel_err(&beta, &g.beta, H, FLOOR, |d| loss(&x, &gamma, d));
    e_x.max(e_g).max(e_b)
}

#[test]
fn batchnorm_normalizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut x = random_tensor(3, 2, 4, 4, &mut rng);
    for v in x.data.iter_mut() {
        *v = 3.0 * *v + 7.0;
    }
    let (y, _) = batchnorm_train(&x, &[1.0, 1.0], &[0.0, 0.0]).unwrap();
    for ch in 0..2 {
        let vals: Vec<f64> = (0..3).flat_map(|n| y.plane(n, ch).to_vec()).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / vals.len() as f64;
        assert!(m.abs() < 1e-6);
        assert!((v - 1.0).abs() < 1e-5);
    }
    let (z, _) = batchnorm_train(&x, &[2.0, 2.0], &[3.0, 3.0]).unwrap();
    for (a, b) in z.data.iter().zip(&y.data) {
        assert_eq!(*a, 2.0 * b + 3.0);
    }
}

#[test]
fn batchnorm_rejects_degenerate_batch() {
    let x = Tensor4::zeros(1, 2, 1, 1);
    assert!(batchnorm_train(&x, &[1.0, 1.0], &[0.0, 0.0]).is_err());
    assert!(batchnorm_train(&Tensor4::zeros(1, 2, 2, 2), &[1.0], &[0.0]).is_err());
}

#[test]
fn batchnorm_gradients() {
    for seed in 0..5 {
        assert!(bn_check(2, 3, 4, 4, seed) < 1e-4);
    }
}

#[test]
fn batchnorm_train_infer_consistency() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_tensor(2, 3, 4, 4, &mut rng);
    let gamma = random(3, &mut rng);
    let beta = random(3, &mut rng);
    let (y, cache) = batchnorm_train(&x, &gamma, &beta).unwrap();
    let mut rm = vec![0.0; 3];
    let mut rv = vec![1.0; 3];
    update_running_stats(&mut rm, &mut rv, &cache, 1.0);
    let z = batchnorm_infer(&x, &gamma, &beta, &rm, &rv).unwrap();
    for (a, b) in y.data.iter().zip(&z.data) {
        assert!((a - b).abs() < 1e-12);
    }
    let mut rm2 = vec![1.0; 3];
    let mut rv2 = vec![1.0; 3];
    update_running_stats(&mut rm2, &mut rv2, &cache, 0.1);
    assert!((rm2[0] - (0.9 + 0.1 * cache.mean[0])).abs() < 1e-15);
}

#[test]
fn relu_values_and_gradient() {
    let x = Tensor4::from_vec(1, 1, 1, 4, vec![-1.0, 2.0, 0.5, -0.3]).unwrap();
    let y = relu(&x);
    assert_eq!(y.data, vec![0.0, 2.0, 0.5, 0.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random_tensor(2, 2, 3, 3, &mut rng);
    let w = random(x.len(), &mut rng);
    let g = relu_backward(&relu(&x), &with_data(&x, &w));
    for i in 0..x.len() {
        if x.data[i].abs() < 1e-3 {
            continue;
        }
        let num = super::gradcheck::central_diff(&x.data, i, H, |d| dot(&w, &relu(&with_data(&x, d)).data));
        assert!((num - g.data[i]).abs() < 1e-6);
    }
}

#[test]
fn maxpool_cases() {
    let c = Tensor4::from_vec(1, 1, 4, 4, vec![2.5; 16]).unwrap();
    let (p, arg) = maxpool2(&c).unwrap();
    assert_eq!(p.data, vec![2.5; 4]);
    // ties go to the first index of each block
    assert_eq!(arg, vec![0, 2, 8, 10]);
    let mut hot = Tensor4::zeros(1, 1, 4, 4);
    hot.data[5] = 1.0;
    let (p, _) = maxpool2(&hot).unwrap();
    assert_eq!(p.data, vec![1.0, 0.0, 0.0, 0.0]);
    hot.data[5] = -1.0;
    assert_eq!(maxpool2(&hot).unwrap().0.data, vec![0.0; 4]);
    assert!(maxpool2(&Tensor4::zeros(1, 1, 3, 4)).is_err());
}

#[test]
fn maxpool_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random_tensor(2, 2, 4, 6, &mut rng);
    let (y, arg) = maxpool2(&x).unwrap();
    let w = random(y.len(), &mut rng);
    let g = maxpool2_backward(&with_data(&y, &w), &arg);
    let e = max_rel_err(&x.data, &g.data, H, FLOOR, |d| {
        dot(&w, &maxpool2(&with_data(&x, d)).unwrap().0.data)
    });
    assert!(e < 1e-4);
}

#[test]
fn unpool_cases() {
    let x = Tensor4::from_vec(1, 1, 1, 1, vec![0.7]).unwrap();
    assert_eq!(avg_unpool2(&x).data, vec![0.7; 4]);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = random_tensor(2, 3, 5, 3, &mut rng);
    assert_eq!(avg_pool2(&avg_unpool2(&x)).unwrap(), x);
    let y = random_tensor(2, 3, 10, 6, &mut rng);
    let lhs = avg_unpool2(&x).dot(&y);
    let rhs = x.dot(&avg_unpool2_backward(&y).unwrap());
    assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
}

#[test]
fn concat_and_split() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let a = random_tensor(2, 2, 3, 3, &mut rng);
    let b = random_tensor(2, 3, 3, 3, &mut rng);
    assert_eq!(concat_channels(&a, &Tensor4::zeros(2, 0, 3, 3)).unwrap(), a);
    let ab = concat_channels(&a, &b).unwrap();
    assert_eq!(ab.c, 5);
    assert_eq!(ab.plane(1, 2), b.plane(1, 0));
    let (a2, b2) = split_channels(&ab, 2).unwrap();
    assert_eq!((a2, b2), (a, b.clone()));
    assert!(concat_channels(&b, &Tensor4::zeros(2, 1, 3, 4)).is_err());
}

fn small_arch(depth: usize) -> ArchConfig {
    ArchConfig {
        depth,
        base_channels: 2,
        blocks_per_stage: 2,
        final_stage_blocks: 1,
        ..ArchConfig::default()
    }
}

/// Randomize BN affine parameters so the check is not at a special point.
fn perturbed_params(arch: &ArchConfig, seed: u64) -> NetworkParams {
    let mut p = NetworkParams::init(arch, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for t in p.tensors.iter_mut() {
        match t.kind {
            ParamKind::Gamma => t.data.iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5)),
            ParamKind::Beta | ParamKind::Bias => t.data.iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2)),
            _ => {}
        }
    }
    p
}

fn flatten(p: &NetworkParams) -> Vec<f64> {
    p.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
}

fn unflatten(p: &NetworkParams, flat: &[f64]) -> NetworkParams {
    let mut q = p.clone();
    let mut off = 0;
    for t in q.tensors.iter_mut() {
        let n = t.data.len();
        t.data.copy_from_slice(&flat[off..off + n]);
        off += n;
    }
    q
}

/// Directional derivative check of `L = Σ w·f(x; η)` along random
/// directions in input and parameter space.
fn network_direction_check(arch: &ArchConfig, n: usize, size: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = perturbed_params(arch, seed);
    let x = random_tensor(n, 1, size, size, &mut rng);
    let w = random(x.len(), &mut rng);
    let (_, cache) = forward_train(&p, &x).unwrap();
    let (gx, gp) = backward(&p, &cache, &with_data(&x, &w)).unwrap();
    let eta = flatten(&p);
    let gflat: Vec<f64> = gp.iter().flatten().copied().collect();
    let trainable: Vec<bool> = p
        .tensors
        .iter()
        .flat_map(|t| std::iter::repeat_n(t.kind.trainable(), t.data.len()))
        .collect();
    let v_eta: Vec<f64> = trainable
        .iter()
        .map(|&t| if t { rng.random_range(-1.0..1.0) } else { 0.0 })
        .collect();
    let mut v_x = random(x.len(), &mut rng);
    // unit-norm direction keeps the probe step small enough not to straddle ReLU kinks
    let norm = (dot(&v_eta, &v_eta) + dot(&v_x, &v_x)).sqrt();
    let v_eta: Vec<f64> = v_eta.iter().map(|v| v / norm).collect();
    v_x.iter_mut().for_each(|v| *v /= norm);
    let analytic = dot(&gflat, &v_eta) + dot(&gx.data, &v_x);
    let h = 1e-5;
    let loss = |s: f64| {
        let e: Vec<f64> = eta.iter().zip(&v_eta).map(|(a, b)| a + s * b).collect();
        let xd: Vec<f64> = x.data.iter().zip(&v_x).map(|(a, b)| a + s * b).collect();
        dot(
            &w,
            &forward_train(&unflatten(&p, &e), &with_data(&x, &xd)).unwrap().0.data,
        )
    };
    let numeric = (loss(h) - loss(-h)) / (2.0 * h);
    rel_err(analytic, numeric, 1e-6)
}

#[test]
fn network_gradient_directional() {
    for seed in 0..4 {
        let e = network_direction_check(&small_arch(2), 2, 8, seed);
        assert!(e < 1e-3, "seed {seed}: {e}");
    }
    for (n, sz) in [(1, 16), (2, 16), (1, 32)] {
        let e = network_direction_check(&small_arch(3), n, sz, 7);
        assert!(e < 1e-3, "{n}x{sz}: {e}");
    }
}

#[test]
fn residual_identity_with_zero_head() {
    let arch = small_arch(2);
    let mut p = NetworkParams::init(&arch, 3).unwrap();
    let layout = p.layout();
    p.tensors[layout.head_kernel].data.fill(0.0);
    p.tensors[layout.head_bias].data.fill(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_tensor(2, 1, 8, 12, &mut rng);
    assert_eq!(forward_infer(&p, &x).unwrap(), x);
    assert_eq!(forward_train(&p, &x).unwrap().0, x);
}

#[test]
fn output_shape_matches_input() {
    let p = NetworkParams::init(&small_arch(3), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (h, w) in [(8, 8), (16, 24), (32, 8)] {
        let x = random_tensor(2, 1, h, w, &mut rng);
        assert_eq!(forward_infer(&p, &x).unwrap().shape(), x.shape());
    }
    assert!(forward_infer(&p, &Tensor4::zeros(1, 1, 12, 8)).is_err());
    assert!(forward_infer(&p, &Tensor4::zeros(1, 2, 8, 8)).is_err());
}

#[test]
fn backward_zero_and_linear() {
    let p = perturbed_params(&small_arch(2), 5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_tensor(2, 1, 8, 8, &mut rng);
    let (_, cache) = forward_train(&p, &x).unwrap();
    let (gx, gp) = backward(&p, &cache, &Tensor4::zeros(2, 1, 8, 8)).unwrap();
    assert!(gx.data.iter().all(|&v| v == 0.0));
    assert!(gp.iter().flatten().all(|&v| v == 0.0));
    let a = random_tensor(2, 1, 8, 8, &mut rng);
    let b = random_tensor(2, 1, 8, 8, &mut rng);
    let sum = with_data(
        &a,
        &a.data.iter().zip(&b.data).map(|(u, v)| 2.0 * u + v).collect::<Vec<_>>(),
    );
    let (ga, pa) = backward(&p, &cache, &a).unwrap();
    let (gb, pb) = backward(&p, &cache, &b).unwrap();
    let (gs, ps) = backward(&p, &cache, &sum).unwrap();
    for i in 0..gs.len() {
        assert!((gs.data[i] - 2.0 * ga.data[i] - gb.data[i]).abs() < 1e-9);
    }
    for ((s, a), b) in ps.iter().flatten().zip(pa.iter().flatten()).zip(pb.iter().flatten()) {
        assert!((s - 2.0 * a - b).abs() < 1e-9);
    }
    assert!(backward(&p, &cache, &Tensor4::zeros(1, 1, 8, 8)).is_err());
}

#[test]
fn network_train_infer_consistency() {
    let mut p = perturbed_params(&small_arch(2), 6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_tensor(3, 1, 8, 8, &mut rng);
    let (y, cache) = forward_train(&p, &x).unwrap();
    update_bn_stats(&mut p, &cache, 1.0);
    let z = forward_infer(&p, &x).unwrap();
    let max = y
        .data
        .iter()
        .zip(&z.data)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(max < 1e-4, "{max}");
}

/// Width of the columns touched by perturbing the centre pixel.
fn impulse_support(depth: usize) -> usize {
    let arch = ArchConfig {
        depth,
        base_channels: 2,
        blocks_per_stage: 1,
        final_stage_blocks: 1,
        ..ArchConfig::default()
    };
    let mut p = NetworkParams::init(&arch, 21).unwrap();
    // shift BN so ReLUs are active and the impulse propagates
    for t in p.tensors.iter_mut().filter(|t| t.kind == ParamKind::Beta) {
        t.data.fill(1.0);
    }
    let n = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = random_tensor(1, 1, n, n, &mut rng);
    let mut xp = x.clone();
    xp.data[(n / 2) * n + n / 2] += 1.0;
    let a = forward_infer(&p, &x).unwrap();
    let b = forward_infer(&p, &xp).unwrap();
    let cols: Vec<usize> = (0..n * n)
        .filter(|&i| (a.data[i] - b.data[i]).abs() > 1e-12)
        .map(|i| i % n)
        .collect();
    cols.iter().max().unwrap() - cols.iter().min().unwrap() + 1
}

#[test]
fn receptive_field_grows_with_depth() {
    let s: Vec<usize> = (1..=3).map(impulse_support).collect();
    assert!(s[0] < s[1] && s[1] < s[2], "{s:?}");
}

#[test]
fn params_layout_and_validation() {
    let arch = ArchConfig::default();
    let p = NetworkParams::init(&arch, 0).unwrap();
    p.validate().unwrap();
    // 4 + 4 + 4 encoder, 4 bottom, 4 + 4 + 2 decoder blocks, 6 tensors each, plus head
    assert_eq!(p.tensors.len(), 26 * 6 + 2);
    assert_eq!(p.find("enc0.block0.conv.kernel").unwrap().shape, vec![16, 1, 3, 3]);
    assert_eq!(p.find("bottom.block0.conv.kernel").unwrap().shape, vec![128, 64, 3, 3]);
    assert_eq!(
        p.find("dec2.block0.conv.kernel").unwrap().shape,
        vec![64, 64 + 128, 3, 3]
    );
    assert_eq!(p.find("head.kernel").unwrap().shape, vec![1, 16, 1, 1]);
    let mut bad = p.clone();
    bad.find_mut("enc1.block2.bn.running_var").unwrap().data[0] = 0.0;
    assert!(bad.validate().is_err());
    assert!(NetworkParams::init(&ArchConfig { depth: 0, ..arch }, 0).is_err());
}

#[test]
fn params_save_load_round_trip() {
    let p = perturbed_params(&small_arch(2), 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    p.save(&path).unwrap();
    assert!(dir.path().join("net.bin").exists());
    let q = NetworkParams::load(&path).unwrap();
    assert_eq!(q.arch, p.arch);
    for (a, b) in q.tensors.iter().zip(&p.tensors) {
        assert_eq!(a.name, b.name);
        for (u, v) in a.data.iter().zip(&b.data) {
            assert_eq!(*u, *v as f32 as f64);
        }
    }
    let q2 = NetworkParams::load(&path).unwrap();
    assert_eq!(q, q2);
    std::fs::write(dir.path().join("net.bin"), [0u8; 6]).unwrap();
    assert!(NetworkParams::load(&path).is_err());
}
