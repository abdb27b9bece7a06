//! Brute-force and straight-line reference implementations checked against
//! the library bit for bit.

use coarsefine::depth_io::synth_scene;
use coarsefine::fusion::{energy_fuse, regional_energy, channel_shuffle, FusionConfig, Source};
use coarsefine::numerics::{
    concat_channels, conv2d, relu, upsample_nearest, ConvKernel, Tensor3,
};
use coarsefine::refine::{
    encode_branches, forward, fuse_and_decode, init_weights, BlockSpec, EncoderLayout,
    FusionKind, RefineNetConfig, WeightBundle,
};
use coarsefine::sparse::{nearest_neighbor_fill, sample_sparse};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor3 {
    Tensor3::from_fn(c, h, w, |_, _, _| rng.random_range(-2.0..2.0))
}

/// Direct definition: every output element sums input channel, kernel row,
/// kernel column in that order, then adds the bias.
fn conv_reference(x: &Tensor3, k: &ConvKernel, stride: usize, pad: usize) -> Tensor3 {
    let (c, h, w) = x.dims();
    let oh = (h + 2 * pad - k.kernel_h) / stride + 1;
    let ow = (w + 2 * pad - k.kernel_w) / stride + 1;
    let mut out = Tensor3::zeros(k.out_channels, oh, ow);
    for oc in 0..k.out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ic in 0..c {
                    for ky in 0..k.kernel_h {
                        for kx in 0..k.kernel_w {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += k.weight(oc, ic, ky, kx) * x.get(ic, iy as usize, ix as usize);
                        }
                    }
                }
                out.set(oc, oy, ox, acc + k.bias[oc]);
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_direct_definition_bit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..60 {
        let c = rng.random_range(1..4);
        let oc = rng.random_range(1..4);
        let kh = [1, 3, 5][rng.random_range(0..3)];
        let (h, w) = (rng.random_range(kh..14), rng.random_range(kh..14));
        let stride = rng.random_range(1..3);
        let pad = rng.random_range(0..=kh / 2);
        let x = random_tensor(&mut rng, c, h, w);
        let kw = random_tensor(&mut rng, oc, c, kh * kh).into_vec();
        let b = (0..oc).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k = ConvKernel::new(oc, c, kh, kh, kw, b).unwrap();
        let got = conv2d(&x, &k, stride, pad).unwrap();
        assert_eq!(got, conv_reference(&x, &k, stride, pad));
    }
}

fn energy_reference(f: &Tensor3, window: usize, omega: f64) -> Tensor3 {
    let (c, h, w) = f.dims();
    let r = (window / 2) as isize;
    Tensor3::from_fn(c, h, w, |ch, y, x| {
        let mut e = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                let v = if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                    0.0
                } else {
                    f.get(ch, yy as usize, xx as usize)
                };
                e += omega * (v * v);
            }
        }
        e
    })
}

#[test]
fn energy_fusion_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..40 {
        let (c, h, w) = (rng.random_range(1..4), rng.random_range(1..20), rng.random_range(1..20));
        let window = [1, 3, 5][rng.random_range(0..3)];
        let cfg = FusionConfig::new(window, rng.random_range(0.1..3.0), rng.random_range(0.5..3.0))
            .unwrap();
        let f1 = random_tensor(&mut rng, c, h, w);
        let f2 = random_tensor(&mut rng, c, h, w);
        let e1 = energy_reference(&f1, window, cfg.omega());
        let e2 = energy_reference(&f2, window, cfg.omega());
        assert_eq!(regional_energy(&f1, &cfg).0, e1);
        let (out, mask) = energy_fuse(&f1, &f2, &cfg).unwrap();
        for i in 0..f1.len() {
            let pick_color = e1.as_slice()[i] >= e2.as_slice()[i];
            let expected = cfg.sigma() * if pick_color { f1.as_slice()[i] } else { f2.as_slice()[i] };
            assert_eq!(out.as_slice()[i], expected);
            assert_eq!(mask.labels[i], if pick_color { Source::Color } else { Source::Depth });
        }
    }
}

fn tiny(layout: EncoderLayout, seed: u64) -> RefineNetConfig {
    RefineNetConfig {
        stem_channels: 4,
        stem_kernel: 3,
        blocks: vec![
            BlockSpec::new(6, 3, 2),
            BlockSpec::new(8, 3, 2),
            BlockSpec::new(10, 3, 2),
        ],
        decoder_channels: vec![4, 6, 8],
        head_kernel: 3,
        layout,
        residual: true,
        sparse_depth_input: false,
        depth_scale: 10.0,
        seed,
    }
}

/// Random weights everywhere, including the zero-initialized head.
fn random_weights(cfg: &RefineNetConfig) -> WeightBundle {
    let mut w = init_weights(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed + 99);
    for k in w.kernels_mut() {
        for v in k.weights.iter_mut().chain(k.bias.iter_mut()) {
            *v += rng.random_range(-0.05..0.05);
        }
    }
    w
}

/// Straight-line network: explicit per-block shuffle, per-scale fusion and
/// decoder, written out from the primitives.
fn reference_head(w: &WeightBundle, image: &Tensor3, depth: &Tensor3) -> Tensor3 {
    let cfg = &w.config;
    let conv = |x: &Tensor3, k: &ConvKernel, s: usize| conv2d(x, k, s, k.kernel_h / 2).unwrap();
    let mut fd = vec![relu(&conv(depth, &w.branches[0].stem, 1))];
    let mut fc = vec![relu(&conv(image, &w.branches[1].stem, 1))];
    for i in 1..=cfg.blocks.len() {
        let (mut xd, mut xc) = (fd[i - 1].clone(), fc[i - 1].clone());
        if i >= 2 {
            let (sd, sc) = channel_shuffle(&xd, &xc).unwrap();
            xd = sd;
            xc = sc;
        }
        let s = cfg.blocks[i - 1].stride;
        fd.push(relu(&conv(&xd, &w.branches[0].blocks[i - 1], s)));
        fc.push(relu(&conv(&xc, &w.branches[1].blocks[i - 1], s)));
    }
    let fuse_cfg = FusionConfig::default();
    let fused: Vec<Tensor3> = (0..fd.len())
        .map(|l| energy_fuse(&fc[l], &fd[l], &fuse_cfg).unwrap().0)
        .collect();
    let n = cfg.blocks.len();
    let mut x = fused[n].clone();
    for i in (1..=n).rev() {
        let up = upsample_nearest(&x, cfg.blocks[i - 1].stride);
        let a = relu(&conv2d(&up, &w.decoder[i - 1], 1, 1).unwrap());
        x = concat_channels(&[&a, &fused[i - 1]]).unwrap();
    }
    conv(&x, &w.head, 1)
}

#[test]
fn full_forward_matches_straight_line_composition() {
    let layout = EncoderLayout::Dual {
        shuffle: true,
        fusion: FusionKind::Energy,
    };
    for seed in 0..4 {
        let (image, gt) = synth_scene(seed, 32, 48).unwrap();
        let coarse = nearest_neighbor_fill(&sample_sparse(&gt, 60, seed)).unwrap();
        let w = random_weights(&tiny(layout, seed));
        let depth_in = coarse.to_tensor().scale(1.0 / w.config.depth_scale);
        let head = reference_head(&w, &image.to_tensor(), &depth_in);
        let d_r_ref = head.scale(w.config.depth_scale);

        let feats = encode_branches(&image, &coarse, &w).unwrap();
        assert_eq!(feats.len(), 4);
        let d_r = fuse_and_decode(&feats, &w, &FusionConfig::default()).unwrap();
        assert_eq!(d_r, d_r_ref);

        let out = forward(&image, &coarse, &w, &FusionConfig::default()).unwrap();
        for i in 0..coarse.len() {
            if out.clamped.contains(&i) {
                continue;
            }
            assert_eq!(out.d_o.values()[i], coarse.values()[i] + d_r_ref.as_slice()[i]);
        }
    }
}
