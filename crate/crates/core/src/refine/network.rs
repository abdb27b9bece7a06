//! Forward and backward passes of the coarse-to-fine network.
//!
//! Encoders: `f_0 = relu(stem(x))`, `f_i = relu(block_i(f_{i-1}))`. With two
//! branches and shuffling enabled, block `i ≥ 2` of each branch reads the
//! channel-shuffled outputs of block `i - 1` of both branches. The branch
//! outputs are fused at every scale `0..=N`; the decoder starts from the
//! deepest fused map and at each stage upsamples (nearest), convolves
//! (3×3 + ReLU) and concatenates the next shallower fused map. A final
//! convolution produces one channel at input resolution.

use crate::depth_io::{ColorImage, DepthMap};
use crate::error::{Error, Result};
use crate::fusion::{channel_shuffle, channel_shuffle_grad, energy_fuse, energy_fuse_grad};
use crate::fusion::{FusionConfig, SelectionMask};
use crate::numerics::{
    concat_channels, conv2d, conv2d_grad, relu, relu_grad, split_channels, upsample_nearest,
    upsample_nearest_grad, ConvKernel, Tensor3,
};
use crate::refine::config::{EncoderLayout, FusionKind, RefineNetConfig};
use crate::refine::weights::WeightBundle;

/// Smallest depth a refined map may hold, in meters.
pub const MIN_OUTPUT_DEPTH_M: f64 = 1e-3;

const DECODER_KERNEL_PAD: usize = 1;

/// Network-ready tensors for one sample.
#[derive(Clone, Debug)]
pub struct NetInput {
    pub image: Tensor3,
    /// Depth divided by the configured depth scale.
    pub depth: Tensor3,
}

impl NetInput {
    pub fn new(image: &ColorImage, depth: &DepthMap, cfg: &RefineNetConfig) -> Result<Self> {
        if image.dims() != depth.dims() {
            return Err(Error::Shape(format!(
                "image is {}x{}, depth is {}x{}",
                image.height(),
                image.width(),
                depth.height(),
                depth.width()
            )));
        }
        if !cfg.sparse_depth_input && !depth.is_fully_valid() {
            return Err(Error::Precondition(format!(
                "coarse depth must be fully valid, {} of {} pixels are missing",
                depth.len() - depth.valid_count(),
                depth.len()
            )));
        }
        cfg.check_input_dims(depth.height(), depth.width())?;
        Ok(Self {
            image: image.to_tensor(),
            depth: depth.to_tensor().scale(1.0 / cfg.depth_scale),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.depth.height(), self.depth.width())
    }
}

struct LayerCache {
    input: Tensor3,
    pre: Tensor3,
}

enum FusionCache {
    Identity,
    Energy(SelectionMask),
    Concat(Tensor3),
    Add,
}

struct StageCache {
    up: Tensor3,
    pre: Tensor3,
}

/// Intermediate values of one forward pass, kept for the backward pass.
pub struct ForwardTrace {
    /// `[branch][level]`
    layers: Vec<Vec<LayerCache>>,
    /// `[branch][level]`, post-activation.
    features: Vec<Vec<Tensor3>>,
    fused: Vec<Tensor3>,
    fusion: Vec<FusionCache>,
    stages: Vec<StageCache>,
    head_input: Tensor3,
    /// Raw single-channel head output (before scaling to meters).
    pub head_out: Tensor3,
}

impl ForwardTrace {
    /// Sign pattern of every ReLU input plus every fusion selection. Two
    /// passes with equal patterns are on the same smooth piece.
    pub fn activation_pattern(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let pres = self
            .layers
            .iter()
            .flatten()
            .map(|l| &l.pre)
            .chain(self.stages.iter().map(|s| &s.pre));
        for p in pres {
            out.extend(p.as_slice().iter().map(|&v| u8::from(v > 0.0)));
        }
        for f in &self.fusion {
            if let FusionCache::Energy(mask) = f {
                out.extend(mask.labels.iter().map(|&s| s as u8 + 2));
            }
        }
        out
    }

    /// Smallest `|pre-activation|` over all ReLU inputs.
    pub fn relu_margin(&self) -> f64 {
        self.layers
            .iter()
            .flatten()
            .map(|l| &l.pre)
            .chain(self.stages.iter().map(|s| &s.pre))
            .flat_map(|p| p.as_slice().iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    /// Post-activation features per `[branch][level]`.
    pub fn features(&self) -> &[Vec<Tensor3>] {
        &self.features
    }

    pub fn fused(&self) -> &[Tensor3] {
        &self.fused
    }
}

fn pad_for(kernel: &ConvKernel) -> usize {
    kernel.kernel_h / 2
}

fn conv_relu(kernel: &ConvKernel, input: Tensor3, stride: usize) -> Result<(LayerCache, Tensor3)> {
    let pre = conv2d(&input, kernel, stride, pad_for(kernel))?;
    let out = relu(&pre);
    Ok((LayerCache { input, pre }, out))
}

fn branch_inputs(weights: &WeightBundle, input: &NetInput) -> Result<Vec<Tensor3>> {
    Ok(match weights.config.layout {
        EncoderLayout::Single => vec![concat_channels(&[&input.image, &input.depth])?],
        EncoderLayout::Dual { .. } => vec![input.depth.clone(), input.image.clone()],
    })
}

fn encode(
    weights: &WeightBundle,
    input: &NetInput,
) -> Result<(Vec<Vec<LayerCache>>, Vec<Vec<Tensor3>>)> {
    let cfg = &weights.config;
    let shuffle = matches!(cfg.layout, EncoderLayout::Dual { shuffle: true, .. });
    let nb = weights.branches.len();
    let mut layers: Vec<Vec<LayerCache>> = (0..nb).map(|_| Vec::new()).collect();
    let mut feats: Vec<Vec<Tensor3>> = (0..nb).map(|_| Vec::new()).collect();
    for (b, x) in branch_inputs(weights, input)?.into_iter().enumerate() {
        let (cache, out) = conv_relu(&weights.branches[b].stem, x, 1)?;
        layers[b].push(cache);
        feats[b].push(out);
    }
    for i in 1..=cfg.num_blocks() {
        let mut block_inputs: Vec<Tensor3> = feats.iter().map(|f| f[i - 1].clone()).collect();
        if shuffle && i >= 2 {
            let (d, c) = channel_shuffle(&block_inputs[0], &block_inputs[1])?;
            block_inputs = vec![d, c];
        }
        let stride = cfg.blocks[i - 1].stride;
        for (b, x) in block_inputs.into_iter().enumerate() {
            let (cache, out) = conv_relu(&weights.branches[b].blocks[i - 1], x, stride)?;
            layers[b].push(cache);
            feats[b].push(out);
        }
    }
    Ok((layers, feats))
}

fn fuse_level(
    weights: &WeightBundle,
    level: usize,
    depth: &Tensor3,
    color: Option<&Tensor3>,
    fuse_cfg: &FusionConfig,
) -> Result<(Tensor3, FusionCache)> {
    match (weights.config.layout, color) {
        (EncoderLayout::Single, _) => Ok((depth.clone(), FusionCache::Identity)),
        (EncoderLayout::Dual { fusion, .. }, Some(color)) => match fusion {
            FusionKind::Energy => {
                let (out, mask) = energy_fuse(color, depth, fuse_cfg)?;
                Ok((out, FusionCache::Energy(mask)))
            }
            FusionKind::Concat => {
                let cat = concat_channels(&[depth, color])?;
                let out = conv2d(&cat, &weights.fusion[level], 1, 0)?;
                Ok((out, FusionCache::Concat(cat)))
            }
            FusionKind::Add => Ok((depth.add(color)?, FusionCache::Add)),
        },
        (EncoderLayout::Dual { .. }, None) => {
            Err(Error::Shape("dual layout needs color features".into()))
        }
    }
}

fn decode(
    weights: &WeightBundle,
    fused: &[Tensor3],
) -> Result<(Vec<StageCache>, Tensor3, Tensor3)> {
    let cfg = &weights.config;
    let n = cfg.num_blocks();
    let mut stages: Vec<Option<StageCache>> = (0..n).map(|_| None).collect();
    let mut x = fused[n].clone();
    for i in (1..=n).rev() {
        let up = upsample_nearest(&x, cfg.blocks[i - 1].stride);
        if up.height() != fused[i - 1].height() || up.width() != fused[i - 1].width() {
            return Err(Error::Shape(format!(
                "decoder stage {i}: upsampled {}x{} vs skip {}x{}",
                up.height(),
                up.width(),
                fused[i - 1].height(),
                fused[i - 1].width()
            )));
        }
        let pre = conv2d(&up, &weights.decoder[i - 1], 1, DECODER_KERNEL_PAD)?;
        let act = relu(&pre);
        x = concat_channels(&[&act, &fused[i - 1]])?;
        stages[i - 1] = Some(StageCache { up, pre });
    }
    let head_out = conv2d(&x, &weights.head, 1, pad_for(&weights.head))?;
    Ok((
        stages
            .into_iter()
            .map(|s| s.expect("every stage runs"))
            .collect(),
        x,
        head_out,
    ))
}

/// Full forward pass keeping every intermediate needed for backprop.
pub fn forward_trace(
    weights: &WeightBundle,
    input: &NetInput,
    fuse_cfg: &FusionConfig,
) -> Result<ForwardTrace> {
    let (layers, features) = encode(weights, input)?;
    let n = weights.config.num_blocks();
    let mut fused = Vec::with_capacity(n + 1);
    let mut fusion = Vec::with_capacity(n + 1);
    for level in 0..=n {
        let (f, cache) = fuse_level(
            weights,
            level,
            &features[0][level],
            features.get(1).map(|c| &c[level]),
            fuse_cfg,
        )?;
        fused.push(f);
        fusion.push(cache);
    }
    let (stages, head_input, head_out) = decode(weights, &fused)?;
    Ok(ForwardTrace {
        layers,
        features,
        fused,
        fusion,
        stages,
        head_input,
        head_out,
    })
}

/// Gradients of `Σ grad_head ⊙ head_out` with respect to every kernel.
pub fn backward(
    weights: &WeightBundle,
    trace: &ForwardTrace,
    grad_head: &Tensor3,
    fuse_cfg: &FusionConfig,
) -> Result<WeightBundle> {
    let cfg = &weights.config;
    let n = cfg.num_blocks();
    let mut grads = WeightBundle::zeros(cfg)?;

    let (mut g_x, g_head) = conv2d_grad(
        &trace.head_input,
        &weights.head,
        grad_head,
        1,
        pad_for(&weights.head),
    )?;
    grads.head = g_head;

    let mut g_fused: Vec<Option<Tensor3>> = (0..=n).map(|_| None).collect();
    for i in 1..=n {
        let stage = &trace.stages[i - 1];
        let parts = split_channels(
            &g_x,
            &[cfg.decoder_channels[i - 1], cfg.level_channels(i - 1)],
        )?;
        let [g_act, g_skip]: [Tensor3; 2] = parts.try_into().expect("two parts");
        g_fused[i - 1] = Some(g_skip);
        let g_pre = relu_grad(&stage.pre, &g_act)?;
        let (g_up, g_k) = conv2d_grad(
            &stage.up,
            &weights.decoder[i - 1],
            &g_pre,
            1,
            DECODER_KERNEL_PAD,
        )?;
        grads.decoder[i - 1] = g_k;
        g_x = upsample_nearest_grad(&g_up, cfg.blocks[i - 1].stride)?;
    }
    g_fused[n] = Some(g_x);

    // gradient w.r.t. each branch's post-activation features, per level
    let nb = weights.branches.len();
    let mut g_feat: Vec<Vec<Tensor3>> = trace
        .features
        .iter()
        .map(|levels| {
            levels
                .iter()
                .map(|t| Tensor3::zeros(t.channels(), t.height(), t.width()))
                .collect()
        })
        .collect();
    for level in 0..=n {
        let g = g_fused[level].take().expect("filled above");
        match &trace.fusion[level] {
            FusionCache::Identity => g_feat[0][level].add_assign(&g),
            FusionCache::Add => {
                g_feat[0][level].add_assign(&g);
                g_feat[1][level].add_assign(&g);
            }
            FusionCache::Energy(mask) => {
                let (g_color, g_depth) = energy_fuse_grad(&g, mask, fuse_cfg)?;
                g_feat[0][level].add_assign(&g_depth);
                g_feat[1][level].add_assign(&g_color);
            }
            FusionCache::Concat(cat) => {
                let (g_cat, g_k) = conv2d_grad(cat, &weights.fusion[level], &g, 1, 0)?;
                grads.fusion[level] = g_k;
                let c = cfg.level_channels(level);
                let parts = split_channels(&g_cat, &[c, c])?;
                g_feat[0][level].add_assign(&parts[0]);
                g_feat[1][level].add_assign(&parts[1]);
            }
        }
    }

    let shuffle = matches!(cfg.layout, EncoderLayout::Dual { shuffle: true, .. });
    for level in (0..=n).rev() {
        let mut g_inputs = Vec::with_capacity(nb);
        for b in 0..nb {
            let cache = &trace.layers[b][level];
            let g_pre = relu_grad(&cache.pre, &g_feat[b][level])?;
            let (kernel, stride) = if level == 0 {
                (&weights.branches[b].stem, 1)
            } else {
                (
                    &weights.branches[b].blocks[level - 1],
                    cfg.blocks[level - 1].stride,
                )
            };
            let (g_in, g_k) = conv2d_grad(&cache.input, kernel, &g_pre, stride, pad_for(kernel))?;
            if level == 0 {
                grads.branches[b].stem = g_k;
            } else {
                grads.branches[b].blocks[level - 1] = g_k;
            }
            g_inputs.push(g_in);
        }
        if level == 0 {
            break;
        }
        if shuffle && level >= 2 {
            let (gd, gc) = channel_shuffle_grad(&g_inputs[0], &g_inputs[1])?;
            g_inputs = vec![gd, gc];
        }
        for (b, g) in g_inputs.iter().enumerate() {
            g_feat[b][level - 1].add_assign(g);
        }
    }
    Ok(grads)
}

/// Branch features `(depth, color)` for every scale: index 0 is the stem
/// output, index `i` the output of block `i`.
pub fn encode_branches(
    image: &ColorImage,
    d_sc: &DepthMap,
    weights: &WeightBundle,
) -> Result<Vec<(Tensor3, Tensor3)>> {
    if weights.branches.len() != 2 {
        return Err(Error::Config(
            "encode_branches needs the two-encoder layout".into(),
        ));
    }
    let input = NetInput::new(image, d_sc, &weights.config)?;
    let (_, mut feats) = encode(weights, &input)?;
    let color = feats.pop().expect("color branch");
    let depth = feats.pop().expect("depth branch");
    Ok(depth.into_iter().zip(color).collect())
}

/// Fuses per-scale branch features and decodes them into a single-channel
/// residual in meters at input resolution.
pub fn fuse_and_decode(
    features: &[(Tensor3, Tensor3)],
    weights: &WeightBundle,
    fuse_cfg: &FusionConfig,
) -> Result<Tensor3> {
    let cfg = &weights.config;
    let n = cfg.num_blocks();
    if weights.branches.len() != 2 {
        return Err(Error::Config(
            "fuse_and_decode needs the two-encoder layout".into(),
        ));
    }
    if features.len() != n + 1 {
        return Err(Error::Shape(format!(
            "expected features for {} scales, got {}",
            n + 1,
            features.len()
        )));
    }
    let mut fused = Vec::with_capacity(n + 1);
    for (level, (d, c)) in features.iter().enumerate() {
        if d.channels() != cfg.level_channels(level) {
            return Err(Error::Shape(format!(
                "scale {level} has {} channels, config says {}",
                d.channels(),
                cfg.level_channels(level)
            )));
        }
        fused.push(fuse_level(weights, level, d, Some(c), fuse_cfg)?.0);
    }
    let (_, _, head_out) = decode(weights, &fused)?;
    Ok(head_out.scale(cfg.depth_scale))
}

/// Result of refining one coarse map.
#[derive(Clone, Debug)]
pub struct RefineOutput {
    /// Refined depth, fully valid.
    pub d_o: DepthMap,
    /// Residual in meters. At unclamped pixels this is exactly `d_o - d_sc`.
    pub d_r: Tensor3,
    /// Row-major indices where the output had to be clamped into
    /// `[MIN_OUTPUT_DEPTH_M, max_range]`.
    pub clamped: Vec<usize>,
}

/// Runs the network and forms `d_o = d_r + d_sc` (or `d_o = d_r` for the
/// direct-prediction layout).
pub fn forward(
    image: &ColorImage,
    d_sc: &DepthMap,
    weights: &WeightBundle,
    fuse_cfg: &FusionConfig,
) -> Result<RefineOutput> {
    let cfg = &weights.config;
    let input = NetInput::new(image, d_sc, cfg)?;
    let trace = forward_trace(weights, &input, fuse_cfg)?;
    Ok(assemble_output(&trace.head_out, d_sc, cfg))
}

pub(crate) fn assemble_output(
    head_out: &Tensor3,
    d_sc: &DepthMap,
    cfg: &RefineNetConfig,
) -> RefineOutput {
    let (h, w) = d_sc.dims();
    let max = d_sc.max_range();
    let mut d_o = Vec::with_capacity(h * w);
    let mut d_r = Vec::with_capacity(h * w);
    let mut clamped = Vec::new();
    for (i, (&raw, &base)) in head_out.as_slice().iter().zip(d_sc.values()).enumerate() {
        let r = cfg.depth_scale * raw;
        let sum = if cfg.residual { base + r } else { r };
        if sum < MIN_OUTPUT_DEPTH_M || sum > max {
            clamped.push(i);
            d_o.push(sum.clamp(MIN_OUTPUT_DEPTH_M, max));
            d_r.push(r);
        } else {
            d_o.push(sum);
            // the residual actually applied after rounding
            d_r.push(if cfg.residual { sum - base } else { r });
        }
    }
    RefineOutput {
        d_o: DepthMap::from_raw(h, w, d_o, max),
        d_r: Tensor3::from_raw(1, h, w, d_r),
        clamped,
    }
}

/// Unclamped prediction in meters: `d_sc + scale·head` or `scale·head`.
pub(crate) fn raw_prediction(
    head_out: &Tensor3,
    base: &DepthMap,
    cfg: &RefineNetConfig,
) -> Vec<f64> {
    head_out
        .as_slice()
        .iter()
        .zip(base.values())
        .map(|(&h, &b)| {
            let r = cfg.depth_scale * h;
            if cfg.residual {
                b + r
            } else {
                r
            }
        })
        .collect()
}
