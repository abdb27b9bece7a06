//! Central finite-difference checks of every hand-written backward pass.
//!
//! Each suite builds a small random instance, keeps it only if every ReLU
//! input and every energy comparison is at least [`MARGIN`] away from its
//! switching point, and compares analytic gradients against
//! `(f(θ + h) - f(θ - h)) / 2h` for every input and parameter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::depth_io::{synth_scene, DepthMap};
use crate::error::{Error, Result};
use crate::eval::LossConfig;
use crate::fusion::{
    channel_shuffle, channel_shuffle_grad, energy_fuse, energy_fuse_grad, selection_margin,
    FusionConfig,
};
use crate::numerics::{conv2d, conv2d_grad, relu, relu_grad, ConvKernel, Tensor3};
use crate::refine::config::{BlockSpec, EncoderLayout, FusionKind, RefineNetConfig};
use crate::refine::network::{backward, forward_trace, raw_prediction, NetInput};
use crate::refine::train::sample_loss_and_grad;
use crate::refine::weights::{init_weights, WeightBundle};
use crate::sparse::{nearest_neighbor_fill, sample_sparse};

/// Required distance of every ReLU input and energy difference from zero.
pub const MARGIN: f64 = 1e-3;
/// Finite-difference step.
pub const STEP: f64 = 1e-4;
/// Entries whose gradient is below this fraction of the suite's largest
/// analytic gradient are compared against that fraction instead of their
/// own magnitude, so float noise on near-zero entries is not amplified.
pub const FLOOR_FRACTION: f64 = 1e-3;
/// Side of the square instances.
pub const SIDE: usize = 16;

const MAX_ATTEMPTS: u64 = 500;

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    if denom == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Outcome of one suite.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameters left out because every step crossed a kink.
    pub skipped: usize,
    /// Analytic and numeric values at the worst entry.
    pub worst: (f64, f64),
    /// Seed of the instance that passed the margin filter.
    pub instance_seed: u64,
}

impl CheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol && self.checked > 0
    }
}

struct Tracker {
    pairs: Vec<(f64, f64)>,
    skipped: usize,
}

impl Tracker {
    fn new() -> Self {
        Self {
            pairs: Vec::new(),
            skipped: 0,
        }
    }

    fn push(&mut self, analytic: f64, numeric: f64) {
        self.pairs.push((analytic, numeric));
    }

    fn report(self, name: &str, seed: u64) -> CheckReport {
        let scale = self.pairs.iter().fold(0.0f64, |m, p| m.max(p.0.abs()));
        let floor = FLOOR_FRACTION * scale;
        let mut max = 0.0;
        let mut worst = (0.0, 0.0);
        for &(a, n) in &self.pairs {
            let e = relative_error(a, n, floor);
            if e > max {
                max = e;
                worst = (a, n);
            }
        }
        CheckReport {
            name: name.to_string(),
            max_rel_error: max,
            checked: self.pairs.len(),
            skipped: self.skipped,
            worst,
            instance_seed: seed,
        }
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor3 {
    Tensor3::from_fn(c, h, w, |_, _, _| rng.random_range(-1.0..1.0))
}

/// Central difference of an objective given by `combine`, which receives
/// the outputs at `+h` and `-h` and returns `f(+h) - f(-h)`. Differencing
/// outputs elementwise before summing keeps roundoff far below the step,
/// and one Richardson step over `h` and `h/2` cancels the `h²` term.
fn central_at(
    step: f64,
    mut outputs: impl FnMut(f64) -> Result<Vec<f64>>,
    combine: impl Fn(&[f64], &[f64]) -> Result<f64>,
) -> Result<f64> {
    let mut at = |h: f64| -> Result<f64> {
        let plus = outputs(h)?;
        let minus = outputs(-h)?;
        Ok(combine(&plus, &minus)? / (2.0 * h))
    };
    let coarse = at(step)?;
    let fine = at(step / 2.0)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

fn central(
    outputs: impl FnMut(f64) -> Result<Vec<f64>>,
    combine: impl Fn(&[f64], &[f64]) -> Result<f64>,
) -> Result<f64> {
    central_at(STEP, outputs, combine)
}

/// `Σ g ⊙ (y+ - y-)`.
fn linear(g: &[f64]) -> impl Fn(&[f64], &[f64]) -> Result<f64> + '_ {
    move |p, m| {
        Ok(g.iter()
            .zip(p.iter().zip(m))
            .map(|(g, (p, m))| g * (p - m))
            .sum())
    }
}

fn perturbed(t: &Tensor3, i: usize, d: f64) -> Tensor3 {
    let mut t = t.clone();
    t.as_mut_slice()[i] += d;
    t
}

/// Gradient of `Σ G ⊙ conv2d(x, K)` with respect to `x`, weights and bias.
pub fn check_conv2d(seed: u64, stride: usize, padding: usize) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(&mut rng, 2, SIDE, SIDE);
    let k = random_tensor(&mut rng, 3, 2, 9);
    let b: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let kernel = ConvKernel::new(3, 2, 3, 3, k.into_vec(), b)?;
    let y = conv2d(&x, &kernel, stride, padding)?;
    let g = random_tensor(&mut rng, y.channels(), y.height(), y.width());
    let (gx, gk) = conv2d_grad(&x, &kernel, &g, stride, padding)?;

    let g = g.as_slice();
    let mut t = Tracker::new();
    for i in 0..x.len() {
        let fd = central(
            |d| Ok(conv2d(&perturbed(&x, i, d), &kernel, stride, padding)?.into_vec()),
            linear(g),
        )?;
        t.push(gx.as_slice()[i], fd);
    }
    for i in 0..kernel.weights.len() {
        let fd = central(
            |d| {
                let mut k2 = kernel.clone();
                k2.weights[i] += d;
                Ok(conv2d(&x, &k2, stride, padding)?.into_vec())
            },
            linear(g),
        )?;
        t.push(gk.weights[i], fd);
    }
    for i in 0..kernel.bias.len() {
        let fd = central(
            |d| {
                let mut k2 = kernel.clone();
                k2.bias[i] += d;
                Ok(conv2d(&x, &k2, stride, padding)?.into_vec())
            },
            linear(g),
        )?;
        t.push(gk.bias[i], fd);
    }
    Ok(t.report(&format!("conv2d_grad stride={stride} pad={padding}"), seed))
}

/// Gradient of `Σ G ⊙ relu(x)` on inputs at least `MARGIN` from zero.
pub fn check_relu(seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor3::from_fn(2, SIDE, SIDE, |_, _, _| {
        let m = rng.random_range(MARGIN..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    });
    let g = random_tensor(&mut rng, 2, SIDE, SIDE);
    let gx = relu_grad(&x, &g)?;
    let mut t = Tracker::new();
    for i in 0..x.len() {
        let fd = central(
            |d| Ok(relu(&perturbed(&x, i, d)).into_vec()),
            linear(g.as_slice()),
        )?;
        t.push(gx.as_slice()[i], fd);
    }
    Ok(t.report("relu_grad", seed))
}

/// Gradient of `Σ Gd ⊙ f'_d + Σ Gc ⊙ f'_c` through the channel shuffle.
pub fn check_channel_shuffle(seed: u64, channels: usize) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = random_tensor(&mut rng, channels, SIDE, SIDE);
    let c = random_tensor(&mut rng, channels, SIDE, SIDE);
    let gd = random_tensor(&mut rng, channels, SIDE, SIDE);
    let gc = random_tensor(&mut rng, channels, SIDE, SIDE);
    let (ad, ac) = channel_shuffle_grad(&gd, &gc)?;
    let outputs = |d: &Tensor3, c: &Tensor3| -> Result<Vec<f64>> {
        let (sd, sc) = channel_shuffle(d, c)?;
        let mut v = sd.into_vec();
        v.extend_from_slice(sc.as_slice());
        Ok(v)
    };
    let mut g = gd.into_vec();
    g.extend_from_slice(gc.as_slice());
    let mut t = Tracker::new();
    for i in 0..d.len() {
        t.push(
            ad.as_slice()[i],
            central(|e| outputs(&perturbed(&d, i, e), &c), linear(&g))?,
        );
        t.push(
            ac.as_slice()[i],
            central(|e| outputs(&d, &perturbed(&c, i, e)), linear(&g))?,
        );
    }
    Ok(t.report(&format!("channel_shuffle_grad M={channels}"), seed))
}

/// Gradient of `Σ G ⊙ energy_fuse(f1, f2)` on an instance whose energy
/// comparisons all clear `MARGIN`. The selection is held fixed, so both
/// the analytic and the numeric derivative treat it as constant.
pub fn check_energy_fuse(seed: u64, cfg: &FusionConfig) -> Result<CheckReport> {
    for attempt in 0..MAX_ATTEMPTS {
        let s = seed.wrapping_add(attempt);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let f1 = random_tensor(&mut rng, 2, SIDE, SIDE);
        let f2 = random_tensor(&mut rng, 2, SIDE, SIDE);
        if selection_margin(&f1, &f2, cfg)? < MARGIN {
            continue;
        }
        let g = random_tensor(&mut rng, 2, SIDE, SIDE);
        let (_, mask) = energy_fuse(&f1, &f2, cfg)?;
        let (g1, g2) = energy_fuse_grad(&g, &mask, cfg)?;
        let mut t = Tracker::new();
        for i in 0..f1.len() {
            for (which, analytic) in [(0, g1.as_slice()[i]), (1, g2.as_slice()[i])] {
                let fd = central(
                    |d| {
                        let (a, b) = if which == 0 {
                            (perturbed(&f1, i, d), f2.clone())
                        } else {
                            (f1.clone(), perturbed(&f2, i, d))
                        };
                        let (out, m2) = energy_fuse(&a, &b, cfg)?;
                        if m2 != mask {
                            return Err(Error::Precondition(
                                "selection changed under perturbation".into(),
                            ));
                        }
                        Ok(out.into_vec())
                    },
                    linear(g.as_slice()),
                )?;
                t.push(analytic, fd);
            }
        }
        return Ok(t.report("energy_fuse_grad", s));
    }
    Err(Error::Precondition(format!(
        "no instance within {MAX_ATTEMPTS} attempts cleared the selection margin"
    )))
}

/// Small two-encoder network used by the end-to-end checks.
pub fn tiny_network(layout: EncoderLayout, seed: u64) -> RefineNetConfig {
    RefineNetConfig {
        stem_channels: 4,
        stem_kernel: 3,
        blocks: vec![BlockSpec::new(4, 3, 2), BlockSpec::new(8, 3, 2)],
        decoder_channels: vec![4, 4],
        head_kernel: 3,
        layout,
        residual: true,
        sparse_depth_input: false,
        depth_scale: 10.0,
        seed,
    }
}

/// Random weights everywhere, head included, so every parameter receives
/// gradient.
fn random_bundle(cfg: &RefineNetConfig) -> Result<WeightBundle> {
    let mut w = init_weights(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xbead);
    for k in w.kernels_mut() {
        let bound = (3.0 / (k.in_channels * k.kernel_h * k.kernel_w) as f64).sqrt();
        if k.out_channels == 1 {
            for v in &mut k.weights {
                *v = rng.random_range(-bound..bound);
            }
        }
        for b in &mut k.bias {
            *b = rng.random_range(-0.1..0.1);
        }
    }
    Ok(w)
}

/// Smallest distance of any ReLU input or energy comparison from its
/// switching point.
fn network_margin(w: &WeightBundle, input: &NetInput, fuse: &FusionConfig) -> Result<f64> {
    let trace = forward_trace(w, input, fuse)?;
    let mut m = trace.relu_margin();
    if let EncoderLayout::Dual {
        fusion: FusionKind::Energy,
        ..
    } = w.config.layout
    {
        for level in 0..trace.features()[0].len() {
            let f = &trace.features();
            m = m.min(selection_margin(&f[1][level], &f[0][level], fuse)?);
        }
    }
    Ok(m)
}

/// Smallest `|prediction - gt|` over valid pixels (the L1 kink).
fn error_margin(
    w: &WeightBundle,
    input: &NetInput,
    base: &DepthMap,
    gt: &DepthMap,
    fuse: &FusionConfig,
) -> Result<f64> {
    let head = forward_trace(w, input, fuse)?.head_out;
    let pred = raw_prediction(&head, base, &w.config);
    Ok(pred
        .iter()
        .zip(gt.values())
        .filter(|(_, &g)| g != 0.0)
        .fold(f64::INFINITY, |m, (p, g)| m.min((p - g).abs())))
}

struct Instance {
    coarse: DepthMap,
    gt: DepthMap,
    weights: WeightBundle,
    input: NetInput,
}

fn find_instance(layout: EncoderLayout, seed: u64, fuse: &FusionConfig) -> Result<(u64, Instance)> {
    for attempt in 0..MAX_ATTEMPTS {
        let s = seed.wrapping_add(attempt);
        let (image, gt) = synth_scene(s, SIDE, SIDE)?;
        let coarse = nearest_neighbor_fill(&sample_sparse(&gt, 12, s))?;
        let weights = random_bundle(&tiny_network(layout, s))?;
        let input = NetInput::new(&image, &coarse, &weights.config)?;
        if network_margin(&weights, &input, fuse)? >= MARGIN
            && error_margin(&weights, &input, &coarse, &gt, fuse)? >= MARGIN
        {
            return Ok((
                s,
                Instance {
                    coarse,
                    gt,
                    weights,
                    input,
                },
            ));
        }
    }
    Err(Error::Precondition(format!(
        "no network instance within {MAX_ATTEMPTS} attempts cleared the kink margin"
    )))
}

/// Scalar objective of the network's head output.
#[derive(Clone, Copy, Debug)]
enum Objective {
    Loss(LossConfig),
    /// `mean(d_r²)` with `d_r` in meters.
    ResidualEnergy,
}

impl Objective {
    /// `f(+h) - f(-h)` from the head outputs at both points.
    fn difference(&self, inst: &Instance, plus: &[f64], minus: &[f64]) -> Result<f64> {
        let cfg = &inst.weights.config;
        let s = cfg.depth_scale;
        let pred = |h: f64, base: f64| if cfg.residual { base + s * h } else { s * h };
        match self {
            Objective::ResidualEnergy => {
                let n = plus.len() as f64;
                Ok(plus
                    .iter()
                    .zip(minus)
                    .map(|(p, m)| s * s * (p - m) * (p + m))
                    .sum::<f64>()
                    / n)
            }
            Objective::Loss(loss) => {
                let nu = inst.gt.valid_count() as f64;
                let mut sum = 0.0;
                for (i, (&g, &b)) in inst
                    .gt
                    .values()
                    .iter()
                    .zip(inst.coarse.values())
                    .enumerate()
                {
                    if g == 0.0 {
                        continue;
                    }
                    let dp = s * (plus[i] - minus[i]);
                    let (ep, em) = (pred(plus[i], b) - g, pred(minus[i], b) - g);
                    sum += match loss {
                        LossConfig::L2 => dp * (ep + em),
                        LossConfig::L1 => {
                            if ep.signum() != em.signum() {
                                return Err(Error::Precondition(format!(
                                    "error at pixel {i} changes sign under perturbation"
                                )));
                            }
                            ep.signum() * dp
                        }
                    };
                }
                Ok(sum / nu)
            }
        }
    }
}

fn check_params(
    inst: &Instance,
    analytic: &WeightBundle,
    fuse: &FusionConfig,
    objective: Objective,
) -> Result<Tracker> {
    let base = inst.weights.flatten();
    let grads = analytic.flatten();
    let baseline = forward_trace(&inst.weights, &inst.input, fuse)?.activation_pattern();
    let mut w = inst.weights.clone();
    let mut t = Tracker::new();
    'params: for i in 0..base.len() {
        for step in [STEP, STEP / 10.0] {
            let fd = central_at(
                step,
                |d| {
                    let mut p = base.clone();
                    p[i] += d;
                    w.load_flat(&p)?;
                    let trace = forward_trace(&w, &inst.input, fuse)?;
                    if trace.activation_pattern() != baseline {
                        return Err(Error::Precondition(format!(
                            "parameter {i} crosses a kink under perturbation"
                        )));
                    }
                    Ok(trace.head_out.into_vec())
                },
                |p, m| objective.difference(inst, p, m),
            );
            match fd {
                Ok(fd) => {
                    t.push(grads[i], fd);
                    continue 'params;
                }
                Err(Error::Precondition(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        t.skipped += 1;
    }
    Ok(t)
}

/// Gradient of the masked training loss with respect to every weight.
pub fn check_network_loss(
    layout: EncoderLayout,
    seed: u64,
    fuse: &FusionConfig,
    loss: &LossConfig,
) -> Result<CheckReport> {
    let (s, inst) = find_instance(layout, seed, fuse)?;
    let (_, analytic) = sample_loss_and_grad(
        &inst.weights,
        &inst.input,
        &inst.coarse,
        &inst.gt,
        fuse,
        loss,
    )?;
    let t = check_params(&inst, &analytic, fuse, Objective::Loss(*loss))?;
    Ok(t.report(&format!("network loss p={loss} {}", layout_name(layout)), s))
}

/// Gradient of `mean(d_r²)` with respect to every weight.
pub fn check_residual_energy(
    layout: EncoderLayout,
    seed: u64,
    fuse: &FusionConfig,
) -> Result<CheckReport> {
    let (s, inst) = find_instance(layout, seed, fuse)?;
    let scale = inst.weights.config.depth_scale;
    let trace = forward_trace(&inst.weights, &inst.input, fuse)?;
    let n = trace.head_out.len() as f64;
    let grad_head = trace.head_out.map(|v| 2.0 * scale * scale * v / n);
    let analytic = backward(&inst.weights, &trace, &grad_head, fuse)?;
    let t = check_params(&inst, &analytic, fuse, Objective::ResidualEnergy)?;
    Ok(t.report(&format!("residual energy {}", layout_name(layout)), s))
}

fn layout_name(layout: EncoderLayout) -> String {
    match layout {
        EncoderLayout::Single => "single".into(),
        EncoderLayout::Dual { shuffle, fusion } => {
            format!("dual shuffle={shuffle} fusion={fusion}")
        }
    }
}

/// Every suite with fixed seeds.
pub fn run_all(seed: u64) -> Result<Vec<CheckReport>> {
    let fuse = FusionConfig::default();
    let dce = EncoderLayout::Dual {
        shuffle: true,
        fusion: FusionKind::Energy,
    };
    let mut out = vec![
        check_conv2d(seed, 1, 1)?,
        check_conv2d(seed + 1, 2, 1)?,
        check_conv2d(seed + 2, 1, 0)?,
        check_relu(seed)?,
        check_channel_shuffle(seed, 2)?,
        check_channel_shuffle(seed, 8)?,
        check_energy_fuse(seed, &fuse)?,
        check_energy_fuse(seed, &FusionConfig::new(3, 0.5, 1.5)?)?,
    ];
    for layout in [
        dce,
        EncoderLayout::Dual {
            shuffle: true,
            fusion: FusionKind::Concat,
        },
        EncoderLayout::Dual {
            shuffle: false,
            fusion: FusionKind::Add,
        },
        EncoderLayout::Single,
    ] {
        out.push(check_network_loss(layout, seed, &fuse, &LossConfig::L2)?);
    }
    out.push(check_network_loss(dce, seed, &fuse, &LossConfig::L1)?);
    out.push(check_residual_energy(dce, seed, &fuse)?);
    Ok(out)
}
