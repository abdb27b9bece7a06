//! Cross-branch feature operators: channel shuffle between the depth and
//! color encoders, and regional-energy fusion of the two feature maps.

use crate::error::{Error, Result};
use crate::numerics::{ensure_same_dims, Tensor3};

pub const DEFAULT_WINDOW: usize = 5;
pub const DEFAULT_OMEGA: f64 = 1.0;
pub const DEFAULT_SIGMA: f64 = 2.0;

/// Interleaves the channels of two equally shaped feature maps.
///
/// With `M` channels per input, the first output takes
/// `(d1, c1, d2, c2, …, d_{M/2}, c_{M/2})` and the second takes the
/// remaining halves `(d_{M/2+1}, c_{M/2+1}, …, d_M, c_M)`. Values are
/// copied, never combined.
pub fn channel_shuffle(depth: &Tensor3, color: &Tensor3) -> Result<(Tensor3, Tensor3)> {
    ensure_same_dims(depth, color, "channel_shuffle")?;
    let m = depth.channels();
    if m % 2 != 0 {
        return Err(Error::Shape(format!(
            "channel_shuffle needs an even channel count, got {m}"
        )));
    }
    let (h, w) = (depth.height(), depth.width());
    let mut out_d = Tensor3::zeros(m, h, w);
    let mut out_c = Tensor3::zeros(m, h, w);
    let half = m / 2;
    for j in 0..half {
        out_d.channel_mut(2 * j).copy_from_slice(depth.channel(j));
        out_d
            .channel_mut(2 * j + 1)
            .copy_from_slice(color.channel(j));
        out_c
            .channel_mut(2 * j)
            .copy_from_slice(depth.channel(half + j));
        out_c
            .channel_mut(2 * j + 1)
            .copy_from_slice(color.channel(half + j));
    }
    Ok((out_d, out_c))
}

/// Routes gradients of the shuffled outputs back to the input channels they
/// were copied from. This is also the inverse of [`channel_shuffle`].
pub fn channel_shuffle_grad(grad_d: &Tensor3, grad_c: &Tensor3) -> Result<(Tensor3, Tensor3)> {
    ensure_same_dims(grad_d, grad_c, "channel_shuffle_grad")?;
    let m = grad_d.channels();
    if m % 2 != 0 {
        return Err(Error::Shape(format!(
            "channel_shuffle_grad needs an even channel count, got {m}"
        )));
    }
    let (h, w) = (grad_d.height(), grad_d.width());
    let mut gd = Tensor3::zeros(m, h, w);
    let mut gc = Tensor3::zeros(m, h, w);
    let half = m / 2;
    for j in 0..half {
        gd.channel_mut(j).copy_from_slice(grad_d.channel(2 * j));
        gc.channel_mut(j).copy_from_slice(grad_d.channel(2 * j + 1));
        gd.channel_mut(half + j)
            .copy_from_slice(grad_c.channel(2 * j));
        gc.channel_mut(half + j)
            .copy_from_slice(grad_c.channel(2 * j + 1));
    }
    Ok((gd, gc))
}

/// Window, weight and output scale of the energy fusion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionConfig {
    window: usize,
    omega: f64,
    sigma: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            omega: DEFAULT_OMEGA,
            sigma: DEFAULT_SIGMA,
        }
    }
}

impl FusionConfig {
    pub fn new(window: usize, omega: f64, sigma: f64) -> Result<Self> {
        if window == 0 || window % 2 == 0 {
            return Err(Error::Config(format!(
                "fusion window must be odd and positive, got {window}"
            )));
        }
        if !(omega > 0.0 && omega.is_finite()) || !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!(
                "fusion omega and sigma must be positive, got {omega} and {sigma}"
            )));
        }
        Ok(Self {
            window,
            omega,
            sigma,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Half-width `⌊L/2⌋` of the window along each axis.
    pub fn half_width(&self) -> usize {
        self.window / 2
    }
}

/// Per-channel regional energy grid.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyMap(pub Tensor3);

impl EnergyMap {
    pub fn as_tensor(&self) -> &Tensor3 {
        &self.0
    }
}

/// Which input an energy-fused element was taken from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Color,
    Depth,
}

/// Per-element record of the fusion choice, same layout as the features.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionMask {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub labels: Vec<Source>,
}

impl SelectionMask {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn uniform(channels: usize, height: usize, width: usize, source: Source) -> Self {
        Self {
            channels,
            height,
            width,
            labels: vec![source; channels * height * width],
        }
    }

    pub fn count(&self, source: Source) -> usize {
        self.labels.iter().filter(|&&s| s == source).count()
    }
}

/// Windowed sum of `ω·f²` over an `L × L` neighbourhood centred on each
/// element. Positions outside the map contribute nothing.
///
/// Terms are summed row offset first, then column offset, both ascending
/// from `-⌊L/2⌋`.
pub fn regional_energy(f: &Tensor3, cfg: &FusionConfig) -> EnergyMap {
    let (c, h, w) = f.dims();
    let r = cfg.half_width();
    let omega = cfg.omega;
    let mut out = Tensor3::zeros(c, h, w);
    for ch in 0..c {
        let src = f.channel(ch);
        let dst = out.channel_mut(ch);
        for y in 0..h {
            let y0 = y.saturating_sub(r);
            let y1 = (y + r).min(h - 1);
            for x in 0..w {
                let x0 = x.saturating_sub(r);
                let x1 = (x + r).min(w - 1);
                let mut e = 0.0;
                for yy in y0..=y1 {
                    for &v in &src[yy * w + x0..=yy * w + x1] {
                        e += omega * (v * v);
                    }
                }
                dst[y * w + x] = e;
            }
        }
    }
    EnergyMap(out)
}

/// Selects, per element, the input with the larger regional energy and
/// scales it by σ. Ties go to the color input.
pub fn energy_fuse(
    color: &Tensor3,
    depth: &Tensor3,
    cfg: &FusionConfig,
) -> Result<(Tensor3, SelectionMask)> {
    ensure_same_dims(color, depth, "energy_fuse")?;
    let e1 = regional_energy(color, cfg);
    let e2 = regional_energy(depth, cfg);
    let (c, h, w) = color.dims();
    let mut out = Vec::with_capacity(c * h * w);
    let mut labels = Vec::with_capacity(c * h * w);
    for i in 0..c * h * w {
        if e1.0.as_slice()[i] >= e2.0.as_slice()[i] {
            out.push(cfg.sigma * color.as_slice()[i]);
            labels.push(Source::Color);
        } else {
            out.push(cfg.sigma * depth.as_slice()[i]);
            labels.push(Source::Depth);
        }
    }
    Ok((
        Tensor3::from_raw(c, h, w, out),
        SelectionMask {
            channels: c,
            height: h,
            width: w,
            labels,
        },
    ))
}

/// Gradient of [`energy_fuse`] with the selection held fixed: the chosen
/// input receives `σ·grad_out`, the other receives zero.
pub fn energy_fuse_grad(
    grad_out: &Tensor3,
    mask: &SelectionMask,
    cfg: &FusionConfig,
) -> Result<(Tensor3, Tensor3)> {
    if grad_out.dims() != mask.dims() {
        return Err(Error::Shape(format!(
            "energy_fuse_grad: grad {:?} vs mask {:?}",
            grad_out.dims(),
            mask.dims()
        )));
    }
    let (c, h, w) = grad_out.dims();
    let mut g1 = Tensor3::zeros(c, h, w);
    let mut g2 = Tensor3::zeros(c, h, w);
    for (i, (&g, &s)) in grad_out.as_slice().iter().zip(&mask.labels).enumerate() {
        match s {
            Source::Color => g1.as_mut_slice()[i] = cfg.sigma * g,
            Source::Depth => g2.as_mut_slice()[i] = cfg.sigma * g,
        }
    }
    Ok((g1, g2))
}

/// Smallest `|E₁ − E₂|` over all elements; gradient checks stay away from
/// selection flips by requiring this to exceed a margin.
pub fn selection_margin(color: &Tensor3, depth: &Tensor3, cfg: &FusionConfig) -> Result<f64> {
    ensure_same_dims(color, depth, "selection_margin")?;
    let e1 = regional_energy(color, cfg);
    let e2 = regional_energy(depth, cfg);
    Ok(e1
        .0
        .as_slice()
        .iter()
        .zip(e2.0.as_slice())
        .fold(f64::INFINITY, |m, (a, b)| m.min((a - b).abs())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labeled(values: &[f64], h: usize, w: usize) -> Tensor3 {
        Tensor3::from_fn(values.len(), h, w, |c, _, _| values[c])
    }

    fn channel_values(t: &Tensor3) -> Vec<f64> {
        (0..t.channels()).map(|c| t.get(c, 0, 0)).collect()
    }

    #[test]
    fn two_channel_shuffle() {
        let (d, c) =
            channel_shuffle(&labeled(&[1.0, 2.0], 2, 2), &labeled(&[3.0, 4.0], 2, 2)).unwrap();
        assert_eq!(channel_values(&d), vec![1.0, 3.0]);
        assert_eq!(channel_values(&c), vec![2.0, 4.0]);
    }

    #[test]
    fn four_channel_shuffle() {
        let d = labeled(&[11.0, 12.0, 13.0, 14.0], 1, 3);
        let c = labeled(&[21.0, 22.0, 23.0, 24.0], 1, 3);
        let (sd, sc) = channel_shuffle(&d, &c).unwrap();
        assert_eq!(channel_values(&sd), vec![11.0, 21.0, 12.0, 22.0]);
        assert_eq!(channel_values(&sc), vec![13.0, 23.0, 14.0, 24.0]);
        let (bd, bc) = channel_shuffle_grad(&sd, &sc).unwrap();
        assert_eq!((bd, bc), (d, c));
    }

    #[test]
    fn shuffle_rejects_odd_or_mismatched() {
        let a = Tensor3::zeros(3, 2, 2);
        assert!(matches!(channel_shuffle(&a, &a), Err(Error::Shape(_))));
        let b = Tensor3::zeros(2, 2, 2);
        let c = Tensor3::zeros(2, 2, 3);
        assert!(matches!(channel_shuffle(&b, &c), Err(Error::Shape(_))));
        assert!(matches!(channel_shuffle_grad(&b, &c), Err(Error::Shape(_))));
    }

    #[test]
    fn one_hot_gradient_returns_to_source_channel() {
        for src in 0..8 {
            let mut d = Tensor3::zeros(4, 2, 2);
            let c = Tensor3::zeros(4, 2, 2);
            if src < 4 {
                d.channel_mut(src).fill(1.0);
            }
            let mut c2 = c.clone();
            if src >= 4 {
                c2.channel_mut(src - 4).fill(1.0);
            }
            let (sd, sc) = channel_shuffle(&d, &c2).unwrap();
            let (gd, gc) = channel_shuffle_grad(&sd, &sc).unwrap();
            assert_eq!(gd, d);
            assert_eq!(gc, c2);
        }
    }

    #[test]
    fn config_validation() {
        assert!(FusionConfig::new(4, 1.0, 2.0).is_err());
        assert!(FusionConfig::new(0, 1.0, 2.0).is_err());
        assert!(FusionConfig::new(3, 0.0, 2.0).is_err());
        assert!(FusionConfig::new(3, 1.0, -1.0).is_err());
        let d = FusionConfig::default();
        assert_eq!(
            (d.window(), d.omega(), d.sigma(), d.half_width()),
            (5, 1.0, 2.0, 2)
        );
    }

    #[test]
    fn unit_window_energy_is_pointwise() {
        let f = Tensor3::from_fn(2, 3, 4, |c, y, x| {
            c as f64 - y as f64 * 0.5 + x as f64 * 0.25
        });
        let cfg = FusionConfig::new(1, 0.7, 1.0).unwrap();
        let e = regional_energy(&f, &cfg);
        for (ev, fv) in e.0.as_slice().iter().zip(f.as_slice()) {
            assert_eq!(*ev, 0.7 * (fv * fv));
        }
        assert!(regional_energy(&Tensor3::zeros(1, 3, 3), &cfg)
            .0
            .as_slice()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn single_spike_energy_footprint() {
        let mut f = Tensor3::zeros(1, 5, 5);
        f.set(0, 2, 2, 3.0);
        let e = regional_energy(&f, &FusionConfig::new(3, 1.0, 1.0).unwrap());
        for y in 0..5usize {
            for x in 0..5usize {
                let inside = y.abs_diff(2) <= 1 && x.abs_diff(2) <= 1;
                assert_eq!(e.0.get(0, y, x), if inside { 9.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn fuse_zero_depth_and_ties_pick_color() {
        let cfg = FusionConfig::default();
        let f1 = Tensor3::from_fn(2, 4, 4, |c, y, x| (c + y) as f64 - x as f64);
        let (o, m) = energy_fuse(&f1, &Tensor3::zeros(2, 4, 4), &cfg).unwrap();
        assert_eq!(o, f1.scale(2.0));
        assert_eq!(m.count(Source::Color), 32);
        let z = Tensor3::zeros(1, 3, 3);
        let (o, m) = energy_fuse(&z, &z, &cfg).unwrap();
        assert!(o.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(m.count(Source::Color), 9);
    }

    #[test]
    fn three_by_three_hand_case() {
        let f1 = Tensor3::filled(1, 3, 3, 1.0);
        let mut f2 = Tensor3::zeros(1, 3, 3);
        f2.set(0, 1, 1, 5.0);
        let cfg = FusionConfig::new(3, 1.0, 2.0).unwrap();
        let (o, m) = energy_fuse(&f1, &f2, &cfg).unwrap();
        // E1: 9 at center, 6 on edges, 4 at corners; E2 = 25 everywhere
        assert!(m.labels.iter().all(|&s| s == Source::Depth));
        assert_eq!(o.get(0, 1, 1), 10.0);
        assert_eq!(o.get(0, 0, 0), 0.0);
        assert_eq!(o.as_slice().iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn grad_routes_by_mask() {
        let cfg = FusionConfig::default();
        let g = Tensor3::from_fn(1, 2, 2, |_, y, x| (y * 2 + x) as f64 + 1.0);
        let mask = SelectionMask::uniform(1, 2, 2, Source::Color);
        let (g1, g2) = energy_fuse_grad(&g, &mask, &cfg).unwrap();
        assert_eq!(g1, g.scale(2.0));
        assert!(g2.as_slice().iter().all(|&v| v == 0.0));
        let (g1, g2) = energy_fuse_grad(&Tensor3::zeros(1, 2, 2), &mask, &cfg).unwrap();
        assert!(g1.as_slice().iter().chain(g2.as_slice()).all(|&v| v == 0.0));
        let bad = Tensor3::zeros(2, 2, 2);
        assert!(matches!(
            energy_fuse_grad(&bad, &mask, &cfg),
            Err(Error::Shape(_))
        ));
    }
}
