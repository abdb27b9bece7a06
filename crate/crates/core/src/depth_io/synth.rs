//! Deterministic piecewise-planar street-like scenes.
//!
//! A scene is a far background wall, a ground plane below a random horizon,
//! and 3 to 8 tilted rectangles painted far-to-near. Each region has its own
//! base color, so color edges line up with depth discontinuities. Randomness
//! comes from `ChaCha8Rng::seed_from_u64(seed)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::depth_io::{ColorImage, DepthMap};
use crate::error::{Error, Result};

pub const SYNTH_MIN_DEPTH_M: f64 = 1.0;
pub const SYNTH_MAX_DEPTH_M: f64 = 80.0;
pub const SYNTH_MIN_DIM: usize = 16;

struct Plane {
    top: usize,
    left: usize,
    bottom: usize,
    right: usize,
    base: f64,
    grad_x: f64,
    grad_y: f64,
    color: [f64; 3],
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [
        rng.random_range(0.1..0.9),
        rng.random_range(0.1..0.9),
        rng.random_range(0.1..0.9),
    ]
}

fn clamp_depth(d: f64) -> f64 {
    d.clamp(SYNTH_MIN_DEPTH_M, SYNTH_MAX_DEPTH_M)
}

pub fn synth_scene(seed: u64, height: usize, width: usize) -> Result<(ColorImage, DepthMap)> {
    if height < SYNTH_MIN_DIM || width < SYNTH_MIN_DIM {
        return Err(Error::Dimension(format!(
            "synthetic scenes need at least {SYNTH_MIN_DIM}x{SYNTH_MIN_DIM}, got {height}x{width}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (height as f64, width as f64);

    let wall_base = rng.random_range(55.0..70.0);
    let wall_tilt = rng.random_range(-8.0..8.0);
    let wall_color = random_color(&mut rng);
    let horizon = rng.random_range(0.3..0.5) * hf;
    let near_ground = rng.random_range(2.0..5.0);
    let ground_color = random_color(&mut rng);
    // ground depth is inversely proportional to the row's distance below the horizon
    let ground_k = near_ground * (hf - 1.0 - horizon);

    let mut depth = vec![0.0; height * width];
    let mut color = vec![0.0; 3 * height * width];
    let plane_len = height * width;
    for y in 0..height {
        for x in 0..width {
            let wall = clamp_depth(wall_base + wall_tilt * (x as f64 / wf));
            let below = y as f64 - horizon;
            let ground = if below > 0.0 {
                ground_k / below
            } else {
                f64::INFINITY
            };
            let i = y * width + x;
            if ground < wall {
                let d = clamp_depth(ground);
                depth[i] = d;
                let shade = 1.0 - 0.5 * (d / SYNTH_MAX_DEPTH_M);
                for c in 0..3 {
                    color[c * plane_len + i] = ground_color[c] * shade;
                }
            } else {
                depth[i] = wall;
                let shade = 0.8 + 0.2 * (y as f64 / hf);
                for c in 0..3 {
                    color[c * plane_len + i] = wall_color[c] * shade;
                }
            }
        }
    }

    let count = rng.random_range(3..=8);
    let mut planes: Vec<Plane> = (0..count)
        .map(|_| {
            let rh = rng.random_range(hf / 6.0..hf / 2.0).max(2.0) as usize;
            let rw = rng.random_range(wf / 8.0..wf / 3.0).max(2.0) as usize;
            let bottom = rng.random_range(horizon as usize + 1..=height);
            let top = bottom.saturating_sub(rh);
            let left = rng.random_range(0..width - rw.min(width - 1));
            let right = (left + rw).min(width);
            let base = rng.random_range(3.0..45.0);
            let grad_x = rng.random_range(-0.3..0.3) * base;
            let grad_y = rng.random_range(-0.2..0.2) * base;
            Plane {
                top,
                left,
                bottom,
                right,
                base,
                grad_x,
                grad_y,
                color: random_color(&mut rng),
            }
        })
        .collect();
    // painter's order: far planes first
    planes.sort_by(|a, b| b.base.total_cmp(&a.base));
    for p in &planes {
        let ph = (p.bottom - p.top).max(1) as f64;
        let pw = (p.right - p.left).max(1) as f64;
        for y in p.top..p.bottom {
            for x in p.left..p.right {
                let u = (x - p.left) as f64 / pw - 0.5;
                let v = (y - p.top) as f64 / ph - 0.5;
                let d = clamp_depth(p.base + p.grad_x * u + p.grad_y * v);
                let i = y * width + x;
                depth[i] = d;
                let shade = 0.85 + 0.3 * u;
                for c in 0..3 {
                    color[c * plane_len + i] = (p.color[c] * shade).clamp(0.0, 1.0);
                }
            }
        }
    }

    Ok((
        ColorImage::from_raw(height, width, color),
        DepthMap::from_raw(height, width, depth, crate::depth_io::DEFAULT_MAX_RANGE_M),
    ))
}
