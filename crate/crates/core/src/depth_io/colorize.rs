use crate::depth_io::{ColorImage, DepthMap};
use crate::error::{Error, Result};
use crate::numerics::Tensor3;

pub const RAMP_LEN: usize = 256;

/// Control points of the depth ramp: dark blue, blue, cyan, yellow, red,
/// dark red. Entry 0 is the near end.
const RAMP_STOPS: [[f64; 3]; 6] = [
    [0.0, 0.0, 0.5],
    [0.0, 0.0, 1.0],
    [0.0, 1.0, 1.0],
    [1.0, 1.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.5, 0.0, 0.0],
];

/// Piecewise-linear interpolation of [`RAMP_STOPS`] at `RAMP_LEN` points.
pub fn ramp_table() -> Vec<[f64; 3]> {
    let segments = (RAMP_STOPS.len() - 1) as f64;
    (0..RAMP_LEN)
        .map(|i| {
            let t = i as f64 / (RAMP_LEN - 1) as f64 * segments;
            let k = (t.floor() as usize).min(RAMP_STOPS.len() - 2);
            let f = t - k as f64;
            let (a, b) = (RAMP_STOPS[k], RAMP_STOPS[k + 1]);
            [
                a[0] + (b[0] - a[0]) * f,
                a[1] + (b[1] - a[1]) * f,
                a[2] + (b[2] - a[2]) * f,
            ]
        })
        .collect()
}

/// Ramp index for a depth: `min_m` maps to 0, `max_m` to `RAMP_LEN - 1`,
/// depths outside the range saturate.
pub fn ramp_index(depth: f64, min_m: f64, max_m: f64) -> usize {
    let t = ((depth - min_m) / (max_m - min_m)).clamp(0.0, 1.0);
    (t * (RAMP_LEN - 1) as f64).round() as usize
}

/// Maps valid depths onto the ramp; invalid pixels are black.
pub fn colorize(map: &DepthMap, min_m: f64, max_m: f64) -> Result<ColorImage> {
    if !(min_m < max_m) {
        return Err(Error::Config(format!(
            "colorize range must satisfy min < max, got [{min_m}, {max_m}]"
        )));
    }
    let table = ramp_table();
    let (h, w) = map.dims();
    let mut data = vec![0.0; 3 * h * w];
    for (i, &d) in map.values().iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let rgb = table[ramp_index(d, min_m, max_m)];
        for c in 0..3 {
            data[c * h * w + i] = rgb[c];
        }
    }
    Ok(ColorImage::from_raw(h, w, data))
}

/// Diverging blue-white-red rendering of a signed single-channel map,
/// normalized by its largest magnitude.
pub fn colorize_signed(field: &Tensor3) -> Result<ColorImage> {
    if field.channels() != 1 {
        return Err(Error::Shape(format!(
            "signed colorize expects 1 channel, got {}",
            field.channels()
        )));
    }
    let (h, w) = (field.height(), field.width());
    let peak = field.max_abs();
    let scale = if peak > 0.0 { peak } else { 1.0 };
    let mut data = vec![0.0; 3 * h * w];
    for (i, &v) in field.as_slice().iter().enumerate() {
        let t = (v / scale).clamp(-1.0, 1.0);
        let rgb = if t >= 0.0 {
            [1.0, 1.0 - t, 1.0 - t]
        } else {
            [1.0 + t, 1.0 + t, 1.0]
        };
        for c in 0..3 {
            data[c * h * w + i] = rgb[c];
        }
    }
    Ok(ColorImage::from_raw(h, w, data))
}
