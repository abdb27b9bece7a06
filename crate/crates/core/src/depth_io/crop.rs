use crate::depth_io::{ColorImage, DepthMap};
use crate::error::{Error, Result};

/// A 2-D raster that can be cut to a rectangular window.
pub trait Raster: Sized {
    fn raster_dims(&self) -> (usize, usize);
    /// Copies rows `top..top + height` and columns `left..left + width`.
    fn window(&self, top: usize, left: usize, height: usize, width: usize) -> Self;
}

impl Raster for DepthMap {
    fn raster_dims(&self) -> (usize, usize) {
        self.dims()
    }

    fn window(&self, top: usize, left: usize, height: usize, width: usize) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for y in top..top + height {
            let start = y * self.width() + left;
            values.extend_from_slice(&self.values()[start..start + width]);
        }
        DepthMap::from_raw(height, width, values, self.max_range())
    }
}

impl Raster for ColorImage {
    fn raster_dims(&self) -> (usize, usize) {
        self.dims()
    }

    fn window(&self, top: usize, left: usize, height: usize, width: usize) -> Self {
        let mut data = Vec::with_capacity(3 * height * width);
        for c in 0..3 {
            for y in top..top + height {
                for x in left..left + width {
                    data.push(self.get(c, y, x));
                }
            }
        }
        ColorImage::from_raw(height, width, data)
    }
}

fn check_target(dims: (usize, usize), target_h: usize, target_w: usize) -> Result<()> {
    if target_h == 0 || target_w == 0 || target_h > dims.0 || target_w > dims.1 {
        return Err(Error::Dimension(format!(
            "cannot crop {}x{} to {target_h}x{target_w}",
            dims.0, dims.1
        )));
    }
    Ok(())
}

/// Offsets `(top, left)` used by [`bottom_crop`].
pub fn bottom_crop_offsets(
    dims: (usize, usize),
    target_h: usize,
    target_w: usize,
) -> (usize, usize) {
    (dims.0 - target_h, (dims.1 - target_w) / 2)
}

/// Offsets `(top, left)` used by [`center_crop`]. Odd margins leave the
/// smaller half on the top/left.
pub fn center_crop_offsets(
    dims: (usize, usize),
    target_h: usize,
    target_w: usize,
) -> (usize, usize) {
    ((dims.0 - target_h) / 2, (dims.1 - target_w) / 2)
}

/// Keeps the bottom `target_h` rows and a horizontally centered band of
/// `target_w` columns.
pub fn bottom_crop<R: Raster>(input: &R, target_h: usize, target_w: usize) -> Result<R> {
    let dims = input.raster_dims();
    check_target(dims, target_h, target_w)?;
    let (top, left) = bottom_crop_offsets(dims, target_h, target_w);
    Ok(input.window(top, left, target_h, target_w))
}

pub fn center_crop<R: Raster>(input: &R, target_h: usize, target_w: usize) -> Result<R> {
    let dims = input.raster_dims();
    check_target(dims, target_h, target_w)?;
    let (top, left) = center_crop_offsets(dims, target_h, target_w);
    Ok(input.window(top, left, target_h, target_w))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> DepthMap {
        DepthMap::with_max_range(h, w, (0..h * w).map(|i| 1.0 + i as f64).collect(), 1e9).unwrap()
    }

    #[test]
    fn kitti_bottom_crop_offsets() {
        let m = ramp(375, 1242);
        let c = bottom_crop(&m, 352, 1216).unwrap();
        assert_eq!(bottom_crop_offsets((375, 1242), 352, 1216), (23, 13));
        assert_eq!(c.get(0, 0), m.get(23, 13));
        assert_eq!(c.get(351, 1215), m.get(374, 1228));
    }

    #[test]
    fn nyu_center_crop_offsets() {
        let m = ramp(240, 320);
        let c = center_crop(&m, 228, 304).unwrap();
        assert_eq!(center_crop_offsets((240, 320), 228, 304), (6, 8));
        assert_eq!(c.get(0, 0), m.get(6, 8));
    }

    #[test]
    fn odd_margin_keeps_smaller_half_top_left() {
        assert_eq!(center_crop_offsets((5, 7), 2, 2), (1, 2));
    }

    #[test]
    fn identity_and_single_pixel() {
        let m = ramp(4, 6);
        assert_eq!(bottom_crop(&m, 4, 6).unwrap(), m);
        assert_eq!(center_crop(&m, 4, 6).unwrap(), m);
        let px = bottom_crop(&m, 1, 1).unwrap();
        assert_eq!(px.values(), &[m.get(3, 2)]);
    }

    #[test]
    fn oversized_target_is_dimension_error() {
        let m = ramp(4, 6);
        assert!(matches!(bottom_crop(&m, 5, 6), Err(Error::Dimension(_))));
        assert!(matches!(center_crop(&m, 4, 7), Err(Error::Dimension(_))));
    }

    #[test]
    fn color_crop_matches_pixels() {
        let data: Vec<f64> = (0..3 * 4 * 5).map(|i| i as f64 / 60.0).collect();
        let img = ColorImage::new(4, 5, data).unwrap();
        let c = bottom_crop(&img, 2, 3).unwrap();
        for y in 0..2 {
            for x in 0..3 {
                assert_eq!(c.pixel(y, x), img.pixel(y + 2, x + 1));
            }
        }
    }
}
