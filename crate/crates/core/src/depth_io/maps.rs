use crate::error::{Error, Result};
use crate::numerics::Tensor3;

/// Default upper bound on a valid depth, in meters.
pub const DEFAULT_MAX_RANGE_M: f64 = 100.0;

/// Metric depth grid. Zero marks a pixel without a measurement; every other
/// value is a valid depth in `(0, max_range]` meters.
#[derive(Clone, Debug)]
pub struct DepthMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    max_range: f64,
}

impl PartialEq for DepthMap {
    fn eq(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width && self.values == other.values
    }
}

impl DepthMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        Self::with_max_range(height, width, values, DEFAULT_MAX_RANGE_M)
    }

    pub fn with_max_range(
        height: usize,
        width: usize,
        values: Vec<f64>,
        max_range: f64,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "depth map dims must be positive, got {height}x{width}"
            )));
        }
        if values.len() != height * width {
            return Err(Error::Dimension(format!(
                "depth map {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if !(max_range > 0.0 && max_range.is_finite()) {
            return Err(Error::InvalidValue(format!("max range {max_range}")));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > max_range)
        {
            return Err(Error::InvalidValue(format!(
                "depth {v} at ({}, {}) outside [0, {max_range}]",
                i / width,
                i % width
            )));
        }
        Ok(Self {
            height,
            width,
            values,
            max_range,
        })
    }

    /// All-invalid map.
    pub fn invalid(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width],
            max_range: DEFAULT_MAX_RANGE_M,
        }
    }

    /// Constant map, fully valid when `value > 0`.
    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub(crate) fn from_raw(height: usize, width: usize, values: Vec<f64>, max_range: f64) -> Self {
        debug_assert_eq!(values.len(), height * width);
        Self {
            height,
            width,
            values,
            max_range,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn max_range(&self) -> f64 {
        self.max_range
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        self.get(y, x) != 0.0
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        self.values.iter().map(|&v| v != 0.0).collect()
    }

    /// Number of valid pixels.
    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn is_fully_valid(&self) -> bool {
        self.values.iter().all(|&v| v != 0.0)
    }

    /// Single-channel tensor view of the depth values.
    pub fn to_tensor(&self) -> Tensor3 {
        Tensor3::from_raw(1, self.height, self.width, self.values.clone())
    }
}

/// RGB image with channel values in `[0, 1]`, stored as three planes.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ColorImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != 3 * height * width {
            return Err(Error::Dimension(format!(
                "color image {height}x{width} needs {} values, got {}",
                3 * height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidValue(format!(
                "color value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn black(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; 3 * height * width],
        }
    }

    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), 3 * height * width);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, channel: usize, y: usize, x: usize) -> f64 {
        self.data[(channel * self.height + y) * self.width + x]
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        [self.get(0, y, x), self.get(1, y, x), self.get(2, y, x)]
    }

    pub fn to_tensor(&self) -> Tensor3 {
        Tensor3::from_raw(3, self.height, self.width, self.data.clone())
    }
}
