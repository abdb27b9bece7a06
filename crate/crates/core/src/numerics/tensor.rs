use crate::error::{Error, Result};

/// A `channels × height × width` grid of `f64`, stored channel-major then
/// row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "tensor dims must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "tensor {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "non-finite tensor value {} at flat index {pos}",
                data[pos]
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Builds a tensor without the finiteness scan. Shape is still checked in
    /// debug builds.
    pub(crate) fn from_raw(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::from_raw(
            channels,
            height,
            width,
            vec![0.0; channels * height * width],
        )
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self::from_raw(
            channels,
            height,
            width,
            vec![value; channels * height * width],
        )
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::from_raw(channels, height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_dims(&self, other: &Tensor3) -> bool {
        self.dims() == other.dims()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor3 {
        Self::from_raw(
            self.channels,
            self.height,
            self.width,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn scale(&self, k: f64) -> Tensor3 {
        self.map(|v| v * k)
    }

    pub fn add(&self, other: &Tensor3) -> Result<Tensor3> {
        ensure_same_dims(self, other, "add")?;
        Ok(Self::from_raw(
            self.channels,
            self.height,
            self.width,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        ))
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor3) {
        debug_assert!(self.same_dims(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn ensure_same_dims(a: &Tensor3, b: &Tensor3, what: &str) -> Result<()> {
    if a.same_dims(b) {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )))
    }
}

/// Stacks tensors along the channel axis.
pub fn concat_channels(parts: &[&Tensor3]) -> Result<Tensor3> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
    let (h, w) = (first.height, first.width);
    let mut channels = 0;
    for p in parts {
        if p.height != h || p.width != w {
            return Err(Error::Shape(format!(
                "concat: spatial dims {}x{} vs {}x{}",
                p.height, p.width, h, w
            )));
        }
        channels += p.channels;
    }
    let mut data = Vec::with_capacity(channels * h * w);
    for p in parts {
        data.extend_from_slice(&p.data);
    }
    Ok(Tensor3::from_raw(channels, h, w, data))
}

/// Inverse of [`concat_channels`]: cuts `t` into consecutive channel groups.
pub fn split_channels(t: &Tensor3, sizes: &[usize]) -> Result<Vec<Tensor3>> {
    if sizes.iter().sum::<usize>() != t.channels {
        return Err(Error::Shape(format!(
            "split {:?} does not cover {} channels",
            sizes, t.channels
        )));
    }
    let n = t.plane_len();
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &c in sizes {
        out.push(Tensor3::from_raw(
            c,
            t.height,
            t.width,
            t.data[start * n..(start + c) * n].to_vec(),
        ));
        start += c;
    }
    Ok(out)
}

/// Nearest-neighbour upsampling by an integer factor on both axes.
pub fn upsample_nearest(t: &Tensor3, factor: usize) -> Tensor3 {
    if factor == 1 {
        return t.clone();
    }
    let (c, h, w) = t.dims();
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Tensor3::zeros(c, oh, ow);
    for ch in 0..c {
        let src = t.channel(ch);
        let dst = out.channel_mut(ch);
        for y in 0..oh {
            let srow = &src[(y / factor) * w..(y / factor + 1) * w];
            let drow = &mut dst[y * ow..(y + 1) * ow];
            for (x, d) in drow.iter_mut().enumerate() {
                *d = srow[x / factor];
            }
        }
    }
    out
}

/// Adjoint of [`upsample_nearest`]: sums each `factor × factor` block.
pub fn upsample_nearest_grad(grad_out: &Tensor3, factor: usize) -> Result<Tensor3> {
    if factor == 1 {
        return Ok(grad_out.clone());
    }
    let (c, oh, ow) = grad_out.dims();
    if oh % factor != 0 || ow % factor != 0 {
        return Err(Error::Shape(format!(
            "upsample grad: {oh}x{ow} not divisible by {factor}"
        )));
    }
    let (h, w) = (oh / factor, ow / factor);
    let mut out = Tensor3::zeros(c, h, w);
    for ch in 0..c {
        let src = grad_out.channel(ch);
        let dst = out.channel_mut(ch);
        for y in 0..oh {
            for x in 0..ow {
                dst[(y / factor) * w + x / factor] += src[y * ow + x];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_bad_length_and_nan() {
        assert!(matches!(
            Tensor3::new(1, 2, 2, vec![0.0; 3]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            Tensor3::new(1, 1, 2, vec![0.0, f64::NAN]),
            Err(Error::InvalidValue(_))
        ));
        assert!(Tensor3::new(0, 1, 1, vec![]).is_err());
    }

    #[test]
    fn layout_is_channel_then_row_major() {
        let t = Tensor3::new(2, 2, 3, (0..12).map(f64::from).collect()).unwrap();
        assert_eq!(t.get(1, 0, 0), 6.0);
        assert_eq!(t.get(0, 1, 2), 5.0);
        assert_eq!(t.channel(1), &[6.0, 7.0, 8.0, 9.0, 10.0, 11.0]);
    }

    #[test]
    fn concat_then_split_is_identity() {
        let a = Tensor3::from_fn(2, 3, 4, |c, y, x| (c * 100 + y * 10 + x) as f64);
        let b = Tensor3::from_fn(3, 3, 4, |c, y, x| -((c * 100 + y * 10 + x) as f64));
        let cat = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.channels(), 5);
        let parts = split_channels(&cat, &[2, 3]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn upsample_grad_is_adjoint() {
        let x = Tensor3::from_fn(2, 3, 2, |c, y, xx| (c + 2 * y + 3 * xx) as f64 * 0.5 - 1.0);
        let g = Tensor3::from_fn(2, 6, 4, |c, y, xx| ((c * 7 + y * 3 + xx) % 5) as f64 - 2.0);
        let up = upsample_nearest(&x, 2);
        let lhs: f64 = up
            .as_slice()
            .iter()
            .zip(g.as_slice())
            .map(|(a, b)| a * b)
            .sum();
        let gx = upsample_nearest_grad(&g, 2).unwrap();
        let rhs: f64 = x
            .as_slice()
            .iter()
            .zip(gx.as_slice())
            .map(|(a, b)| a * b)
            .sum();
        assert_eq!(lhs, rhs);
    }
}
