use crate::error::{Error, Result};
use crate::numerics::Tensor3;

/// Weights and bias of a 2-D convolution, laid out as
/// `[out_channels][in_channels][kernel_h][kernel_w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvKernel {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 || kernel_h == 0 || kernel_w == 0 {
            return Err(Error::Config("kernel dims must be positive".into()));
        }
        let n = out_channels * in_channels * kernel_h * kernel_w;
        if weights.len() != n || bias.len() != out_channels {
            return Err(Error::Config(format!(
                "kernel {out_channels}x{in_channels}x{kernel_h}x{kernel_w} needs {n} weights and \
                 {out_channels} biases, got {} and {}",
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("non-finite kernel value".into()));
        }
        Ok(Self {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            weights,
            bias,
        })
    }

    pub fn zeros(
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
    ) -> Self {
        Self {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            weights: vec![0.0; out_channels * in_channels * kernel_h * kernel_w],
            bias: vec![0.0; out_channels],
        }
    }

    /// `channels → channels` 1×1 kernel that copies its input.
    pub fn identity(channels: usize) -> Self {
        let mut k = Self::zeros(channels, channels, 1, 1);
        for c in 0..channels {
            k.weights[c * channels + c] = 1.0;
        }
        k
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(
            self.out_channels,
            self.in_channels,
            self.kernel_h,
            self.kernel_w,
        )
    }

    pub fn same_shape(&self, other: &ConvKernel) -> bool {
        self.shape() == other.shape()
    }

    pub fn shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel_h,
            self.kernel_w,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    #[inline]
    pub fn weight(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((oc * self.in_channels + ic) * self.kernel_h + ky) * self.kernel_w + kx]
    }

    pub(crate) fn add_assign(&mut self, other: &ConvKernel) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

/// Output length along one axis, or `None` when the window does not fit.
pub fn conv_output_len(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    if stride == 0 || input + 2 * padding < kernel {
        return None;
    }
    Some((input + 2 * padding - kernel) / stride + 1)
}

fn output_dims(
    input: &Tensor3,
    kernel: &ConvKernel,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize)> {
    if input.channels() != kernel.in_channels {
        return Err(Error::Config(format!(
            "conv2d: input has {} channels, kernel expects {}",
            input.channels(),
            kernel.in_channels
        )));
    }
    match (
        conv_output_len(input.height(), kernel.kernel_h, stride, padding),
        conv_output_len(input.width(), kernel.kernel_w, stride, padding),
    ) {
        (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok((oh, ow)),
        _ => Err(Error::Config(format!(
            "conv2d: degenerate output for {}x{} input, {}x{} kernel, stride {stride}, padding {padding}",
            input.height(),
            input.width(),
            kernel.kernel_h,
            kernel.kernel_w
        ))),
    }
}

/// Range of output positions `o` whose input coordinate `o * stride + k - pad`
/// lies inside `[0, len)`.
#[inline]
fn valid_range(
    out_len: usize,
    in_len: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (usize, usize) {
    // first o with o*stride + k >= pad
    let lo = if k >= pad {
        0
    } else {
        (pad - k).div_ceil(stride)
    };
    // last o with o*stride + k - pad <= in_len - 1
    let limit = in_len + pad;
    let hi = if k >= limit {
        0
    } else {
        ((limit - 1 - k) / stride + 1).min(out_len)
    };
    (lo, hi.max(lo))
}

/// Direct 2-D cross-correlation with zero padding, plus bias.
///
/// Each output element accumulates its terms in input-channel, then kernel
/// row, then kernel column order, starting from zero; the bias is added last.
/// That order is independent of how the loops below are nested, so any
/// direct-sum implementation using the same order reproduces the result
/// bit for bit.
pub fn conv2d(
    input: &Tensor3,
    kernel: &ConvKernel,
    stride: usize,
    padding: usize,
) -> Result<Tensor3> {
    let (oh, ow) = output_dims(input, kernel, stride, padding)?;
    let (ic_n, ih, iw) = input.dims();
    let mut out = Tensor3::zeros(kernel.out_channels, oh, ow);
    for oc in 0..kernel.out_channels {
        let dst = out.channel_mut(oc);
        for ic in 0..ic_n {
            let src = input.channel(ic);
            for ky in 0..kernel.kernel_h {
                let (oy0, oy1) = valid_range(oh, ih, ky, stride, padding);
                for kx in 0..kernel.kernel_w {
                    let w = kernel.weight(oc, ic, ky, kx);
                    let (ox0, ox1) = valid_range(ow, iw, kx, stride, padding);
                    if ox0 >= ox1 {
                        continue;
                    }
                    for oy in oy0..oy1 {
                        let iy = oy * stride + ky - padding;
                        let ix0 = ox0 * stride + kx - padding;
                        let drow = &mut dst[oy * ow + ox0..oy * ow + ox1];
                        let srow = &src[iy * iw + ix0..];
                        if stride == 1 {
                            for (d, s) in drow.iter_mut().zip(srow) {
                                *d += w * s;
                            }
                        } else {
                            for (d, s) in drow.iter_mut().zip(srow.iter().step_by(stride)) {
                                *d += w * s;
                            }
                        }
                    }
                }
            }
        }
        let b = kernel.bias[oc];
        for d in dst.iter_mut() {
            *d += b;
        }
    }
    Ok(out)
}

/// Gradients of `Σ grad_out ⊙ conv2d(input, kernel)` with respect to the input
/// and to the kernel's weights and bias.
pub fn conv2d_grad(
    input: &Tensor3,
    kernel: &ConvKernel,
    grad_out: &Tensor3,
    stride: usize,
    padding: usize,
) -> Result<(Tensor3, ConvKernel)> {
    let (oh, ow) = output_dims(input, kernel, stride, padding)?;
    if grad_out.dims() != (kernel.out_channels, oh, ow) {
        return Err(Error::Shape(format!(
            "conv2d_grad: grad_out is {:?}, forward output is {:?}",
            grad_out.dims(),
            (kernel.out_channels, oh, ow)
        )));
    }
    let (ic_n, ih, iw) = input.dims();
    let mut grad_in = Tensor3::zeros(ic_n, ih, iw);
    let mut grad_k = kernel.zeros_like();
    let khw = kernel.kernel_h * kernel.kernel_w;
    for oc in 0..kernel.out_channels {
        let g = grad_out.channel(oc);
        grad_k.bias[oc] = g.iter().sum();
        for ic in 0..ic_n {
            let src = input.channel(ic);
            let wbase = (oc * ic_n + ic) * khw;
            for ky in 0..kernel.kernel_h {
                let (oy0, oy1) = valid_range(oh, ih, ky, stride, padding);
                for kx in 0..kernel.kernel_w {
                    let widx = wbase + ky * kernel.kernel_w + kx;
                    let w = kernel.weights[widx];
                    let (ox0, ox1) = valid_range(ow, iw, kx, stride, padding);
                    if ox0 >= ox1 {
                        continue;
                    }
                    let mut gw = 0.0;
                    let gi = grad_in.channel_mut(ic);
                    for oy in oy0..oy1 {
                        let iy = oy * stride + ky - padding;
                        let ix0 = ox0 * stride + kx - padding;
                        let grow = &g[oy * ow + ox0..oy * ow + ox1];
                        let off = iy * iw + ix0;
                        if stride == 1 {
                            let srow = &src[off..off + grow.len()];
                            for (gv, s) in grow.iter().zip(srow) {
                                gw += gv * s;
                            }
                            let irow = &mut gi[off..off + grow.len()];
                            for (d, gv) in irow.iter_mut().zip(grow) {
                                *d += w * gv;
                            }
                        } else {
                            for (gv, s) in grow.iter().zip(src[off..].iter().step_by(stride)) {
                                gw += gv * s;
                            }
                            for (d, gv) in gi[off..].iter_mut().step_by(stride).zip(grow) {
                                *d += w * gv;
                            }
                        }
                    }
                    grad_k.weights[widx] = gw;
                }
            }
        }
    }
    Ok((grad_in, grad_k))
}
