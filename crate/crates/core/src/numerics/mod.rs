//! Dense tensor grid, convolution, activation and the Adam update used by
//! the refinement network. Everything runs in `f64`.

mod activation;
mod adam;
mod conv;
mod tensor;

pub use activation::{relu, relu_grad};
pub use adam::{adam_step, AdamState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON};
pub use conv::{conv2d, conv2d_grad, conv_output_len, ConvKernel};
pub(crate) use tensor::ensure_same_dims;
pub use tensor::{
    concat_channels, split_channels, upsample_nearest, upsample_nearest_grad, Tensor3,
};
