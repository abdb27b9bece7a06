//! Stage two: the coarse-to-fine residual network.

pub mod config;
pub mod network;
pub mod train;
pub mod weights;

pub use config::{parse_kv, BlockSpec, EncoderLayout, FusionKind, RefineNetConfig};
pub use network::{
    backward, encode_branches, forward, forward_trace, fuse_and_decode, ForwardTrace, NetInput,
    RefineOutput, MIN_OUTPUT_DEPTH_M,
};
pub use train::{
    sample_loss, sample_loss_and_grad, train_from, train_toy, TrainConfig, TrainSample,
};
pub use weights::{
    decode_weights, encode_weights, expected_shapes, init_weights, load_weights, save_weights,
    Branch, WeightBundle, WEIGHT_FORMAT_VERSION, WEIGHT_MAGIC,
};
