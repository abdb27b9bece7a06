//! Depth and color data model, PNG codecs, benchmark crops, synthetic
//! scenes and depth visualization.

mod codec;
mod colorize;
mod crop;
mod maps;
mod synth;

pub use codec::{
    decode_color_png, decode_depth_png, encode_color_png, encode_depth_png, quantize_depth,
    read_color_png, read_depth_png, write_color_png, write_depth_png, DEPTH_SCALE, PNG_MAX_DEPTH_M,
};
pub use colorize::{colorize, colorize_signed, ramp_index, ramp_table, RAMP_LEN};
pub use crop::{bottom_crop, bottom_crop_offsets, center_crop, center_crop_offsets, Raster};
pub use maps::{ColorImage, DepthMap, DEFAULT_MAX_RANGE_M};
pub use synth::{synth_scene, SYNTH_MAX_DEPTH_M, SYNTH_MIN_DEPTH_M, SYNTH_MIN_DIM};
