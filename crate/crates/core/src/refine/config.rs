use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How the two encoder branches are merged at each scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionKind {
    /// Regional-energy selection.
    Energy,
    /// Channel concatenation followed by a learned 1×1 projection.
    Concat,
    /// Elementwise sum.
    Add,
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionKind::Energy => "energy",
            FusionKind::Concat => "concat",
            FusionKind::Add => "add",
        })
    }
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "energy" => Ok(FusionKind::Energy),
            "concat" => Ok(FusionKind::Concat),
            "add" => Ok(FusionKind::Add),
            _ => Err(Error::Config(format!("unknown fusion kind {s:?}"))),
        }
    }
}

/// Encoder topology.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderLayout {
    /// One encoder over the stacked color and depth channels.
    Single,
    /// Separate depth and color encoders, optionally exchanging channels
    /// before every block after the first, merged per scale by `fusion`.
    Dual { shuffle: bool, fusion: FusionKind },
}

impl EncoderLayout {
    pub fn branch_count(&self) -> usize {
        match self {
            EncoderLayout::Single => 1,
            EncoderLayout::Dual { .. } => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl BlockSpec {
    pub fn new(channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            channels,
            kernel,
            stride,
        }
    }
}

/// Architecture of the coarse-to-fine network.
///
/// Depth enters the encoders divided by `depth_scale`, and the head output is
/// multiplied by it, so the network works on O(1) values while residuals are
/// reported in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct RefineNetConfig {
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub blocks: Vec<BlockSpec>,
    /// Output width of each decoder stage; entry `i - 1` belongs to the stage
    /// that upsamples from block scale `i`.
    pub decoder_channels: Vec<usize>,
    pub head_kernel: usize,
    pub layout: EncoderLayout,
    /// Add the head output to the coarse input (`true`) or predict depth
    /// directly (`false`).
    pub residual: bool,
    /// Accept a partially valid depth input (sparse-input ablation).
    pub sparse_depth_input: bool,
    pub depth_scale: f64,
    pub seed: u64,
}

impl Default for RefineNetConfig {
    fn default() -> Self {
        Self {
            stem_channels: 8,
            stem_kernel: 3,
            blocks: vec![
                BlockSpec::new(16, 3, 2),
                BlockSpec::new(32, 3, 2),
                BlockSpec::new(64, 3, 2),
            ],
            decoder_channels: vec![8, 16, 32],
            head_kernel: 3,
            layout: EncoderLayout::Dual {
                shuffle: true,
                fusion: FusionKind::Energy,
            },
            residual: true,
            sparse_depth_input: false,
            depth_scale: 10.0,
            seed: 0,
        }
    }
}

impl RefineNetConfig {
    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Feature channels at scale `level` (0 = stem, `i` = block `i`).
    pub fn level_channels(&self, level: usize) -> usize {
        if level == 0 {
            self.stem_channels
        } else {
            self.blocks[level - 1].channels
        }
    }

    /// Product of all block strides; input sides must be multiples of it.
    pub fn total_stride(&self) -> usize {
        self.blocks.iter().map(|b| b.stride).product()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.blocks.len();
        if n < 2 {
            return Err(Error::Config(format!("need at least 2 blocks, got {n}")));
        }
        if self.decoder_channels.len() != n {
            return Err(Error::Config(format!(
                "{n} blocks need {n} decoder widths, got {}",
                self.decoder_channels.len()
            )));
        }
        if self.stem_channels == 0 || self.stem_channels % 2 != 0 {
            return Err(Error::Config(format!(
                "stem channels must be even and positive, got {}",
                self.stem_channels
            )));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.channels == 0 || b.channels % 2 != 0 {
                return Err(Error::Config(format!(
                    "block {} channels must be even and positive, got {}",
                    i + 1,
                    b.channels
                )));
            }
            if b.kernel % 2 == 0 || b.stride == 0 {
                return Err(Error::Config(format!(
                    "block {} needs an odd kernel and positive stride, got kernel {} stride {}",
                    i + 1,
                    b.kernel,
                    b.stride
                )));
            }
        }
        if self.stem_kernel % 2 == 0 || self.head_kernel % 2 == 0 {
            return Err(Error::Config("stem and head kernels must be odd".into()));
        }
        if self.decoder_channels.contains(&0) {
            return Err(Error::Config("decoder widths must be positive".into()));
        }
        if !(self.depth_scale > 0.0 && self.depth_scale.is_finite()) {
            return Err(Error::Config(format!(
                "depth scale must be positive, got {}",
                self.depth_scale
            )));
        }
        Ok(())
    }

    pub fn check_input_dims(&self, height: usize, width: usize) -> Result<()> {
        let s = self.total_stride();
        if height % s != 0 || width % s != 0 {
            return Err(Error::Shape(format!(
                "input {height}x{width} must be a multiple of the total stride {s}"
            )));
        }
        Ok(())
    }

    /// Plain-text `key=value` form, one entry per line.
    pub fn to_kv(&self) -> String {
        let blocks: Vec<String> = self
            .blocks
            .iter()
            .map(|b| format!("{}:{}:{}", b.channels, b.kernel, b.stride))
            .collect();
        let decoder: Vec<String> = self
            .decoder_channels
            .iter()
            .map(|c| c.to_string())
            .collect();
        let (encoders, shuffle, fusion) = match self.layout {
            EncoderLayout::Single => (1, false, FusionKind::Concat),
            EncoderLayout::Dual { shuffle, fusion } => (2, shuffle, fusion),
        };
        format!(
            "stem_channels={}\nstem_kernel={}\nblocks={}\ndecoder={}\nhead_kernel={}\n\
             encoders={encoders}\nshuffle={shuffle}\nfusion={fusion}\nresidual={}\n\
             sparse_depth_input={}\ndepth_scale={}\nseed={}\n",
            self.stem_channels,
            self.stem_kernel,
            blocks.join(","),
            decoder.join(","),
            self.head_kernel,
            self.residual,
            self.sparse_depth_input,
            self.depth_scale,
            self.seed
        )
    }

    /// Parses the output of [`to_kv`](Self::to_kv). Missing keys keep their
    /// defaults; unknown keys are rejected.
    pub fn from_kv(text: &str) -> Result<Self> {
        let kv = parse_kv(text)?;
        let mut cfg = Self::default();
        let mut encoders = 2;
        let mut shuffle = true;
        let mut fusion = FusionKind::Energy;
        for (k, v) in &kv {
            match k.as_str() {
                "stem_channels" => cfg.stem_channels = parse_num(k, v)?,
                "stem_kernel" => cfg.stem_kernel = parse_num(k, v)?,
                "head_kernel" => cfg.head_kernel = parse_num(k, v)?,
                "blocks" => {
                    cfg.blocks = v
                        .split(',')
                        .map(|b| {
                            let parts: Vec<&str> = b.split(':').collect();
                            match parts.as_slice() {
                                [c, kk, s] => Ok(BlockSpec::new(
                                    parse_num(k, c)?,
                                    parse_num(k, kk)?,
                                    parse_num(k, s)?,
                                )),
                                _ => Err(Error::Config(format!(
                                    "block spec {b:?} is not channels:kernel:stride"
                                ))),
                            }
                        })
                        .collect::<Result<_>>()?
                }
                "decoder" => {
                    cfg.decoder_channels = v
                        .split(',')
                        .map(|c| parse_num(k, c))
                        .collect::<Result<_>>()?
                }
                "encoders" => encoders = parse_num(k, v)?,
                "shuffle" => shuffle = parse_num(k, v)?,
                "fusion" => fusion = v.parse()?,
                "residual" => cfg.residual = parse_num(k, v)?,
                "sparse_depth_input" => cfg.sparse_depth_input = parse_num(k, v)?,
                "depth_scale" => cfg.depth_scale = parse_num(k, v)?,
                "seed" => cfg.seed = parse_num(k, v)?,
                _ => return Err(Error::Config(format!("unknown network key {k:?}"))),
            }
        }
        cfg.layout = match encoders {
            1 => EncoderLayout::Single,
            2 => EncoderLayout::Dual { shuffle, fusion },
            n => return Err(Error::Config(format!("encoders must be 1 or 2, got {n}"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1))
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub(crate) fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let cfg = RefineNetConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RefineNetConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        let single = RefineNetConfig {
            layout: EncoderLayout::Single,
            residual: false,
            depth_scale: 12.5,
            seed: 99,
            ..cfg
        };
        assert_eq!(RefineNetConfig::from_kv(&single.to_kv()).unwrap(), single);
    }

    #[test]
    fn rejects_odd_channels_and_short_stacks() {
        let mut cfg = RefineNetConfig::default();
        cfg.blocks[1].channels = 31;
        assert!(cfg.validate().is_err());
        let mut cfg = RefineNetConfig::default();
        cfg.blocks.truncate(1);
        cfg.decoder_channels.truncate(1);
        assert!(cfg.validate().is_err());
        let mut cfg = RefineNetConfig::default();
        cfg.decoder_channels.pop();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn input_dims_must_divide_total_stride() {
        let cfg = RefineNetConfig::default();
        assert!(cfg.check_input_dims(96, 128).is_ok());
        assert!(matches!(
            cfg.check_input_dims(20, 128),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn kv_parser_rejects_garbage() {
        assert!(RefineNetConfig::from_kv("nonsense").is_err());
        assert!(RefineNetConfig::from_kv("colour=blue").is_err());
        assert!(RefineNetConfig::from_kv("encoders=3").is_err());
    }
}
