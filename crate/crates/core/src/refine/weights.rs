use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::ConvKernel;
use crate::refine::config::{EncoderLayout, FusionKind, RefineNetConfig};

pub const WEIGHT_MAGIC: [u8; 4] = *b"C2FW";
pub const WEIGHT_FORMAT_VERSION: u32 = 1;

/// Stem and blocks of one encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub stem: ConvKernel,
    pub blocks: Vec<ConvKernel>,
}

/// Every learnable kernel of the network together with the configuration
/// that shaped it.
///
/// Declaration order (used by the flat parameter vector and the weight
/// file): branches (depth first, then color) each as stem then blocks,
/// fusion projections by scale, decoder stages, head.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightBundle {
    pub config: RefineNetConfig,
    pub branches: Vec<Branch>,
    /// One `2c → c` 1×1 projection per scale for concat fusion, else empty.
    pub fusion: Vec<ConvKernel>,
    pub decoder: Vec<ConvKernel>,
    pub head: ConvKernel,
}

/// Kernel shapes `[out, in, kh, kw]` implied by a configuration, in
/// declaration order.
pub fn expected_shapes(cfg: &RefineNetConfig) -> Vec<[usize; 4]> {
    let n = cfg.num_blocks();
    let mut shapes = Vec::new();
    let branch_inputs: &[usize] = match cfg.layout {
        EncoderLayout::Single => &[4],
        EncoderLayout::Dual { .. } => &[1, 3],
    };
    for &input in branch_inputs {
        shapes.push([cfg.stem_channels, input, cfg.stem_kernel, cfg.stem_kernel]);
        let mut prev = cfg.stem_channels;
        for b in &cfg.blocks {
            shapes.push([b.channels, prev, b.kernel, b.kernel]);
            prev = b.channels;
        }
    }
    if let EncoderLayout::Dual {
        fusion: FusionKind::Concat,
        ..
    } = cfg.layout
    {
        for level in 0..=n {
            let c = cfg.level_channels(level);
            shapes.push([c, 2 * c, 1, 1]);
        }
    }
    for i in 1..=n {
        let input = if i == n {
            cfg.level_channels(n)
        } else {
            cfg.decoder_channels[i] + cfg.level_channels(i)
        };
        shapes.push([cfg.decoder_channels[i - 1], input, 3, 3]);
    }
    shapes.push([
        1,
        cfg.decoder_channels[0] + cfg.level_channels(0),
        cfg.head_kernel,
        cfg.head_kernel,
    ]);
    shapes
}

impl WeightBundle {
    /// Bundle of zero kernels with the shapes implied by `cfg`.
    pub fn zeros(cfg: &RefineNetConfig) -> Result<Self> {
        cfg.validate()?;
        let kernels: Vec<ConvKernel> = expected_shapes(cfg)
            .into_iter()
            .map(|[o, i, kh, kw]| ConvKernel::zeros(o, i, kh, kw))
            .collect();
        Ok(Self::assemble(cfg.clone(), kernels))
    }

    fn assemble(config: RefineNetConfig, kernels: Vec<ConvKernel>) -> Self {
        let n = config.num_blocks();
        let mut it = kernels.into_iter();
        let branches = (0..config.layout.branch_count())
            .map(|_| Branch {
                stem: it.next().expect("stem"),
                blocks: it.by_ref().take(n).collect(),
            })
            .collect();
        let fusion = match config.layout {
            EncoderLayout::Dual {
                fusion: FusionKind::Concat,
                ..
            } => it.by_ref().take(n + 1).collect(),
            _ => Vec::new(),
        };
        let decoder = it.by_ref().take(n).collect();
        let head = it.next().expect("head");
        debug_assert!(it.next().is_none());
        Self {
            config,
            branches,
            fusion,
            decoder,
            head,
        }
    }

    pub fn kernels(&self) -> Vec<&ConvKernel> {
        let mut out = Vec::new();
        for b in &self.branches {
            out.push(&b.stem);
            out.extend(&b.blocks);
        }
        out.extend(&self.fusion);
        out.extend(&self.decoder);
        out.push(&self.head);
        out
    }

    pub fn kernels_mut(&mut self) -> Vec<&mut ConvKernel> {
        let mut out = Vec::new();
        for b in &mut self.branches {
            out.push(&mut b.stem);
            out.extend(&mut b.blocks);
        }
        out.extend(&mut self.fusion);
        out.extend(&mut self.decoder);
        out.push(&mut self.head);
        out
    }

    pub fn param_count(&self) -> usize {
        self.kernels().iter().map(|k| k.param_count()).sum()
    }

    /// All parameters as one vector: per kernel, weights then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for k in self.kernels() {
            out.extend_from_slice(&k.weights);
            out.extend_from_slice(&k.bias);
        }
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Config(format!(
                "flat parameter vector has {} entries, bundle has {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut at = 0;
        for k in self.kernels_mut() {
            let nw = k.weights.len();
            k.weights.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = k.bias.len();
            k.bias.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    pub(crate) fn add_assign(&mut self, other: &WeightBundle) {
        for (a, b) in self.kernels_mut().into_iter().zip(other.kernels()) {
            a.add_assign(b);
        }
    }

    pub fn shapes(&self) -> Vec<[usize; 4]> {
        self.kernels().iter().map(|k| k.shape()).collect()
    }
}

/// Deterministic initialization from `config.seed`.
///
/// Weights are drawn uniformly from `±sqrt(6 / fan_in)`; biases start at
/// zero. The head is all zeros, so a fresh residual network returns its
/// coarse input unchanged.
pub fn init_weights(config: &RefineNetConfig) -> Result<WeightBundle> {
    let mut bundle = WeightBundle::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let kernels = bundle.kernels_mut();
    let last = kernels.len() - 1;
    for (i, k) in kernels.into_iter().enumerate() {
        if i == last {
            break;
        }
        let fan_in = (k.in_channels * k.kernel_h * k.kernel_w) as f64;
        let bound = (6.0 / fan_in).sqrt();
        for w in &mut k.weights {
            *w = rng.random_range(-bound..bound);
        }
    }
    Ok(bundle)
}

/// Serializes a bundle: magic, format version, length-prefixed config text,
/// kernel shape table, then every weight and bias as little-endian `f64` in
/// declaration order.
pub fn encode_weights(bundle: &WeightBundle) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&WEIGHT_MAGIC);
    out.extend_from_slice(&WEIGHT_FORMAT_VERSION.to_le_bytes());
    let cfg = bundle.config.to_kv();
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    let kernels = bundle.kernels();
    out.extend_from_slice(&(kernels.len() as u32).to_le_bytes());
    for k in &kernels {
        for d in k.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for k in &kernels {
        for v in k.weights.iter().chain(&k.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::Format(format!(
                "weight file truncated while reading {what} at byte {}",
                self.at
            )));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<WeightBundle> {
    let mut r = ByteReader { bytes, at: 0 };
    if r.take(4, "magic")? != WEIGHT_MAGIC {
        return Err(Error::Format("not a weight file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != WEIGHT_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "weight format version {version}, expected {WEIGHT_FORMAT_VERSION}"
        )));
    }
    let cfg_len = r.u32("config length")? as usize;
    let cfg_text = std::str::from_utf8(r.take(cfg_len, "config")?)
        .map_err(|_| Error::Format("config block is not UTF-8".into()))?;
    let config = RefineNetConfig::from_kv(cfg_text)
        .map_err(|e| Error::Format(format!("embedded config: {e}")))?;
    let expected = expected_shapes(&config);
    let count = r.u32("kernel count")? as usize;
    if count != expected.len() {
        return Err(Error::Format(format!(
            "file lists {count} kernels, config implies {}",
            expected.len()
        )));
    }
    for (i, want) in expected.iter().enumerate() {
        let mut got = [0usize; 4];
        for d in &mut got {
            *d = r.u32("shape table")? as usize;
        }
        if &got != want {
            return Err(Error::Format(format!(
                "kernel {i} has shape {got:?}, config implies {want:?}"
            )));
        }
    }
    let mut bundle = WeightBundle::zeros(&config).map_err(|e| Error::Format(e.to_string()))?;
    for k in bundle.kernels_mut() {
        for v in k.weights.iter_mut().chain(k.bias.iter_mut()) {
            *v = r.f64("parameters")?;
            if !v.is_finite() {
                return Err(Error::Format("non-finite parameter".into()));
            }
        }
    }
    if r.at != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after parameters",
            bytes.len() - r.at
        )));
    }
    Ok(bundle)
}

pub fn save_weights(bundle: &WeightBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_weights(bundle)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightBundle> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RefineNetConfig {
        RefineNetConfig {
            stem_channels: 2,
            blocks: vec![
                crate::refine::BlockSpec::new(4, 3, 2),
                crate::refine::BlockSpec::new(4, 3, 2),
            ],
            decoder_channels: vec![2, 4],
            seed: 5,
            ..RefineNetConfig::default()
        }
    }

    #[test]
    fn init_is_deterministic_with_zero_head() {
        let a = init_weights(&tiny()).unwrap();
        assert_eq!(a, init_weights(&tiny()).unwrap());
        assert!(a.head.weights.iter().chain(&a.head.bias).all(|&v| v == 0.0));
        let other = init_weights(&RefineNetConfig { seed: 6, ..tiny() }).unwrap();
        assert_ne!(a.branches[0].stem, other.branches[0].stem);
    }

    #[test]
    fn shapes_follow_config() {
        let cfg = tiny();
        let b = init_weights(&cfg).unwrap();
        assert_eq!(b.shapes(), expected_shapes(&cfg));
        assert_eq!(b.branches.len(), 2);
        assert_eq!(b.branches[0].stem.shape(), [2, 1, 3, 3]);
        assert_eq!(b.branches[1].stem.shape(), [2, 3, 3, 3]);
        // decoder: deepest stage sees block-2 features, next sees width 4 + block-1 channels
        assert_eq!(b.decoder[1].shape(), [4, 4, 3, 3]);
        assert_eq!(b.decoder[0].shape(), [2, 8, 3, 3]);
        assert_eq!(b.head.shape(), [1, 4, 3, 3]);

        let concat = RefineNetConfig {
            layout: EncoderLayout::Dual {
                shuffle: false,
                fusion: FusionKind::Concat,
            },
            ..tiny()
        };
        let b = init_weights(&concat).unwrap();
        assert_eq!(b.fusion.len(), 3);
        assert_eq!(b.fusion[1].shape(), [4, 8, 1, 1]);
        let single = RefineNetConfig {
            layout: EncoderLayout::Single,
            ..tiny()
        };
        assert_eq!(
            init_weights(&single).unwrap().branches[0].stem.in_channels,
            4
        );
    }

    #[test]
    fn flatten_round_trip() {
        let a = init_weights(&tiny()).unwrap();
        let mut b = WeightBundle::zeros(&tiny()).unwrap();
        b.load_flat(&a.flatten()).unwrap();
        assert_eq!(a, b);
        assert!(b.load_flat(&[0.0]).is_err());
    }

    #[test]
    fn encode_decode_is_bit_exact() {
        let a = init_weights(&tiny()).unwrap();
        let bytes = encode_weights(&a);
        let b = decode_weights(&bytes).unwrap();
        assert_eq!(a, b);
        assert_eq!(encode_weights(&b), bytes);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = encode_weights(&init_weights(&tiny()).unwrap());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_weights(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_weights(&bad), Err(Error::Format(_))));
        assert!(matches!(
            decode_weights(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
        let mut bad = bytes.clone();
        bad.push(0);
        assert!(matches!(decode_weights(&bad), Err(Error::Format(_))));
    }
}
