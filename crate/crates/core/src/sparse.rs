//! Stage one: sparsify ground truth and turn sparse depth into a coarse,
//! fully valid map.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::depth_io::{read_depth_png, ColorImage, DepthMap};
use crate::error::{Error, Result};

/// Keeps `min(n, ν)` valid pixels of `gt`, chosen uniformly without
/// replacement by a seeded ChaCha8 stream. Everything else becomes invalid.
pub fn sample_sparse(gt: &DepthMap, n: usize, seed: u64) -> DepthMap {
    let valid: Vec<usize> = gt
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(i, _)| i)
        .collect();
    if n >= valid.len() {
        return gt.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; gt.len()];
    for k in rand::seq::index::sample(&mut rng, valid.len(), n) {
        let i = valid[k];
        values[i] = gt.values()[i];
    }
    DepthMap::from_raw(gt.height(), gt.width(), values, gt.max_range())
}

/// Side of the square buckets used by the ring search.
const BUCKET: usize = 8;

/// Fills every pixel with the value of its nearest valid pixel (Euclidean
/// distance between pixel centers). Equidistant candidates resolve to the
/// one that comes first in row-major order.
pub fn nearest_neighbor_fill(sparse: &DepthMap) -> Result<DepthMap> {
    let (h, w) = sparse.dims();
    let vals = sparse.values();
    let (bh, bw) = (h.div_ceil(BUCKET), w.div_ceil(BUCKET));
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); bh * bw];
    let mut any = false;
    // row-major insertion keeps each bucket sorted by index
    for (i, &v) in vals.iter().enumerate() {
        if v != 0.0 {
            buckets[(i / w / BUCKET) * bw + (i % w) / BUCKET].push(i);
            any = true;
        }
    }
    if !any {
        return Err(Error::EmptyInput(
            "nearest-neighbor fill needs at least one valid pixel".into(),
        ));
    }

    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if vals[i] != 0.0 {
                out[i] = vals[i];
                continue;
            }
            let (by, bx) = (y / BUCKET, x / BUCKET);
            let mut best: Option<(usize, usize)> = None; // (squared distance, index)
            let max_ring = bh.max(bw);
            for r in 0..=max_ring {
                let y0 = by.saturating_sub(r);
                let y1 = (by + r).min(bh - 1);
                let x0 = bx.saturating_sub(r);
                let x1 = (bx + r).min(bw - 1);
                for cy in y0..=y1 {
                    for cx in x0..=x1 {
                        if cy.abs_diff(by).max(cx.abs_diff(bx)) != r {
                            continue;
                        }
                        for &j in &buckets[cy * bw + cx] {
                            let (jy, jx) = (j / w, j % w);
                            let d2 = jy.abs_diff(y).pow(2) + jx.abs_diff(x).pow(2);
                            if best.is_none_or(|(bd, bj)| d2 < bd || (d2 == bd && j < bj)) {
                                best = Some((d2, j));
                            }
                        }
                    }
                }
                // buckets on ring r + 1 are at least r * BUCKET + 1 pixels away
                if let Some((bd, _)) = best {
                    let reach = r * BUCKET + 1;
                    if bd < reach * reach {
                        break;
                    }
                }
            }
            let (_, j) = best.expect("at least one valid pixel exists");
            out[i] = vals[j];
        }
    }
    Ok(DepthMap::from_raw(h, w, out, sparse.max_range()))
}

/// Backend that realizes the sparse-to-coarse stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CoarseSource {
    /// Handcrafted nearest-neighbor interpolation of the sparse input.
    NearestNeighbor,
    /// A precomputed coarse map stored as a 16-bit depth PNG.
    LoadedMap(PathBuf),
}

impl CoarseSource {
    pub fn loaded(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.as_os_str().is_empty() {
            return Err(Error::Source("loaded_map requires a non-empty path".into()));
        }
        Ok(Self::LoadedMap(path.to_path_buf()))
    }
}

impl fmt::Display for CoarseSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoarseSource::NearestNeighbor => f.write_str("nn"),
            CoarseSource::LoadedMap(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl FromStr for CoarseSource {
    type Err = Error;

    /// Accepts `nn` or `file:PATH`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nn" | "nearest_neighbor" => Ok(Self::NearestNeighbor),
            _ => match s.strip_prefix("file:") {
                Some(path) => Self::loaded(path),
                None => Err(Error::Source(format!(
                    "unknown coarse source {s:?}; expected nn or file:PATH"
                ))),
            },
        }
    }
}

/// Produces the coarse dense map `d_sc` from sparse depth. The image is
/// accepted for interface symmetry; neither backend reads it.
pub fn sparse_to_coarse(
    sparse: &DepthMap,
    _image: &ColorImage,
    source: &CoarseSource,
) -> Result<DepthMap> {
    match source {
        CoarseSource::NearestNeighbor => nearest_neighbor_fill(sparse),
        CoarseSource::LoadedMap(path) => {
            let map = read_depth_png(path).map_err(|e| {
                Error::Source(format!("cannot load coarse map {}: {e}", path.display()))
            })?;
            if map.dims() != sparse.dims() {
                return Err(Error::Source(format!(
                    "coarse map {} is {}x{}, sparse input is {}x{}",
                    path.display(),
                    map.height(),
                    map.width(),
                    sparse.height(),
                    sparse.width()
                )));
            }
            if !map.is_fully_valid() {
                return Err(Error::Source(format!(
                    "coarse map {} has {} invalid pixels",
                    path.display(),
                    map.len() - map.valid_count()
                )));
            }
            Ok(map)
        }
    }
}
