use std::fmt;
use std::str::FromStr;

use crate::depth_io::DepthMap;
use crate::error::{Error, Result};

/// Exponent of the masked training loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LossConfig {
    L1,
    #[default]
    L2,
}

impl LossConfig {
    pub fn new(p: u32) -> Result<Self> {
        match p {
            1 => Ok(LossConfig::L1),
            2 => Ok(LossConfig::L2),
            _ => Err(Error::Config(format!(
                "loss exponent must be 1 or 2, got {p}"
            ))),
        }
    }

    pub fn p(&self) -> u32 {
        match self {
            LossConfig::L1 => 1,
            LossConfig::L2 => 2,
        }
    }
}

impl fmt::Display for LossConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.p())
    }
}

impl FromStr for LossConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let p = s
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("loss exponent must be 1 or 2, got {s:?}")))?;
        Self::new(p)
    }
}

/// `(1/ν) Σ |d_o - d_gt|^p` over the pixels where `d_gt` is valid.
pub fn masked_lp_loss(d_o: &DepthMap, d_gt: &DepthMap, cfg: &LossConfig) -> Result<f64> {
    if d_o.dims() != d_gt.dims() {
        return Err(Error::Shape(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            d_o.height(),
            d_o.width(),
            d_gt.height(),
            d_gt.width()
        )));
    }
    Ok(lp_loss_and_grad(d_o.values(), d_gt, cfg)?.0)
}

/// Masked loss of a raw (possibly negative) prediction and its gradient with
/// respect to every prediction entry. Entries where `gt` is invalid get zero
/// gradient; for `p = 1` the subgradient at zero error is zero.
pub fn lp_loss_and_grad(pred: &[f64], gt: &DepthMap, cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "prediction has {} values, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    let nu = gt.valid_count();
    if nu == 0 {
        return Err(Error::EmptyMask);
    }
    let inv = 1.0 / nu as f64;
    let mut sum = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for (i, (&p, &g)) in pred.iter().zip(gt.values()).enumerate() {
        if g == 0.0 {
            continue;
        }
        let e = p - g;
        match cfg {
            LossConfig::L1 => {
                sum += e.abs();
                grad[i] = if e > 0.0 {
                    inv
                } else if e < 0.0 {
                    -inv
                } else {
                    0.0
                };
            }
            LossConfig::L2 => {
                sum += e * e;
                grad[i] = 2.0 * e * inv;
            }
        }
    }
    Ok((sum * inv, grad))
}
