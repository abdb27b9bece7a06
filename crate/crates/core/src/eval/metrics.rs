use std::fmt;

use crate::depth_io::DepthMap;
use crate::error::{Error, Result};
use crate::refine::config::parse_kv;

/// Predictions are clamped to at least this depth (meters) before inversion.
pub const MIN_EVAL_DEPTH_M: f64 = 1e-3;

/// Ratio thresholds of the three δ accuracies.
pub const DELTA_THRESHOLDS: [f64; 3] = [1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25];

/// Error metrics over the ground-truth-valid pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub rmse_mm: f64,
    pub mae_mm: f64,
    pub irmse_per_km: f64,
    pub imae_per_km: f64,
    pub rel: f64,
    pub delta: [f64; 3],
    pub evaluated_pixels: usize,
}

const KEYS: [&str; 9] = [
    "rmse_mm",
    "mae_mm",
    "irmse_per_km",
    "imae_per_km",
    "rel",
    "delta1",
    "delta2",
    "delta3",
    "evaluated_pixels",
];

impl MetricsReport {
    /// Flat `key=value` text, one metric per line in a fixed order.
    pub fn to_kv(&self) -> String {
        let vals = [
            self.rmse_mm,
            self.mae_mm,
            self.irmse_per_km,
            self.imae_per_km,
            self.rel,
            self.delta[0],
            self.delta[1],
            self.delta[2],
        ];
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(vals) {
            out.push_str(&format!("{k}={v}\n"));
        }
        out.push_str(&format!("evaluated_pixels={}\n", self.evaluated_pixels));
        out
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let kv = parse_kv(text)?;
        if let Some(k) = kv.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::Format(format!("unknown metric {k:?}")));
        }
        let num = |k: &str| -> Result<f64> {
            kv.get(k)
                .ok_or_else(|| Error::Format(format!("missing metric {k}")))?
                .parse()
                .map_err(|_| Error::Format(format!("bad value for {k}")))
        };
        Ok(Self {
            rmse_mm: num("rmse_mm")?,
            mae_mm: num("mae_mm")?,
            irmse_per_km: num("irmse_per_km")?,
            imae_per_km: num("imae_per_km")?,
            rel: num("rel")?,
            delta: [num("delta1")?, num("delta2")?, num("delta3")?],
            evaluated_pixels: kv
                .get("evaluated_pixels")
                .ok_or_else(|| Error::Format("missing metric evaluated_pixels".into()))?
                .parse()
                .map_err(|_| Error::Format("bad value for evaluated_pixels".into()))?,
        })
    }

    /// Unweighted mean of per-image reports; pixel counts are summed.
    pub fn mean(reports: &[MetricsReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::EmptyInput("no reports to average".into()));
        }
        let n = reports.len() as f64;
        let avg = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            rmse_mm: avg(&|r| r.rmse_mm),
            mae_mm: avg(&|r| r.mae_mm),
            irmse_per_km: avg(&|r| r.irmse_per_km),
            imae_per_km: avg(&|r| r.imae_per_km),
            rel: avg(&|r| r.rel),
            delta: [
                avg(&|r| r.delta[0]),
                avg(&|r| r.delta[1]),
                avg(&|r| r.delta[2]),
            ],
            evaluated_pixels: reports.iter().map(|r| r.evaluated_pixels).sum(),
        })
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_kv())
    }
}

/// RMSE, MAE (mm), iRMSE, iMAE (1/km), REL and δ accuracies of `d_o`
/// against `d_gt`, over the pixels where `d_gt` is valid.
pub fn compute_metrics(d_o: &DepthMap, d_gt: &DepthMap) -> Result<MetricsReport> {
    if d_o.dims() != d_gt.dims() {
        return Err(Error::Shape(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            d_o.height(),
            d_o.width(),
            d_gt.height(),
            d_gt.width()
        )));
    }
    let mut n = 0usize;
    let (mut se, mut ae, mut ise, mut iae, mut rel) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut hits = [0usize; 3];
    for (i, (&p, &g)) in d_o.values().iter().zip(d_gt.values()).enumerate() {
        if g == 0.0 {
            continue;
        }
        if p == 0.0 {
            return Err(Error::Precondition(format!(
                "prediction is invalid at pixel {i} where ground truth is valid"
            )));
        }
        n += 1;
        let e = p - g;
        se += e * e;
        ae += e.abs();
        rel += e.abs() / g;
        let pc = p.max(MIN_EVAL_DEPTH_M);
        let ie = 1.0 / pc - 1.0 / g;
        ise += ie * ie;
        iae += ie.abs();
        let ratio = (pc / g).max(g / pc);
        for (hit, tau) in hits.iter_mut().zip(DELTA_THRESHOLDS) {
            if ratio < tau {
                *hit += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let nf = n as f64;
    Ok(MetricsReport {
        rmse_mm: 1000.0 * (se / nf).sqrt(),
        mae_mm: 1000.0 * ae / nf,
        irmse_per_km: 1000.0 * (ise / nf).sqrt(),
        imae_per_km: 1000.0 * iae / nf,
        rel: rel / nf,
        delta: hits.map(|h| h as f64 / nf),
        evaluated_pixels: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_perfect() {
        let g = DepthMap::new(1, 3, vec![1.0, 0.0, 7.5]).unwrap();
        let m = compute_metrics(&g, &g).unwrap();
        assert_eq!(m.rmse_mm, 0.0);
        assert_eq!(m.irmse_per_km, 0.0);
        assert_eq!(m.delta, [1.0; 3]);
        assert_eq!(m.evaluated_pixels, 2);
    }

    #[test]
    fn hand_example() {
        let p = DepthMap::new(1, 2, vec![2.0, 4.0]).unwrap();
        let g = DepthMap::new(1, 2, vec![1.0, 3.0]).unwrap();
        let m = compute_metrics(&p, &g).unwrap();
        assert!((m.rmse_mm - 1000.0).abs() < 1e-9);
        assert!((m.mae_mm - 1000.0).abs() < 1e-9);
        assert!((m.irmse_per_km - 358.43).abs() < 0.01);
    }

    #[test]
    fn doubled_prediction_misses_every_delta() {
        let g = DepthMap::new(2, 2, vec![1.0, 2.0, 3.0, 40.0]).unwrap();
        let p = DepthMap::new(2, 2, g.values().iter().map(|v| 2.0 * v).collect()).unwrap();
        let m = compute_metrics(&p, &g).unwrap();
        assert_eq!(m.delta, [0.0; 3]);
        assert!((m.rel - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kv_round_trip() {
        let p = DepthMap::new(1, 3, vec![2.0, 4.0, 9.0]).unwrap();
        let g = DepthMap::new(1, 3, vec![1.0, 3.0, 10.0]).unwrap();
        let m = compute_metrics(&p, &g).unwrap();
        assert_eq!(MetricsReport::from_kv(&m.to_kv()).unwrap(), m);
        assert!(MetricsReport::from_kv("rmse_mm=1").is_err());
    }

    #[test]
    fn errors() {
        let g = DepthMap::invalid(2, 2);
        let p = DepthMap::constant(2, 2, 1.0).unwrap();
        assert!(matches!(compute_metrics(&p, &g), Err(Error::EmptyMask)));
        let g = DepthMap::constant(2, 2, 1.0).unwrap();
        assert!(matches!(
            compute_metrics(&DepthMap::invalid(2, 2), &g),
            Err(Error::Precondition(_))
        ));
    }
}
