//! Toy-scale ablation harness over the pipeline variants.

use std::fmt;
use std::str::FromStr;

use crate::depth_io::{synth_scene, ColorImage, DepthMap};
use crate::error::{Error, Result};
use crate::eval::metrics::{compute_metrics, MetricsReport};
use crate::eval::LossConfig;
use crate::fusion::FusionConfig;
use crate::refine::config::{BlockSpec, EncoderLayout, FusionKind, RefineNetConfig};
use crate::refine::network::forward;
use crate::refine::train::{train_toy, TrainConfig, TrainSample};
use crate::sparse::{nearest_neighbor_fill, sample_sparse};

/// Pipeline variants compared by the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AblationVariant {
    /// Sparse depth fed straight to a single encoder, direct prediction.
    SI,
    /// Interpolated dense depth into a single encoder, direct prediction.
    DI,
    /// As `DI` with the residual sum.
    DR,
    /// Two encoders without channel shuffle, concatenation fusion.
    DE,
    /// Two encoders with channel shuffle, concatenation fusion.
    DCC,
    /// Two encoders with channel shuffle, additive fusion.
    DCA,
    /// Two encoders with channel shuffle, energy fusion.
    DCE,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 7] = [
        AblationVariant::SI,
        AblationVariant::DI,
        AblationVariant::DR,
        AblationVariant::DE,
        AblationVariant::DCC,
        AblationVariant::DCA,
        AblationVariant::DCE,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AblationVariant::SI => "SI",
            AblationVariant::DI => "DI",
            AblationVariant::DR => "DR",
            AblationVariant::DE => "DE",
            AblationVariant::DCC => "DCC",
            AblationVariant::DCA => "DCA",
            AblationVariant::DCE => "DCE",
        }
    }

    /// Whether the network sees the sparse samples instead of the
    /// interpolated map.
    pub fn sparse_input(&self) -> bool {
        matches!(self, AblationVariant::SI)
    }

    pub fn residual(&self) -> bool {
        !matches!(self, AblationVariant::SI | AblationVariant::DI)
    }

    pub fn layout(&self) -> EncoderLayout {
        match self {
            AblationVariant::SI | AblationVariant::DI | AblationVariant::DR => {
                EncoderLayout::Single
            }
            AblationVariant::DE => EncoderLayout::Dual {
                shuffle: false,
                fusion: FusionKind::Concat,
            },
            AblationVariant::DCC => EncoderLayout::Dual {
                shuffle: true,
                fusion: FusionKind::Concat,
            },
            AblationVariant::DCA => EncoderLayout::Dual {
                shuffle: true,
                fusion: FusionKind::Add,
            },
            AblationVariant::DCE => EncoderLayout::Dual {
                shuffle: true,
                fusion: FusionKind::Energy,
            },
        }
    }

    /// `base` with this variant's input, residual and encoder settings.
    pub fn apply(&self, base: &RefineNetConfig) -> RefineNetConfig {
        RefineNetConfig {
            layout: self.layout(),
            residual: self.residual(),
            sparse_depth_input: self.sparse_input(),
            ..base.clone()
        }
    }

    /// Rejects a network configuration that does not realize this variant.
    pub fn check(&self, cfg: &RefineNetConfig) -> Result<()> {
        cfg.validate()?;
        if cfg.layout != self.layout()
            || cfg.residual != self.residual()
            || cfg.sparse_depth_input != self.sparse_input()
        {
            return Err(Error::Config(format!(
                "network configuration does not match variant {self}"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant {s:?}; expected one of SI DI DR DE DCC DCA DCE"
                ))
            })
    }
}

/// Everything that fixes an ablation run apart from the variant and seed.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationSetup {
    pub scenes: usize,
    pub train_scenes: usize,
    pub height: usize,
    pub width: usize,
    pub points: usize,
    pub data_seed: u64,
    pub net: RefineNetConfig,
    pub train: TrainConfig,
    pub fusion: FusionConfig,
}

impl Default for AblationSetup {
    fn default() -> Self {
        Self {
            scenes: 200,
            train_scenes: 160,
            height: 96,
            width: 128,
            points: 500,
            data_seed: 2024,
            net: toy_network(),
            train: TrainConfig {
                epochs: 8,
                learning_rate: 5e-3,
                decay_every: Some(6),
                decay_factor: 0.1,
                batch_size: Some(4),
                weight_decay: 0.0,
                loss: LossConfig::L2,
                seed: 0,
            },
            fusion: FusionConfig::default(),
        }
    }
}

/// Network shared by every variant of the toy ablation.
pub fn toy_network() -> RefineNetConfig {
    RefineNetConfig {
        stem_channels: 4,
        blocks: vec![
            BlockSpec::new(8, 3, 2),
            BlockSpec::new(16, 3, 2),
            BlockSpec::new(32, 3, 2),
        ],
        decoder_channels: vec![4, 8, 16],
        ..RefineNetConfig::default()
    }
}

impl AblationSetup {
    pub fn validate(&self) -> Result<()> {
        if self.train_scenes == 0 || self.train_scenes >= self.scenes {
            return Err(Error::Config(format!(
                "need at least one training and one test scene, got {} of {}",
                self.train_scenes, self.scenes
            )));
        }
        self.net.validate()?;
        self.net.check_input_dims(self.height, self.width)?;
        self.train.validate()
    }

    /// Human-readable description of every variant's configuration.
    pub fn manifest(&self) -> String {
        let mut out = format!(
            "# scenes={} train={} size={}x{} points={} data_seed={}\n\
             # epochs={} lr={} decay_every={:?} batch={:?} p={}\n",
            self.scenes,
            self.train_scenes,
            self.height,
            self.width,
            self.points,
            self.data_seed,
            self.train.epochs,
            self.train.learning_rate,
            self.train.decay_every,
            self.train.batch_size,
            self.train.loss,
        );
        for v in AblationVariant::ALL {
            let (enc, shuffle, fusion) = match v.layout() {
                EncoderLayout::Single => (1, "-".to_string(), "-".to_string()),
                EncoderLayout::Dual { shuffle, fusion } => {
                    (2, shuffle.to_string(), fusion.to_string())
                }
            };
            out.push_str(&format!(
                "{v}: input={} residual={} encoders={enc} shuffle={shuffle} fusion={fusion}\n",
                if v.sparse_input() { "sparse" } else { "dense" },
                v.residual(),
            ));
        }
        out
    }
}

/// One synthetic scene with both depth inputs precomputed.
#[derive(Clone, Debug)]
pub struct Scene {
    pub image: ColorImage,
    pub sparse: DepthMap,
    pub coarse: DepthMap,
    pub gt: DepthMap,
}

#[derive(Clone, Debug)]
pub struct AblationDataset {
    pub train: Vec<Scene>,
    pub test: Vec<Scene>,
}

/// Renders, sparsifies and interpolates every scene of the setup.
pub fn build_dataset(setup: &AblationSetup) -> Result<AblationDataset> {
    setup.validate()?;
    let mut scenes = Vec::with_capacity(setup.scenes);
    for i in 0..setup.scenes as u64 {
        let scene_seed = setup.data_seed.wrapping_mul(1_000_003).wrapping_add(i);
        let (image, gt) = synth_scene(scene_seed, setup.height, setup.width)?;
        let sparse = sample_sparse(&gt, setup.points, scene_seed ^ 0x5eed);
        let coarse = nearest_neighbor_fill(&sparse)?;
        scenes.push(Scene {
            image,
            sparse,
            coarse,
            gt,
        });
    }
    let test = scenes.split_off(setup.train_scenes);
    Ok(AblationDataset {
        train: scenes,
        test,
    })
}

fn samples(scenes: &[Scene], variant: AblationVariant) -> Vec<TrainSample> {
    scenes
        .iter()
        .map(|s| TrainSample {
            image: s.image.clone(),
            depth: if variant.sparse_input() {
                s.sparse.clone()
            } else {
                s.coarse.clone()
            },
            gt: s.gt.clone(),
        })
        .collect()
}

/// Trains the variant once per seed and returns the mean per-image metrics
/// on the held-out scenes for each seed.
pub fn ablation_run(
    variant: AblationVariant,
    dataset: &AblationDataset,
    seeds: &[u64],
    setup: &AblationSetup,
) -> Result<Vec<MetricsReport>> {
    if dataset.train.is_empty() || dataset.test.is_empty() {
        return Err(Error::Config(
            "ablation needs training and test scenes".into(),
        ));
    }
    setup.validate()?;
    let train = samples(&dataset.train, variant);
    let test = samples(&dataset.test, variant);
    let mut out = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let net = RefineNetConfig {
            seed,
            ..variant.apply(&setup.net)
        };
        variant.check(&net)?;
        let tc = TrainConfig {
            seed,
            ..setup.train.clone()
        };
        let (weights, _) = train_toy(&train, &net, &setup.fusion, &tc)?;
        let mut reports = Vec::with_capacity(test.len());
        for s in &test {
            let o = forward(&s.image, &s.depth, &weights, &setup.fusion)?;
            reports.push(compute_metrics(&o.d_o, &s.gt)?);
        }
        out.push(MetricsReport::mean(&reports)?);
    }
    Ok(out)
}

/// Median of the per-seed RMSE values.
pub fn median_rmse(reports: &[MetricsReport]) -> Result<f64> {
    if reports.is_empty() {
        return Err(Error::EmptyInput("no reports".into()));
    }
    let mut v: Vec<f64> = reports.iter().map(|r| r.rmse_mm).collect();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Ok(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}
