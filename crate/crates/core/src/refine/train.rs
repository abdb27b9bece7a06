//! Desk-scale training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::depth_io::{ColorImage, DepthMap};
use crate::error::{Error, Result};
use crate::eval::{lp_loss_and_grad, LossConfig};
use crate::fusion::FusionConfig;
use crate::numerics::{adam_step, AdamState, Tensor3};
use crate::refine::config::RefineNetConfig;
use crate::refine::network::{backward, forward_trace, raw_prediction, NetInput};
use crate::refine::weights::{init_weights, WeightBundle};

/// One training example. `depth` is what the network sees: the coarse map
/// for dense-input variants, the sparse map for the sparse-input one.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub image: ColorImage,
    pub depth: DepthMap,
    pub gt: DepthMap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Multiply the learning rate by `decay_factor` every this many epochs;
    /// `None` keeps it constant.
    pub decay_every: Option<usize>,
    pub decay_factor: f64,
    /// Samples per Adam step; `None` uses the whole dataset.
    pub batch_size: Option<usize>,
    /// L2 penalty added to every gradient.
    pub weight_decay: f64,
    pub loss: LossConfig,
    /// Seeds the per-epoch sample order.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 1e-3,
            decay_every: Some(10),
            decay_factor: 0.1,
            batch_size: None,
            weight_decay: 0.0,
            loss: LossConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        if self.decay_every == Some(0) || self.batch_size == Some(0) {
            return Err(Error::Config(
                "decay period and batch size must be positive".into(),
            ));
        }
        if !(self.weight_decay >= 0.0 && self.decay_factor > 0.0) {
            return Err(Error::Config(
                "weight decay and decay factor out of range".into(),
            ));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (zero-based).
    pub fn rate_at(&self, epoch: usize) -> f64 {
        match self.decay_every {
            Some(k) => self.learning_rate * self.decay_factor.powi((epoch / k) as i32),
            None => self.learning_rate,
        }
    }
}

/// Loss of one sample and its gradient with respect to every kernel.
pub fn sample_loss_and_grad(
    weights: &WeightBundle,
    input: &NetInput,
    base: &DepthMap,
    gt: &DepthMap,
    fuse_cfg: &FusionConfig,
    loss: &LossConfig,
) -> Result<(f64, WeightBundle)> {
    let cfg = &weights.config;
    let trace = forward_trace(weights, input, fuse_cfg)?;
    let pred = raw_prediction(&trace.head_out, base, cfg);
    let (value, grad) = lp_loss_and_grad(&pred, gt, loss)?;
    let (h, w) = gt.dims();
    let grad_head = Tensor3::from_raw(
        1,
        h,
        w,
        grad.into_iter().map(|g| g * cfg.depth_scale).collect(),
    );
    Ok((value, backward(weights, &trace, &grad_head, fuse_cfg)?))
}

/// Loss of one sample on the unclamped prediction.
pub fn sample_loss(
    weights: &WeightBundle,
    input: &NetInput,
    base: &DepthMap,
    gt: &DepthMap,
    fuse_cfg: &FusionConfig,
    loss: &LossConfig,
) -> Result<f64> {
    let trace = forward_trace(weights, input, fuse_cfg)?;
    let pred = raw_prediction(&trace.head_out, base, &weights.config);
    Ok(lp_loss_and_grad(&pred, gt, loss)?.0)
}

/// Trains a freshly initialized network with Adam and returns the final
/// weights and the mean training loss of every epoch.
///
/// The loss is taken on the prediction before clamping so direct-depth
/// variants, which start at zero, still receive gradient.
pub fn train_toy(
    dataset: &[TrainSample],
    net_cfg: &RefineNetConfig,
    fuse_cfg: &FusionConfig,
    train_cfg: &TrainConfig,
) -> Result<(WeightBundle, Vec<f64>)> {
    net_cfg.validate()?;
    let weights = init_weights(net_cfg)?;
    train_from(weights, dataset, fuse_cfg, train_cfg)
}

/// Like [`train_toy`] but continues from the given weights.
pub fn train_from(
    mut weights: WeightBundle,
    dataset: &[TrainSample],
    fuse_cfg: &FusionConfig,
    train_cfg: &TrainConfig,
) -> Result<(WeightBundle, Vec<f64>)> {
    train_cfg.validate()?;
    let first = dataset
        .first()
        .ok_or_else(|| Error::Config("training set is empty".into()))?;
    let dims = first.gt.dims();
    let mut inputs = Vec::with_capacity(dataset.len());
    for (i, s) in dataset.iter().enumerate() {
        if s.gt.dims() != dims || s.depth.dims() != dims || s.image.dims() != dims {
            return Err(Error::Config(format!(
                "sample {i} does not match the {}x{} size of sample 0",
                dims.0, dims.1
            )));
        }
        inputs.push(NetInput::new(&s.image, &s.depth, &weights.config)?);
    }

    let batch = train_cfg
        .batch_size
        .unwrap_or(dataset.len())
        .min(dataset.len());
    let mut params = weights.flatten();
    let mut adam = AdamState::new(params.len(), train_cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(train_cfg.epochs);

    for epoch in 0..train_cfg.epochs {
        adam.learning_rate = train_cfg.rate_at(epoch);
        if batch < dataset.len() {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let mut acc: Option<WeightBundle> = None;
            for &i in chunk {
                let s = &dataset[i];
                let (l, g) = sample_loss_and_grad(
                    &weights,
                    &inputs[i],
                    &s.depth,
                    &s.gt,
                    fuse_cfg,
                    &train_cfg.loss,
                )?;
                epoch_loss += l;
                match acc.as_mut() {
                    Some(a) => a.add_assign(&g),
                    None => acc = Some(g),
                }
            }
            let inv = 1.0 / chunk.len() as f64;
            let mut grads = acc.expect("chunks are nonempty").flatten();
            for (g, p) in grads.iter_mut().zip(&params) {
                *g = *g * inv + train_cfg.weight_decay * p;
            }
            adam_step(&mut params, &grads, &mut adam)?;
            weights.load_flat(&params)?;
        }
        history.push(epoch_loss / dataset.len() as f64);
    }
    Ok((weights, history))
}
