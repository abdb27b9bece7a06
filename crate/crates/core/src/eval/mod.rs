//! Training loss, error metrics and the ablation harness.

pub mod ablation;
pub mod loss;
pub mod metrics;

pub use ablation::{
    ablation_run, build_dataset, median_rmse, toy_network, AblationDataset, AblationSetup,
    AblationVariant, Scene,
};
pub use loss::{lp_loss_and_grad, masked_lp_loss, LossConfig};
pub use metrics::{compute_metrics, MetricsReport, DELTA_THRESHOLDS, MIN_EVAL_DEPTH_M};
