//! Losses, metrics, the Adam optimizer, and the train/evaluate loops.

mod adam;
mod losses;
mod metrics;
mod report;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use losses::{
    angular_loss, bce_graph, bce_loss, mse, normals_objective, normals_objective_graph, UNIT_TOLERANCE,
};
pub use metrics::{balanced_accuracy, rmse_metric, unoriented_angle_deg, Histogram};
pub use report::{
    evaluate, evaluate_patches, predict_patches, report_from_predictions, AggregateMetrics, EvalOptions,
    MetricsReport, PerPatchMetrics, Prediction,
};
pub use trainer::{
    augmentation_seed, epoch_order, stream_seed, train, train_on, training_view, LogRow, TrainOutcome, Trainer,
    TrainingLog, LOG_HEADER,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Weight of the mean-squared-error term in the normals objective.
    pub mse_weight: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Drives the epoch order and the augmentation rotations.
    pub seed: u64,
    /// Randomly rotate every training patch each epoch.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 10,
            batch_size: 8,
            lr: adam.lr,
            mse_weight: 0.01,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            seed: 0,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if !(self.mse_weight >= 0.0 && self.mse_weight.is_finite()) {
            return bad(format!("mse weight {} must be nonnegative", self.mse_weight));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("Adam betas must lie in [0, 1) and eps must be positive".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}
