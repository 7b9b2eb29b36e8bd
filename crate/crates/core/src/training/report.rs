//! Per-patch evaluation and the JSON metrics report.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::data::patch::PointPatch;
use crate::data::split::{load_split, Split};
use crate::error::{Error, Result};
use crate::network::{forward, Checkpoint, ModelConfig, Task, Weights};
use crate::par::{try_map_ordered, Execution};
use crate::real::Real;
use crate::tensor::Tensor;
use crate::training::losses::{angular_loss, bce_loss};
use crate::training::metrics::{balanced_accuracy, rmse_metric, unoriented_angle_deg, Histogram};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Sigmoid probability at or above which a point is predicted sharp.
    pub threshold: f64,
    /// Flip each predicted normal toward its target before the RMSE.
    pub unoriented_rmse: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { threshold: 0.5, unoriented_rmse: true }
    }
}

/// Network output for one patch.
#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Normals(Vec<[f64; 3]>),
    SharpLogits(Vec<f64>),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerPatchMetrics {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub angular_loss: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rmse: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bce: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub balanced_accuracy: Vec<f64>,
}

/// Means of the per-patch values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angular_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bce: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub balanced_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    pub n_patches: usize,
    pub n_points: usize,
    pub per_patch: PerPatchMetrics,
    pub aggregate: AggregateMetrics,
    /// Per-patch angular loss (normals) or balanced accuracy (sharp) over
    /// `[0, 1]`; counts sum to the patch count.
    pub histogram: Histogram,
    /// Per-point unoriented angular error in degrees over `[0, 90]`
    /// (normals only); counts sum to the point count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point_histogram: Option<Histogram>,
}

impl MetricsReport {
    /// Value used to pick the best checkpoint, oriented so larger is better.
    pub fn selection_score(&self) -> f64 {
        match self.task {
            Task::Normals => -self.aggregate.angular_loss.unwrap_or(f64::INFINITY),
            Task::Sharp => self.aggregate.balanced_accuracy.unwrap_or(f64::NEG_INFINITY),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Fails unless `patch` carries the labels `task` needs.
pub(crate) fn check_labels(task: Task, patch: &PointPatch) -> Result<()> {
    patch.validate()?;
    let ok = match task {
        Task::Normals => patch.normals.is_some(),
        Task::Sharp => patch.sharp.is_some(),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Mismatch(format!(
            "{} patch (seed {}) has no {} labels",
            patch.meta.kind,
            patch.meta.seed,
            task.name()
        )))
    }
}

fn rows_f64<T: Real>(t: &Tensor<T>) -> Vec<[f64; 3]> {
    t.data()
        .chunks_exact(3)
        .map(|c| [c[0].to_f64_lossy(), c[1].to_f64_lossy(), c[2].to_f64_lossy()])
        .collect()
}

/// Scores predictions against the patch labels.
pub fn report_from_predictions(
    task: Task,
    patches: &[PointPatch],
    predictions: &[Prediction],
    options: &EvalOptions,
) -> Result<MetricsReport> {
    if patches.len() != predictions.len() {
        return Err(Error::dim("report", format!("{} patches vs {} predictions", patches.len(), predictions.len())));
    }
    let mut per = PerPatchMetrics::default();
    let mut histogram = match task {
        Task::Normals => Histogram::new("angular_loss", 0.0, 1.0),
        Task::Sharp => Histogram::new("balanced_accuracy", 0.0, 1.0),
    };
    let mut point_histogram = (task == Task::Normals).then(|| Histogram::new("angular_error_deg", 0.0, 90.0));
    let mut n_points = 0;
    for (patch, pred) in patches.iter().zip(predictions) {
        check_labels(task, patch)?;
        n_points += patch.len();
        match (task, pred) {
            (Task::Normals, Prediction::Normals(p)) => {
                let gt: Vec<[f64; 3]> =
                    patch.normals.as_ref().unwrap().iter().map(|r| r.map(|v| v as f64)).collect();
                let pt = Tensor::from_points(p)?;
                let gtt = Tensor::from_points(&gt)?;
                let a = angular_loss(&pt, &gtt)?;
                per.angular_loss.push(a);
                per.rmse.push(rmse_metric(p, &gt, options.unoriented_rmse)?);
                histogram.add(a);
                let ph = point_histogram.as_mut().unwrap();
                for (a, b) in p.iter().zip(&gt) {
                    ph.add(unoriented_angle_deg(*a, *b));
                }
            }
            (Task::Sharp, Prediction::SharpLogits(z)) => {
                let labels = patch.sharp.as_ref().unwrap();
                let probs: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
                let ba = balanced_accuracy(&probs, labels, options.threshold)?;
                per.bce.push(bce_loss(z, labels)?);
                per.balanced_accuracy.push(ba);
                histogram.add(ba);
            }
            _ => return Err(Error::Mismatch(format!("prediction kind does not match the {} task", task.name()))),
        }
    }
    let aggregate = AggregateMetrics {
        angular_loss: mean(&per.angular_loss),
        rmse: mean(&per.rmse),
        bce: mean(&per.bce),
        balanced_accuracy: mean(&per.balanced_accuracy),
    };
    Ok(MetricsReport {
        task,
        split: None,
        n_patches: patches.len(),
        n_points,
        per_patch: per,
        aggregate,
        histogram,
        point_histogram,
    })
}

/// Runs the network over every patch.
pub fn predict_patches<T: Real>(
    weights: &Weights<T>,
    model: &ModelConfig,
    patches: &[PointPatch],
    execution: Execution,
) -> Result<Vec<Prediction>> {
    try_map_ordered(execution, patches, |patch| {
        let out = forward(&patch.points_tensor::<T>(), weights, model, false)?;
        Ok(match model.task {
            Task::Normals => Prediction::Normals(rows_f64(out.normals.as_ref().unwrap())),
            Task::Sharp => Prediction::SharpLogits(out.sharp_logits.unwrap().iter().map(|v| v.to_f64_lossy()).collect()),
        })
    })
}

pub fn evaluate_patches<T: Real>(
    weights: &Weights<T>,
    model: &ModelConfig,
    patches: &[PointPatch],
    options: &EvalOptions,
    execution: Execution,
) -> Result<MetricsReport> {
    for p in patches {
        check_labels(model.task, p)?;
    }
    let preds = predict_patches(weights, model, patches, execution)?;
    report_from_predictions(model.task, patches, &preds, options)
}

/// Evaluates a checkpoint on one split of a data directory.
pub fn evaluate(
    checkpoint: &Checkpoint,
    split: Split,
    data_dir: impl AsRef<Path>,
    options: &EvalOptions,
    execution: Execution,
) -> Result<MetricsReport> {
    let patches = load_split(data_dir, split)?;
    let mut report = evaluate_patches(&checkpoint.weights, &checkpoint.model, &patches, options, execution)?;
    report.split = Some(split);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::patch::PatchMeta;

    fn patch(normals: Vec<[f32; 3]>, sharp: Vec<u8>) -> PointPatch {
        PointPatch {
            points: vec![[0.0; 3]; normals.len()],
            normals: Some(normals),
            sharp: Some(sharp),
            meta: PatchMeta { kind: "t".into(), seed: 0, centroid: [0.0; 3], scale: 1.0, shape: None, rotation: None },
        }
    }

    fn patches() -> Vec<PointPatch> {
        vec![
            patch(vec![[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]], vec![0, 1]),
            patch(vec![[0.0, 1.0, 0.0], [0.6, 0.8, 0.0], [0.0, 0.0, -1.0]], vec![1, 0, 0]),
        ]
    }

    #[test]
    fn ground_truth_predictions_score_perfectly() {
        let ps = patches();
        let normals: Vec<Prediction> = ps
            .iter()
            .map(|p| Prediction::Normals(p.normals.as_ref().unwrap().iter().map(|r| r.map(|v| v as f64)).collect()))
            .collect();
        let r = report_from_predictions(Task::Normals, &ps, &normals, &EvalOptions::default()).unwrap();
        assert_eq!(r.aggregate.angular_loss, Some(0.0));
        assert_eq!(r.histogram.total(), 2);
        assert_eq!(r.point_histogram.as_ref().unwrap().total(), 5);

        let sharp: Vec<Prediction> = ps
            .iter()
            .map(|p| Prediction::SharpLogits(p.sharp.as_ref().unwrap().iter().map(|&y| if y == 1 { 30.0 } else { -30.0 }).collect()))
            .collect();
        let r = report_from_predictions(Task::Sharp, &ps, &sharp, &EvalOptions::default()).unwrap();
        assert_eq!(r.aggregate.balanced_accuracy, Some(1.0));
    }

    #[test]
    fn aggregate_is_mean_of_per_patch() {
        let ps = patches();
        let preds = vec![
            Prediction::Normals(vec![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]),
            Prediction::Normals(vec![[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, -1.0]]),
        ];
        let r = report_from_predictions(Task::Normals, &ps, &preds, &EvalOptions::default()).unwrap();
        let m = r.per_patch.angular_loss.iter().sum::<f64>() / 2.0;
        assert!((r.aggregate.angular_loss.unwrap() - m).abs() < 1e-12);
        assert!((r.per_patch.angular_loss[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn missing_labels_are_a_mismatch() {
        let mut p = patches();
        p[0].sharp = None;
        let preds = vec![Prediction::SharpLogits(vec![0.0; 2]), Prediction::SharpLogits(vec![0.0; 3])];
        assert!(matches!(report_from_predictions(Task::Sharp, &p, &preds, &EvalOptions::default()), Err(Error::Mismatch(_))));
    }
}
