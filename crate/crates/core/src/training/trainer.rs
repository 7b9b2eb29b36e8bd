//! Mini-batch training with best-validation checkpoint retention.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::patch::{augment_rotate, PointPatch};
use crate::data::split::{load_split, Split};
use crate::error::{Error, Result};
use crate::network::{forward_graph, init_weights, BoundWeights, Checkpoint, ModelConfig, Task, Weights};
use crate::par::{try_map_ordered, Execution};
use crate::real::Real;
use crate::tensor::Tensor;
use crate::training::adam::{adam_step, AdamState};
use crate::training::losses::{bce_graph, normals_objective_graph};
use crate::training::report::{check_labels, evaluate_patches, EvalOptions, MetricsReport};
use crate::training::TrainConfig;

pub const LOG_HEADER: &str = "epoch,split,task,metric,value";

const SHUFFLE_STREAM: u64 = 1;
const AUGMENT_STREAM: u64 = 2;

/// Mixes a base seed, a named stream, and an index into an independent seed.
pub fn stream_seed(seed: u64, stream: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(mix(mix(seed) ^ stream) ^ index)
}

/// Order in which training patches are visited in `epoch` (1-based).
pub fn epoch_order(seed: u64, n: usize, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(seed, SHUFFLE_STREAM, epoch as u64)));
    order
}

/// Seed of the augmentation rotation of training patch `patch_id` in `epoch`.
pub fn augmentation_seed(seed: u64, epoch: usize, patch_id: usize) -> u64 {
    stream_seed(seed, AUGMENT_STREAM, ((epoch as u64) << 32) ^ patch_id as u64)
}

/// The patch as the optimizer sees it in `epoch`.
pub fn training_view(config: &TrainConfig, patch: &PointPatch, epoch: usize, patch_id: usize) -> PointPatch {
    if config.augment {
        augment_rotate(patch, augmentation_seed(config.seed, epoch, patch_id))
    } else {
        patch.clone()
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub split: String,
    pub task: Task,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub fn push(&mut self, epoch: usize, split: &str, task: Task, metric: &str, value: f64) {
        self.rows.push(LogRow { epoch, split: split.into(), task, metric: metric.into(), value });
    }

    pub fn epochs(&self) -> usize {
        self.rows.iter().map(|r| r.epoch).max().unwrap_or(0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(LOG_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.epoch, r.split, r.task.name(), r.metric, r.value);
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == LOG_HEADER => {}
            _ => return Err(Error::Parse { line: 1, reason: format!("expected header {LOG_HEADER}") }),
        }
        let mut log = TrainingLog::default();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: &str| Error::Parse { line: i + 1, reason: reason.into() };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            let task = match f[2] {
                "normals" => Task::Normals,
                "sharp" => Task::Sharp,
                _ => return Err(bad("unknown task")),
            };
            log.rows.push(LogRow {
                epoch: f[0].parse().map_err(|_| bad("bad epoch"))?,
                split: f[1].into(),
                task,
                metric: f[3].into(),
                value: f[4].parse().map_err(|_| bad("bad value"))?,
            });
        }
        Ok(log)
    }
}

/// Holds the weights and optimizer state of one training run.
#[derive(Clone, Debug)]
pub struct Trainer<T = f32> {
    model: ModelConfig,
    config: TrainConfig,
    weights: Weights<T>,
    adam: AdamState<T>,
    execution: Execution,
}

impl<T: Real> Trainer<T> {
    /// Fresh weights drawn from `model.seed`.
    pub fn new(model: ModelConfig, config: TrainConfig) -> Result<Self> {
        model.validate()?;
        let weights = init_weights(&model);
        Self::from_weights(model, config, weights)
    }

    pub fn from_weights(model: ModelConfig, config: TrainConfig, weights: Weights<T>) -> Result<Self> {
        model.validate()?;
        config.validate()?;
        let adam = AdamState::new(weights.tensors());
        Ok(Self { model, config, weights, adam, execution: Execution::default() })
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn model(&self) -> &ModelConfig {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn weights(&self) -> &Weights<T> {
        &self.weights
    }

    pub fn adam_state(&self) -> &AdamState<T> {
        &self.adam
    }

    fn build_loss(&self, g: &mut Graph<T>, bound: &BoundWeights, patch: &PointPatch) -> Result<Var> {
        check_labels(self.model.task, patch)?;
        let out = forward_graph(g, bound, &patch.points_tensor::<T>(), &self.model, false)?;
        match self.model.task {
            Task::Normals => {
                let gt = patch.normals_tensor::<T>().unwrap();
                normals_objective_graph(g, out.output, &gt, T::from_f64_lossy(self.config.mse_weight))
            }
            Task::Sharp => bce_graph(g, out.output, patch.sharp.as_ref().unwrap()),
        }
    }

    /// Training objective of one patch under the current weights.
    pub fn loss(&self, patch: &PointPatch) -> Result<f64> {
        let mut g = Graph::new();
        let bound = self.weights.bind(&mut g, false);
        let l = self.build_loss(&mut g, &bound, patch)?;
        Ok(g.value(l).item().to_f64_lossy())
    }

    /// Objective and its gradient for every weight tensor, in
    /// [`Weights::tensors`] order.
    pub fn loss_and_gradients(&self, patch: &PointPatch) -> Result<(T, Vec<Tensor<T>>)> {
        let mut g = Graph::new();
        let bound = self.weights.bind(&mut g, true);
        let l = self.build_loss(&mut g, &bound, patch)?;
        let mut grads = g.backward(l)?;
        let per_tensor = bound
            .vars()
            .into_iter()
            .map(|v| grads.take(v).unwrap_or_else(|| Tensor::zeros(g.shape(v))))
            .collect();
        Ok((g.value(l).item(), per_tensor))
    }

    /// One Adam step on the mean objective of `batch`; returns that mean.
    pub fn step(&mut self, batch: &[PointPatch]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let results = try_map_ordered(self.execution, batch, |p| self.loss_and_gradients(p))?;
        let inv = T::one() / T::from_usize(batch.len()).unwrap();
        let mut iter = results.into_iter();
        let (mut loss, mut grads) = iter.next().unwrap();
        for (l, gs) in iter {
            loss = loss + l;
            for (acc, g) in grads.iter_mut().zip(gs) {
                acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a = *a + b);
            }
        }
        for g in &mut grads {
            g.data_mut().iter_mut().for_each(|a| *a = *a * inv);
        }
        adam_step(self.weights.tensors_mut(), &grads, &mut self.adam, &self.config.adam())?;
        Ok((loss * inv).to_f64_lossy())
    }

    /// Runs one epoch over `patches`; returns the loss of every batch.
    pub fn run_epoch(&mut self, patches: &[PointPatch], epoch: usize) -> Result<Vec<f64>> {
        let order = epoch_order(self.config.seed, patches.len(), epoch);
        let mut losses = Vec::new();
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<PointPatch> =
                chunk.iter().map(|&i| training_view(&self.config, &patches[i], epoch, i)).collect();
            losses.push(self.step(&batch)?);
        }
        Ok(losses)
    }

    pub fn evaluate(&self, patches: &[PointPatch], options: &EvalOptions) -> Result<MetricsReport> {
        evaluate_patches(&self.weights, &self.model, patches, options, self.execution)
    }

    pub fn checkpoint(&self, epoch: usize) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            training: Some(self.config.clone()),
            epoch,
            weights: self.weights.cast(),
        }
    }
}

/// Outcome of a full training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights with the best validation score (earliest on ties).
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub log: TrainingLog,
    /// Loss of every batch, per epoch.
    pub batch_losses: Vec<Vec<f64>>,
}

fn log_report(log: &mut TrainingLog, epoch: usize, split: &str, report: &MetricsReport) {
    let a = &report.aggregate;
    let entries = [
        ("angular_loss", a.angular_loss),
        ("rmse", a.rmse),
        ("bce", a.bce),
        ("balanced_accuracy", a.balanced_accuracy),
    ];
    for (name, v) in entries {
        if let Some(v) = v {
            log.push(epoch, split, report.task, name, v);
        }
    }
}

/// Trains on in-memory splits.
pub fn train_on(
    model: &ModelConfig,
    config: &TrainConfig,
    train: &[PointPatch],
    val: &[PointPatch],
    execution: Execution,
) -> Result<TrainOutcome> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument("training and validation splits must be nonempty".into()));
    }
    for p in train.iter().chain(val) {
        check_labels(model.task, p)?;
    }
    let mut trainer = Trainer::<f32>::new(model.clone(), config.clone())?.with_execution(execution);
    let options = EvalOptions::default();
    let mut log = TrainingLog::default();
    let mut batch_losses = Vec::with_capacity(config.epochs);
    let mut best = trainer.checkpoint(0);
    let mut best_score = f64::NEG_INFINITY;
    for epoch in 1..=config.epochs {
        let losses = trainer.run_epoch(train, epoch)?;
        log.push(epoch, "train", model.task, "loss", losses.iter().sum::<f64>() / losses.len() as f64);
        batch_losses.push(losses);
        let report = trainer.evaluate(val, &options)?;
        log_report(&mut log, epoch, "val", &report);
        let score = report.selection_score();
        if score > best_score {
            best_score = score;
            best = trainer.checkpoint(epoch);
        }
    }
    Ok(TrainOutcome { best, last: trainer.checkpoint(config.epochs), log, batch_losses })
}

/// Trains on the train/val splits of a data directory.
pub fn train(
    model: &ModelConfig,
    config: &TrainConfig,
    data_dir: impl AsRef<Path>,
    execution: Execution,
) -> Result<TrainOutcome> {
    let dir = data_dir.as_ref();
    let train = load_split(dir, Split::Train)?;
    let val = load_split(dir, Split::Val)?;
    train_on(model, config, &train, &val, execution)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::shapes::{generate_patch, ShapeKind, ShapeSpec};
    use crate::network::Arch;

    fn tiny_model(task: Task) -> ModelConfig {
        ModelConfig {
            arch: Arch::Ga,
            task,
            k: 4,
            widths: vec![8],
            semantic_width: 8,
            global_width: 8,
            head_widths: vec![8],
            ..ModelConfig::default()
        }
    }

    fn wedges(n: usize) -> Vec<PointPatch> {
        let spec = ShapeSpec { kind: ShapeKind::Wedge { dihedral: 1.5 }, spacing: 0.05, n_points: 32 };
        (0..n).map(|i| generate_patch(&spec, i as u64).unwrap()).collect()
    }

    #[test]
    fn seeds_are_stream_separated() {
        assert_ne!(stream_seed(1, 1, 0), stream_seed(1, 2, 0));
        assert_ne!(augmentation_seed(0, 1, 2), augmentation_seed(0, 2, 1));
        let o = epoch_order(3, 10, 1);
        let mut s = o.clone();
        s.sort_unstable();
        assert_eq!(s, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn csv_round_trip() {
        let mut log = TrainingLog::default();
        log.push(1, "train", Task::Sharp, "loss", 0.125);
        log.push(1, "val", Task::Sharp, "balanced_accuracy", 0.1 + 0.2);
        let text = log.to_csv();
        assert!(text.starts_with(LOG_HEADER));
        assert_eq!(TrainingLog::parse_csv(&text).unwrap(), log);
    }

    #[test]
    fn sequential_and_parallel_steps_agree() {
        let data = wedges(4);
        let cfg = TrainConfig { batch_size: 4, ..TrainConfig::default() };
        let mut a = Trainer::<f32>::new(tiny_model(Task::Normals), cfg.clone()).unwrap().with_execution(Execution::Sequential);
        let mut b = Trainer::<f32>::new(tiny_model(Task::Normals), cfg).unwrap().with_execution(Execution::Parallel);
        assert_eq!(a.step(&data).unwrap(), b.step(&data).unwrap());
        assert_eq!(a.weights(), b.weights());
    }

    #[test]
    fn one_epoch_logs_one_row_per_metric() {
        let data = wedges(8);
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
        let out = train_on(&tiny_model(Task::Sharp), &cfg, &data[..6], &data[6..], Execution::Sequential).unwrap();
        assert_eq!(out.log.epochs(), 1);
        assert_eq!(out.batch_losses[0].len(), 1);
        assert_eq!(out.best.epoch, 1);
    }

    #[test]
    fn missing_labels_abort_training() {
        let mut data = wedges(3);
        data[1].normals = None;
        let err = train_on(&tiny_model(Task::Normals), &TrainConfig::default(), &data[..2], &data[2..], Execution::Sequential);
        assert!(matches!(err, Err(Error::Mismatch(_))));
    }
}
