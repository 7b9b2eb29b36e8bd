//! DGCNN and Geometric Attention segmentation networks.

mod checkpoint;
mod forward;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::mlp::{BoundMlp, LayerParams, Output};
use crate::real::Real;
use crate::tensor::Tensor;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::{forward, forward_graph, forward_graph_fixed, ForwardOutput, PointPredictions};

/// Added to row norms before dividing.
pub const NORMALIZE_EPS: f64 = 1e-12;

/// Largest accepted input point norm.
pub const MAX_INPUT_NORM: f64 = 1.0 + 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Dgcnn,
    Ga,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Normals,
    Sharp,
}

impl Task {
    pub fn out_width(self) -> usize {
        match self {
            Task::Normals => 3,
            Task::Sharp => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Normals => "normals",
            Task::Sharp => "sharp",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    /// Neighbors per point.
    pub k: usize,
    /// Output width of each EdgeConv layer.
    pub widths: Vec<usize>,
    /// Width of the semantic features (Geometric Attention only); also the
    /// attention scale `t`.
    pub semantic_width: usize,
    /// Width of the max-pooled global descriptor.
    pub global_width: usize,
    /// Hidden widths of the per-point head; the output width follows the task.
    pub head_widths: Vec<usize>,
    pub task: Task,
    pub leaky_slope: f64,
    pub seed: u64,
    /// Scales edge responses by renormalized GA weights before the max.
    #[serde(default)]
    pub ga_weighted_aggregation: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Ga,
            k: 20,
            widths: vec![64, 64, 64],
            semantic_width: 64,
            global_width: 256,
            head_widths: vec![256, 128],
            task: Task::Normals,
            leaky_slope: 0.01,
            seed: 0,
            ga_weighted_aggregation: false,
        }
    }
}

impl ModelConfig {
    pub fn n_layers(&self) -> usize {
        self.widths.len()
    }

    /// Width of the concatenated per-layer outputs (input coordinates when
    /// there are no layers).
    pub fn concat_width(&self) -> usize {
        if self.widths.is_empty() {
            3
        } else {
            self.widths.iter().sum()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.widths.is_empty() {
            return bad("at least one EdgeConv layer is required");
        }
        if self.widths.iter().chain(&self.head_widths).any(|&w| w == 0) || self.global_width == 0 {
            return bad("widths must be positive");
        }
        if self.arch == Arch::Ga && self.semantic_width == 0 {
            return bad("semantic width must be positive");
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return bad("leaky slope must lie in (0, 1)");
        }
        Ok(())
    }

    /// MLP names, widths, and output activation in initialization order.
    fn layout(&self) -> Vec<(String, Vec<usize>, Output)> {
        let s = self.semantic_width;
        let mut out = Vec::new();
        let mut f_in = 3;
        for (l, &w) in self.widths.iter().enumerate() {
            out.push((format!("edge{l}"), vec![2 * f_in, w, w], Output::Activated));
            if self.arch == Arch::Ga {
                let sem_in = if l == 0 { 3 } else { f_in + s };
                out.push((format!("semantic{l}"), vec![sem_in, s, s], Output::Activated));
                out.push((format!("query{l}"), vec![s, s, s], Output::Linear));
                out.push((format!("key{l}"), vec![s, s, s], Output::Linear));
            }
            f_in = w;
        }
        let c = self.concat_width();
        out.push(("global".into(), vec![c, self.global_width], Output::Activated));
        let mut head = vec![c + self.global_width];
        head.extend_from_slice(&self.head_widths);
        head.push(self.task.out_width());
        out.push(("head".into(), head, Output::Linear));
        out
    }
}

/// Every MLP of a network, in a fixed order with unique names.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights<T> {
    pub params: Vec<LayerParams<T>>,
}

impl<T: Real> Weights<T> {
    pub fn get(&self, name: &str) -> Option<&LayerParams<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut LayerParams<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(LayerParams::parameter_count).sum()
    }

    pub fn cast<U: Real>(&self) -> Weights<U> {
        Weights { params: self.params.iter().map(LayerParams::cast).collect() }
    }

    /// All tensors in binding order.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.params.iter().flat_map(LayerParams::tensors)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.params.iter_mut().flat_map(LayerParams::tensors_mut)
    }

    /// Registers all parameters on `g`.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundWeights {
        let mlps: Vec<BoundMlp> = self.params.iter().map(|p| p.bind(g, trainable)).collect();
        let index = self.params.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
        BoundWeights { mlps, index }
    }

    /// Binds to leaves already on a graph, in [`Weights::tensors`] order.
    pub fn bind_vars(&self, vars: &[Var]) -> Result<BoundWeights> {
        let expected: usize = self.params.iter().map(|p| 2 * p.layers.len()).sum();
        if vars.len() != expected {
            return Err(Error::dim("bind_vars", format!("{} leaves, expected {expected}", vars.len())));
        }
        let mut rest = vars;
        let mut mlps = Vec::with_capacity(self.params.len());
        for p in &self.params {
            let (mine, tail) = rest.split_at(2 * p.layers.len());
            mlps.push(p.bind_vars(mine)?);
            rest = tail;
        }
        let index = self.params.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
        Ok(BoundWeights { mlps, index })
    }
}

/// Weights registered as leaves of a graph.
#[derive(Clone, Debug)]
pub struct BoundWeights {
    mlps: Vec<BoundMlp>,
    index: HashMap<String, usize>,
}

impl BoundWeights {
    pub fn mlp(&self, name: &str) -> Result<&BoundMlp> {
        self.index
            .get(name)
            .map(|&i| &self.mlps[i])
            .ok_or_else(|| Error::InvalidArgument(format!("weights lack {name}")))
    }

    /// Leaves in the same order as [`Weights::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        self.mlps.iter().flat_map(BoundMlp::vars).collect()
    }
}

/// Fan-in scaled uniform weights and zero biases, deterministic in
/// `config.seed`.
pub fn init_weights<T: Real>(config: &ModelConfig) -> Weights<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = config
        .layout()
        .into_iter()
        .map(|(name, widths, output)| LayerParams::init(name, &widths, output, &mut rng))
        .collect();
    Weights { params }
}

/// Number of scalar parameters of the network described by `config`.
pub fn parameter_count(config: &ModelConfig) -> usize {
    config
        .layout()
        .iter()
        .map(|(_, w, _)| w.windows(2).map(|p| p[0] * p[1] + p[1]).sum::<usize>())
        .sum()
}
