use std::sync::Arc;

use crate::attention::{self, AttentionState};
use crate::autodiff::{proximity_matrix_value, Graph, Var};
use crate::error::{Error, Result};
use crate::knn::{knn_from_scores, NeighborGraph};
use crate::network::{Arch, BoundWeights, ModelConfig, Task, Weights, MAX_INPUT_NORM, NORMALIZE_EPS};
use crate::real::Real;
use crate::tensor::Tensor;

/// Result of building the network on a graph.
#[derive(Debug)]
pub struct ForwardOutput<T> {
    /// Unit normals `[n, 3]` or logits `[n, 1]`.
    pub output: Var,
    /// Neighbor graph of each EdgeConv layer.
    pub graphs: Vec<Arc<NeighborGraph>>,
    /// Attention matrices per layer when requested (GA networks only).
    pub attention: Vec<AttentionState<T>>,
}

/// Per-point network outputs.
#[derive(Clone, Debug)]
pub struct PointPredictions<T> {
    pub normals: Option<Tensor<T>>,
    pub sharp_logits: Option<Vec<T>>,
    pub attention_trace: Vec<AttentionState<T>>,
    pub graphs: Vec<Arc<NeighborGraph>>,
}

fn check_input<T: Real>(points: &Tensor<T>) -> Result<()> {
    if points.rank() != 2 || points.cols() != 3 {
        return Err(Error::dim("forward", format!("points must be n×3, got {:?}", points.shape())));
    }
    for i in 0..points.rows() {
        let r = points.row(i);
        let norm = r.iter().map(|&v| v.to_f64_lossy().powi(2)).sum::<f64>().sqrt();
        if !(norm <= MAX_INPUT_NORM) {
            return Err(Error::Precondition(format!(
                "point {i} has norm {norm:.6}; input must be normalized to the unit ball"
            )));
        }
    }
    Ok(())
}

/// Builds the network for `points` on `g` using already bound weights.
pub fn forward_graph<T: Real>(
    g: &mut Graph<T>,
    weights: &BoundWeights,
    points: &Tensor<T>,
    config: &ModelConfig,
    keep_attention: bool,
) -> Result<ForwardOutput<T>> {
    forward_graph_with(g, weights, points, config, keep_attention, None)
}

/// [`forward_graph`] with every layer's neighbor graph supplied instead of
/// selected. The network is differentiable wherever the selection does not
/// change, and there it agrees with this frozen form.
pub fn forward_graph_fixed<T: Real>(
    g: &mut Graph<T>,
    weights: &BoundWeights,
    points: &Tensor<T>,
    config: &ModelConfig,
    graphs: &[Arc<NeighborGraph>],
) -> Result<ForwardOutput<T>> {
    if graphs.len() != config.n_layers() {
        return Err(Error::dim("forward", format!("{} graphs for {} layers", graphs.len(), config.n_layers())));
    }
    forward_graph_with(g, weights, points, config, false, Some(graphs))
}

fn forward_graph_with<T: Real>(
    g: &mut Graph<T>,
    weights: &BoundWeights,
    points: &Tensor<T>,
    config: &ModelConfig,
    keep_attention: bool,
    fixed: Option<&[Arc<NeighborGraph>]>,
) -> Result<ForwardOutput<T>> {
    config.validate()?;
    check_input(points)?;
    let n = points.rows();
    let slope = T::from_f64_lossy(config.leaky_slope);
    let eps = T::from_f64_lossy(NORMALIZE_EPS);
    let t = T::from_f64_lossy(config.semantic_width as f64);

    let coords = g.constant(points.clone());
    let mut x = coords;
    let mut f_prev: Option<Var> = None;
    let mut layer_outputs = Vec::with_capacity(config.n_layers());
    let mut graphs = Vec::with_capacity(config.n_layers());
    let mut attention = Vec::new();

    for l in 0..config.n_layers() {
        let select = |scores: &Tensor<T>| -> Result<Arc<NeighborGraph>> {
            match fixed {
                Some(gs) if gs[l].n() == n && gs[l].k() == config.k => Ok(gs[l].clone()),
                Some(_) => Err(Error::dim("forward", format!("fixed graph of layer {l} does not fit"))),
                None => Ok(Arc::new(knn_from_scores(scores, config.k)?)),
            }
        };
        let (graph, edge_weights) = match config.arch {
            Arch::Dgcnn => {
                let graph = match fixed {
                    Some(_) => select(g.value(x))?,
                    None => select(&proximity_matrix_value(g.value(x)))?,
                };
                (graph, None)
            }
            Arch::Ga => {
                let f = attention::semantic_update(g, x, f_prev, weights.mlp(&format!("semantic{l}"))?, slope, eps)?;
                let sa = attention::semantic_attention(
                    g,
                    f,
                    weights.mlp(&format!("query{l}"))?,
                    weights.mlp(&format!("key{l}"))?,
                    t,
                    slope,
                )?;
                let pm = g.proximity_matrix(x)?;
                let ga = attention::geometric_attention(g, sa, pm)?;
                let scores = attention::fused_scores(g.value(sa), g.value(pm))?;
                let graph = select(&scores)?;
                let w = if config.ga_weighted_aggregation { Some(g.neighbor_weights(ga, &graph)?) } else { None };
                if keep_attention {
                    attention.push(AttentionState {
                        layer_index: l,
                        pm: g.value(pm).clone(),
                        sa: g.value(sa).clone(),
                        ga: g.value(ga).clone(),
                    });
                }
                f_prev = Some(f);
                (graph, w)
            }
        };
        x = attention::edge_conv(g, x, &graph, weights.mlp(&format!("edge{l}"))?, slope, edge_weights)?;
        layer_outputs.push(x);
        graphs.push(graph);
    }

    let per_point = if layer_outputs.len() == 1 { layer_outputs[0] } else { g.concat_cols(&layer_outputs)? };
    let global = weights.mlp("global")?.apply(g, per_point, slope)?;
    let pooled = g.max_over_rows(global)?;
    let broadcast = g.broadcast_rows(pooled, n)?;
    let features = g.concat_cols(&[per_point, broadcast])?;
    let mut output = weights.mlp("head")?.apply(g, features, slope)?;
    if config.task == Task::Normals {
        output = g.l2_normalize_rows(output, eps)?;
    }
    Ok(ForwardOutput { output, graphs, attention })
}

/// Evaluates the network without recording gradients.
pub fn forward<T: Real>(
    points: &Tensor<T>,
    weights: &Weights<T>,
    config: &ModelConfig,
    keep_attention: bool,
) -> Result<PointPredictions<T>> {
    let mut g = Graph::new();
    let bound = weights.bind(&mut g, false);
    let out = forward_graph(&mut g, &bound, points, config, keep_attention)?;
    let value = g.value(out.output).clone();
    let (normals, sharp_logits) = match config.task {
        Task::Normals => (Some(value), None),
        Task::Sharp => (None, Some(value.into_data())),
    };
    Ok(PointPredictions { normals, sharp_logits, attention_trace: out.attention, graphs: out.graphs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_weights;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small(arch: Arch, task: Task) -> ModelConfig {
        ModelConfig {
            arch,
            task,
            k: 4,
            widths: vec![8, 8],
            semantic_width: 8,
            global_width: 16,
            head_widths: vec![16],
            ..ModelConfig::default()
        }
    }

    fn ball(n: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<[f64; 3]> = (0..n)
            .map(|_| loop {
                let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                if p.iter().map(|v: &f64| v * v).sum::<f64>() <= 1.0 {
                    break p;
                }
            })
            .collect();
        Tensor::from_points(&pts).unwrap()
    }

    #[test]
    fn smallest_patch_runs_and_normals_are_unit() {
        for arch in [Arch::Dgcnn, Arch::Ga] {
            let cfg = small(arch, Task::Normals);
            let w = init_weights::<f64>(&cfg);
            let p = forward(&ball(cfg.k + 1, 1), &w, &cfg, true).unwrap();
            let ns = p.normals.unwrap();
            assert!(ns.is_finite());
            for i in 0..ns.rows() {
                let len: f64 = ns.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((len - 1.0).abs() < 1e-5);
            }
            assert_eq!(p.attention_trace.len(), if arch == Arch::Ga { 2 } else { 0 });
        }
    }

    #[test]
    fn unnormalized_input_is_rejected() {
        let cfg = small(Arch::Dgcnn, Task::Sharp);
        let w = init_weights::<f64>(&cfg);
        let pts = ball(10, 2).map(|v| v * 3.0);
        assert!(matches!(forward(&pts, &w, &cfg, false), Err(Error::Precondition(_))));
    }

    #[test]
    fn zero_attention_weights_give_the_proximity_graph() {
        let ga_cfg = small(Arch::Ga, Task::Sharp);
        let mut w = init_weights::<f64>(&ga_cfg);
        for name in ["query0", "key0", "query1", "key1"] {
            for t in w.get_mut(name).unwrap().tensors_mut() {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let pts = ball(30, 3);
        let ga = forward(&pts, &w, &ga_cfg, false).unwrap();
        let dg_cfg = ModelConfig { arch: Arch::Dgcnn, ..ga_cfg.clone() };
        let mut dw = init_weights::<f64>(&dg_cfg);
        for p in &mut dw.params {
            *p = w.get(&p.name).unwrap().clone();
        }
        let dg = forward(&pts, &dw, &dg_cfg, false).unwrap();
        assert_eq!(ga.graphs, dg.graphs);
        assert_eq!(ga.sharp_logits, dg.sharp_logits);
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = small(Arch::Ga, Task::Normals);
        let w = init_weights::<f32>(&cfg);
        let pts = ball(40, 4).cast::<f32>();
        let a = forward(&pts, &w, &cfg, false).unwrap();
        let b = forward(&pts, &w, &cfg, false).unwrap();
        assert_eq!(a.normals, b.normals);
    }
}
