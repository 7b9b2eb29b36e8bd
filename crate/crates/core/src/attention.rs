//! Geometric Attention: proximity, semantic features, scaled dot-product
//! attention, their fusion, and EdgeConv over the resulting graph.

use std::sync::Arc;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::knn::NeighborGraph;
use crate::mlp::BoundMlp;
use crate::real::Real;
use crate::tensor::Tensor;

pub use crate::autodiff::proximity_matrix_value as proximity_matrix;

/// Per-layer attention matrices kept for inspection.
#[derive(Clone, Debug)]
pub struct AttentionState<T> {
    pub layer_index: usize,
    /// Negative pairwise distances between the layer's input feature rows.
    pub pm: Tensor<T>,
    /// Semantic attention scores before any softmax.
    pub sa: Tensor<T>,
    /// Fused row-stochastic matrix.
    pub ga: Tensor<T>,
}

/// `f′ = normalize(g_φ(concat(x, f_prev)))`; the first layer passes no
/// previous semantic features.
pub fn semantic_update<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    f_prev: Option<Var>,
    params: &BoundMlp,
    slope: T,
    eps: T,
) -> Result<Var> {
    let input = match f_prev {
        Some(f) => g.concat_cols(&[x, f])?,
        None => x,
    };
    let raw = params.apply(g, input, slope)?;
    g.l2_normalize_rows(raw, eps)
}

/// `SA_ij = ⟨q_i, k_j⟩ / √t` with `q = g_τ1(f)` and `k = g_τ2(f)`.
pub fn semantic_attention<T: Real>(
    g: &mut Graph<T>,
    f: Var,
    query: &BoundMlp,
    key: &BoundMlp,
    t: T,
    slope: T,
) -> Result<Var> {
    if !(t > T::zero()) {
        return Err(Error::InvalidArgument(format!("attention scale t = {t} must be positive")));
    }
    let q = query.apply(g, f, slope)?;
    let k = key.apply(g, f, slope)?;
    let dots = g.matmul_nt(q, k)?;
    g.scale(dots, T::one() / t.sqrt())
}

/// `GA = softmax(softmax(SA) ⊗ softmax(PM))`, every softmax row-wise.
pub fn geometric_attention<T: Real>(g: &mut Graph<T>, sa: Var, pm: Var) -> Result<Var> {
    if g.shape(sa) != g.shape(pm) {
        return Err(Error::dim(
            "geometric_attention",
            format!("{:?} vs {:?}", g.shape(sa), g.shape(pm)),
        ));
    }
    let s = g.softmax_rows(sa)?;
    let p = g.softmax_rows(pm)?;
    let prod = g.mul(s, p)?;
    g.softmax_rows(prod)
}

/// Neighbor-selection scores with the same per-row ordering as GA.
///
/// Both the outer softmax and the row normalizers of the inner softmaxes are
/// strictly monotone per row, so ranking by `SA_ij + PM_ij` (the log of the
/// unnormalized product) selects the same neighbors without the loss of
/// resolution that the nearly-uniform outer softmax suffers in single
/// precision.
pub fn fused_scores<T: Real>(sa: &Tensor<T>, pm: &Tensor<T>) -> Result<Tensor<T>> {
    if sa.shape() != pm.shape() {
        return Err(Error::dim("fused_scores", format!("{:?} vs {:?}", sa.shape(), pm.shape())));
    }
    let data = sa.data().iter().zip(pm.data()).map(|(&a, &b)| a + b).collect();
    Tensor::new(sa.shape().to_vec(), data)
}

/// `x′_i = max_j h_θ(concat(x_i, x_j − x_i))` over the graph's neighbors.
///
/// With `weights` (shaped `[n·k, 1]`, see [`Graph::neighbor_weights`]) each
/// edge response is scaled before the max.
pub fn edge_conv<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    graph: &Arc<NeighborGraph>,
    params: &BoundMlp,
    slope: T,
    weights: Option<Var>,
) -> Result<Var> {
    let edges = g.edge_features(x, graph)?;
    let mut h = params.apply(g, edges, slope)?;
    if let Some(w) = weights {
        h = g.mul_col(h, w)?;
    }
    g.neighborhood_max(h, graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{Affine, LayerParams, Output};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    fn identity(n: usize) -> Tensor<f64> {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data_mut()[i * n + i] = 1.0;
        }
        t
    }

    fn linear_params(name: &str, weight: Tensor<f64>) -> LayerParams<f64> {
        let out = weight.shape()[1];
        LayerParams {
            name: name.into(),
            layers: vec![Affine { weight, bias: Tensor::zeros(&[out]) }],
            output: Output::Linear,
        }
    }

    #[test]
    fn proximity_degenerate_cases() {
        let same = m(&[vec![0.3, 0.1], vec![0.3, 0.1], vec![0.3, 0.1]]);
        assert!(proximity_matrix(&same).data().iter().all(|&v| v == 0.0));
        assert_eq!(proximity_matrix(&m(&[vec![1.0, 2.0, 3.0]])).data(), &[0.0]);
    }

    #[test]
    fn semantic_update_normalizes_and_handles_zero_rows() {
        // A single linear layer copying the first two coordinates.
        let mut w = Tensor::zeros(&[3, 4]);
        w.data_mut()[0] = 1.0;
        w.data_mut()[5] = 1.0;
        let p = linear_params("phi", w);
        let mut g = Graph::new();
        let bound = p.bind(&mut g, false);
        let x = g.constant(m(&[vec![3.0, 4.0, 9.0], vec![0.0, 0.0, 1.0], vec![3.0, 4.0, 9.0]]));
        let f = semantic_update(&mut g, x, None, &bound, 0.01, 1e-12).unwrap();
        let v = g.value(f);
        assert_eq!(v.row(0), &[0.6, 0.8, 0.0, 0.0]);
        assert_eq!(v.row(1), &[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(v.row(0), v.row(2));
    }

    #[test]
    fn semantic_update_concatenates_previous_features() {
        let p = LayerParams::<f64>::init("phi", &[5, 8, 4], Output::Activated, &mut ChaCha8Rng::seed_from_u64(1));
        let mut g = Graph::new();
        let bound = p.bind(&mut g, false);
        let x = g.constant(Tensor::filled(&[3, 3], 0.5));
        let f = g.constant(Tensor::filled(&[3, 2], 0.1));
        assert!(semantic_update(&mut g, x, Some(f), &bound, 0.01, 1e-12).is_ok());
        assert!(matches!(
            semantic_update(&mut g, x, None, &bound, 0.01, 1e-12),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn semantic_attention_unit_basis_gives_one_eighth() {
        let mut f = Tensor::zeros(&[2, 64]);
        f.data_mut()[0] = 1.0;
        f.data_mut()[64] = 1.0;
        let q = linear_params("q", identity(64));
        let k = linear_params("k", identity(64));
        let mut g = Graph::new();
        let (qb, kb) = (q.bind(&mut g, false), k.bind(&mut g, false));
        let fv = g.constant(f);
        let sa = semantic_attention(&mut g, fv, &qb, &kb, 64.0, 0.01).unwrap();
        assert!(g.value(sa).data().iter().all(|&v| (v - 0.125).abs() < 1e-15));

        let zero = linear_params("q0", Tensor::zeros(&[64, 64]));
        let zb = zero.bind(&mut g, false);
        let sa0 = semantic_attention(&mut g, fv, &zb, &kb, 64.0, 0.01).unwrap();
        assert!(g.value(sa0).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn semantic_attention_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = LayerParams::<f64>::init("q", &[16, 12, 16], Output::Linear, &mut rng);
        let k = LayerParams::<f64>::init("k", &[16, 12, 16], Output::Linear, &mut rng);
        let n = 9;
        let f = Tensor::new(vec![n, 16], (0..n * 16).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let mut g = Graph::new();
        let (qb, kb) = (q.bind(&mut g, false), k.bind(&mut g, false));
        let fv = g.constant(f);
        let sa = semantic_attention(&mut g, fv, &qb, &kb, 16.0, 0.01).unwrap();
        let qv = qb.apply(&mut g, fv, 0.01).unwrap();
        let kv = kb.apply(&mut g, fv, 0.01).unwrap();
        let (qt, kt) = (g.value(qv).clone(), g.value(kv).clone());
        for i in 0..n {
            for j in 0..n {
                let mut dot = 0.0;
                for c in 0..16 {
                    dot += qt.at(i, c) * kt.at(j, c);
                }
                assert!((g.value(sa).at(i, j) - dot / 4.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn geometric_attention_examples() {
        let mut g = Graph::new();
        let zero = g.constant(Tensor::zeros(&[2, 2]));
        let ga = geometric_attention(&mut g, zero, zero).unwrap();
        assert!(g.value(ga).data().iter().all(|&v: &f64| (v - 0.5).abs() < 1e-15));

        let pm = g.constant(m(&[vec![0.0, -1.0], vec![-1.0, 0.0]]));
        let ga = geometric_attention(&mut g, zero, pm).unwrap();
        // softmax([0, -1]) = [e/(e+1), 1/(e+1)], halved by the uniform SA row,
        // then a final softmax.
        let e = std::f64::consts::E;
        let (a, b) = (0.5 * e / (e + 1.0), 0.5 / (e + 1.0));
        let expect0 = a.exp() / (a.exp() + b.exp());
        assert!((g.value(ga).at(0, 0) - expect0).abs() < 1e-12);
        assert!((expect0 - 0.5575).abs() < 1e-4);

        let bad = g.constant(Tensor::zeros(&[3, 3]));
        assert!(geometric_attention(&mut g, zero, bad).is_err());
    }

    #[test]
    fn edge_conv_constant_neighborhood_maps_bias() {
        // Every point identical, so every edge feature is (x, 0).
        let mut p = LayerParams::<f64>::init("h", &[4, 3, 3], Output::Activated, &mut ChaCha8Rng::seed_from_u64(2));
        for l in &mut p.layers {
            l.weight.data_mut().iter_mut().for_each(|w| *w = 0.0);
        }
        p.layers[1].bias = Tensor::new(vec![3], vec![0.5, -2.0, 0.0]).unwrap();
        let graph = Arc::new(NeighborGraph::new(3, 2, vec![1, 2, 0, 2, 0, 1]).unwrap());
        let mut g = Graph::new();
        let h = p.bind(&mut g, false);
        let x = g.constant(Tensor::filled(&[3, 2], 0.7));
        let out = edge_conv(&mut g, x, &graph, &h, 0.01, None).unwrap();
        for i in 0..3 {
            assert_eq!(g.value(out).row(i), &[0.5, -0.02, 0.0]);
        }
    }

    #[test]
    fn edge_conv_single_edge_by_hand() {
        // h(e) = leaky(e·W) with W mapping (x_i, x_j − x_i) in 1-D to 2 outputs.
        let w = m(&[vec![1.0, -1.0], vec![2.0, 0.5]]);
        let p = LayerParams { name: "h".into(), layers: vec![Affine { weight: w, bias: Tensor::zeros(&[2]) }], output: Output::Activated };
        let graph = Arc::new(NeighborGraph::new(2, 1, vec![1, 0]).unwrap());
        let mut g = Graph::new();
        let h = p.bind(&mut g, false);
        let x = g.constant(m(&[vec![1.0], vec![3.0]]));
        let out = edge_conv(&mut g, x, &graph, &h, 0.1, None).unwrap();
        // point 0: e = (1, 2) -> (1 + 4, -1 + 1) = (5, 0)
        // point 1: e = (3, -2) -> (3 - 4, -3 - 1) = (-1, -4) -> leaky (-0.1, -0.4)
        let v = g.value(out).data();
        let expect = [5.0, 0.0, -0.1, -0.4];
        for (a, b) in v.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
