use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use geoattn::attention::{fused_scores, geometric_attention};
use geoattn::autodiff::{proximity_matrix_value, softmax_rows_value, Graph};
use geoattn::data::{augment_rotate, decode_patch, encode_patch, generate_patch, normalize_patch, split_dataset, ShapeKind, ShapeSpec};
use geoattn::geom::{determinant, Rotation};
use geoattn::knn::knn_from_scores;
use geoattn::training::{angular_loss, balanced_accuracy, bce_loss};
use geoattn::Tensor;

fn matrix(n: usize, m: usize, range: f64) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(-range..range, n * m).prop_map(move |d| Tensor::new(vec![n, m], d).unwrap())
}

fn square_pair() -> impl Strategy<Value = (Tensor<f64>, Tensor<f64>)> {
    (2usize..24).prop_flat_map(|n| (matrix(n, n, 20.0), matrix(n, 3, 1.0)))
}

fn unit_rows(n: usize) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), n)
        .prop_filter("nonzero rows", |v| v.iter().all(|&(a, b, c)| a * a + b * b + c * c > 1e-3))
        .prop_map(move |v| {
            let data = v
                .into_iter()
                .flat_map(|(a, b, c)| {
                    let r = (a * a + b * b + c * c).sqrt();
                    [a / r, b / r, c / r]
                })
                .collect();
            Tensor::new(vec![n, 3], data).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(x in (1usize..10, 1usize..30).prop_flat_map(|(n, m)| matrix(n, m, 500.0))) {
        let s = softmax_rows_value(&x).unwrap();
        for i in 0..s.rows() {
            prop_assert!(s.row(i).iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((s.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn proximity_is_symmetric_with_zero_diagonal((_, x) in square_pair()) {
        let pm = proximity_matrix_value(&x);
        let n = x.rows();
        for i in 0..n {
            prop_assert_eq!(pm.at(i, i), 0.0);
            for j in 0..n {
                prop_assert_eq!(pm.at(i, j), pm.at(j, i));
                prop_assert!(pm.at(i, j) <= 0.0);
            }
        }
    }

    #[test]
    fn fused_scores_rank_like_geometric_attention((sa, x) in square_pair()) {
        let pm = proximity_matrix_value(&x);
        let mut g = Graph::new();
        let (s, p) = (g.constant(sa.clone()), g.constant(pm.clone()));
        let ga = geometric_attention(&mut g, s, p).unwrap();
        let ga = g.value(ga).clone();
        let fused = fused_scores(&sa, &pm).unwrap();
        let n = sa.rows();
        for i in 0..n {
            for a in 0..n {
                for b in 0..n {
                    // Strict order in the fused scores never reverses in GA.
                    if fused.at(i, a) > fused.at(i, b) + 1e-9 {
                        prop_assert!(ga.at(i, a) >= ga.at(i, b));
                    }
                }
            }
        }
    }

    #[test]
    fn knn_lists_are_distinct_and_exclude_self((_, x) in square_pair(), k in 1usize..8) {
        let n = x.rows();
        prop_assume!(k < n);
        let graph = knn_from_scores(&proximity_matrix_value(&x), k).unwrap();
        for i in 0..n {
            let nb = graph.neighbors(i);
            prop_assert_eq!(nb.len(), k);
            prop_assert!(!nb.contains(&(i as u32)));
            let mut sorted = nb.to_vec();
            sorted.sort_unstable();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), k);
        }
    }

    #[test]
    fn angular_loss_ignores_sign_and_stays_in_bounds(
        (pred, gt, flips) in (1usize..40).prop_flat_map(|n| (unit_rows(n), unit_rows(n), prop::collection::vec(any::<bool>(), n)))
    ) {
        let base = angular_loss(&pred, &gt).unwrap();
        prop_assert!((0.0..=1.0).contains(&base));
        let mut flipped = pred.clone();
        for (row, &f) in flipped.data_mut().chunks_mut(3).zip(&flips) {
            if f {
                row.iter_mut().for_each(|v| *v = -*v);
            }
        }
        prop_assert_eq!(angular_loss(&flipped, &gt).unwrap(), base);
    }

    #[test]
    fn bce_is_nonnegative_and_balanced_accuracy_bounded(
        pairs in prop::collection::vec((-50.0f64..50.0, 0u8..2), 1..64)
    ) {
        let (logits, labels): (Vec<f64>, Vec<u8>) = pairs.into_iter().unzip();
        prop_assert!(bce_loss(&logits, &labels).unwrap() >= 0.0);
        let probs: Vec<f64> = logits.iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect();
        let ba = balanced_accuracy(&probs, &labels, 0.5).unwrap();
        prop_assert!((0.0..=1.0).contains(&ba));
    }

    #[test]
    fn split_is_an_exact_partition(groups in 1usize..60, seed in any::<u64>()) {
        let ids: Vec<usize> = (0..6 * groups).collect();
        let (train, val, test) = split_dataset(&ids, seed).unwrap();
        prop_assert_eq!((train.len(), val.len(), test.len()), (4 * groups, groups, groups));
        let mut all: Vec<usize> = train.into_iter().chain(val).chain(test).collect();
        all.sort_unstable();
        prop_assert_eq!(all, ids);
    }

    #[test]
    fn rotations_are_proper_isometries(seed in any::<u64>(), v in (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = Rotation::random(&mut rng);
        prop_assert!((determinant(&r.matrix()) - 1.0).abs() < 1e-9);
        let p = [v.0, v.1, v.2];
        let q = r.apply(p);
        let n = |a: [f64; 3]| (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
        prop_assert!((n(p) - n(q)).abs() < 1e-12);
    }

    #[test]
    fn normalization_lands_in_the_unit_ball(pts in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0, -50.0f64..50.0), 2..50)) {
        let pts: Vec<[f64; 3]> = pts.into_iter().map(|(a, b, c)| [a, b, c]).collect();
        let (out, _, scale) = normalize_patch(&pts);
        prop_assume!(scale > 1e-9);
        let norms: Vec<f64> = out.iter().map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()).collect();
        prop_assert!((norms.iter().cloned().fold(0.0, f64::max) - 1.0).abs() < 1e-9);
        for c in 0..3 {
            prop_assert!((out.iter().map(|p| p[c]).sum::<f64>() / out.len() as f64).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn patches_round_trip_and_rotation_preserves_geometry(seed in 0u64..10_000, dihedral in 0.5f64..3.0) {
        let spec = ShapeSpec { kind: ShapeKind::Wedge { dihedral }, spacing: 0.05, n_points: 96 };
        let patch = generate_patch(&spec, seed).unwrap();
        prop_assert_eq!(&decode_patch(&encode_patch(&patch).unwrap()).unwrap(), &patch);

        let rotated = augment_rotate(&patch, seed);
        prop_assert_eq!(&rotated.sharp, &patch.sharp);
        let d = |p: &[f32; 3], q: &[f32; 3]| (0..3).map(|c| (p[c] - q[c]) as f64).map(|v| v * v).sum::<f64>().sqrt();
        for i in (0..patch.len()).step_by(7) {
            for j in (0..patch.len()).step_by(5) {
                let before = d(&patch.points[i], &patch.points[j]);
                let after = d(&rotated.points[i], &rotated.points[j]);
                prop_assert!((before - after).abs() < 1e-5);
            }
        }
        for n in rotated.normals.as_ref().unwrap() {
            let len = (n.iter().map(|&v| (v as f64).powi(2)).sum::<f64>()).sqrt();
            prop_assert!((len - 1.0).abs() < 1e-5);
        }
    }
}
