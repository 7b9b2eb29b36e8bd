use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::shapes::ShapeSpec;
use crate::error::{Error, Result};
use crate::geom::{self, Rotation, Vec3};
use crate::tensor::Tensor;

/// Provenance of a patch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchMeta {
    pub kind: String,
    pub seed: u64,
    /// Centroid subtracted during normalization, in source units.
    pub centroid: [f64; 3],
    /// Divisor applied after centering, in source units.
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<ShapeSpec>,
    /// Rotation applied to the canonical shape frame before normalization
    /// (and by any later augmentation).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<Rotation>,
}

/// A fixed-size labeled point set in the unit ball.
#[derive(Clone, Debug, PartialEq)]
pub struct PointPatch {
    pub points: Vec<[f32; 3]>,
    pub normals: Option<Vec<[f32; 3]>>,
    pub sharp: Option<Vec<u8>>,
    pub meta: PatchMeta,
}

impl PointPatch {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points as an `n×3` tensor.
    pub fn points_tensor<T: crate::Real>(&self) -> Tensor<T> {
        let data = self.points.iter().flatten().map(|&v| T::from_f64_lossy(v as f64)).collect();
        Tensor::from_parts(vec![self.points.len(), 3], data)
    }

    pub fn normals_tensor<T: crate::Real>(&self) -> Option<Tensor<T>> {
        self.normals.as_ref().map(|ns| {
            let data = ns.iter().flatten().map(|&v| T::from_f64_lossy(v as f64)).collect();
            Tensor::from_parts(vec![ns.len(), 3], data)
        })
    }

    pub fn sharp_count(&self) -> usize {
        self.sharp.as_ref().map_or(0, |s| s.iter().filter(|&&f| f == 1).count())
    }

    /// Checks label shapes and value ranges.
    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if let Some(ns) = &self.normals {
            if ns.len() != n {
                return Err(Error::InvalidArgument(format!("{} normals for {n} points", ns.len())));
            }
        }
        if let Some(s) = &self.sharp {
            if s.len() != n {
                return Err(Error::InvalidArgument(format!("{} sharp flags for {n} points", s.len())));
            }
            if s.iter().any(|&f| f > 1) {
                return Err(Error::InvalidArgument("sharp flags must be 0 or 1".into()));
            }
        }
        Ok(())
    }

    /// Reorders points and labels so that input point `i` lands at `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        fn scatter<V: Copy>(src: &[V], perm: &[usize]) -> Vec<V> {
            let mut out = src.to_vec();
            for (i, &p) in perm.iter().enumerate() {
                out[p] = src[i];
            }
            out
        }
        PointPatch {
            points: scatter(&self.points, perm),
            normals: self.normals.as_ref().map(|v| scatter(v, perm)),
            sharp: self.sharp.as_ref().map(|v| scatter(v, perm)),
            meta: self.meta.clone(),
        }
    }
}

/// Centers points on their centroid and scales them into the unit ball.
///
/// Returns the normalized points, the centroid, and the scale (the largest
/// distance to the centroid, or 1 when every point coincides).
pub fn normalize_patch(points: &[Vec3]) -> (Vec<Vec3>, Vec3, f64) {
    if points.is_empty() {
        return (Vec::new(), [0.0; 3], 1.0);
    }
    let n = points.len() as f64;
    let sum = points.iter().fold([0.0; 3], |acc, &p| geom::add(acc, p));
    let centroid = geom::scale(sum, 1.0 / n);
    let centered: Vec<Vec3> = points.iter().map(|&p| geom::sub(p, centroid)).collect();
    let radius = centered.iter().map(|&p| geom::norm(p)).fold(0.0, f64::max);
    let scale = if radius > 0.0 { radius } else { 1.0 };
    let out = centered.into_iter().map(|p| geom::scale(p, 1.0 / scale)).collect();
    (out, centroid, scale)
}

/// Rotates points and normals by `rotation`; sharp flags are unchanged.
pub fn rotate_patch(patch: &PointPatch, rotation: &Rotation) -> PointPatch {
    let rot = |v: &[f32; 3]| {
        let r = rotation.apply([v[0] as f64, v[1] as f64, v[2] as f64]);
        [r[0] as f32, r[1] as f32, r[2] as f32]
    };
    let mut meta = patch.meta.clone();
    meta.rotation = Some(match meta.rotation {
        Some(prev) => rotation.compose(&prev),
        None => *rotation,
    });
    PointPatch {
        points: patch.points.iter().map(rot).collect(),
        normals: patch.normals.as_ref().map(|ns| ns.iter().map(rot).collect()),
        sharp: patch.sharp.clone(),
        meta,
    }
}

/// Applies a uniformly random rotation drawn from `seed`.
pub fn augment_rotate(patch: &PointPatch, seed: u64) -> PointPatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rotate_patch(patch, &Rotation::random(&mut rng))
}

pub(crate) fn to_f32(v: Vec3) -> [f32; 3] {
    [v[0] as f32, v[1] as f32, v[2] as f32]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> PatchMeta {
        PatchMeta { kind: "test".into(), seed: 0, centroid: [0.0; 3], scale: 1.0, shape: None, rotation: None }
    }

    #[test]
    fn normalize_examples() {
        let (p, c, s) = normalize_patch(&[[1.0, 1.0, 1.0], [3.0, 1.0, 1.0]]);
        assert_eq!(c, [2.0, 1.0, 1.0]);
        assert_eq!(s, 1.0);
        assert_eq!(p, vec![[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);

        let (p, c, s) = normalize_patch(&[[4.0, -2.0, 7.0]]);
        assert_eq!((p, c, s), (vec![[0.0; 3]], [4.0, -2.0, 7.0], 1.0));

        let unit = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, -0.5, 0.0]];
        let (p, c, s) = normalize_patch(&unit);
        assert_eq!((p, c, s), (unit.to_vec(), [0.0; 3], 1.0));
    }

    #[test]
    fn identity_rotation_leaves_patch_unchanged() {
        let patch = PointPatch {
            points: vec![[0.1, 0.2, 0.3], [-0.5, 0.0, 0.25]],
            normals: Some(vec![[0.0, 0.0, 1.0], [0.6, 0.8, 0.0]]),
            sharp: Some(vec![0, 1]),
            meta: meta(),
        };
        let r = rotate_patch(&patch, &Rotation::identity());
        assert_eq!(r.points, patch.points);
        assert_eq!(r.normals, patch.normals);
        assert_eq!(r.sharp, patch.sharp);
    }

    #[test]
    fn permutation_scatters_labels_with_points() {
        let patch = PointPatch {
            points: vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
            normals: None,
            sharp: Some(vec![1, 0, 0]),
            meta: meta(),
        };
        let p = patch.permuted(&[2, 0, 1]);
        assert_eq!(p.points[2], [0.0; 3]);
        assert_eq!(p.sharp, Some(vec![0, 0, 1]));
    }
}
