//! Procedural surface patches with analytic normals and crease labels.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::patch::{normalize_patch, to_f32, PatchMeta, PointPatch};
use crate::data::poisson::{poisson_disk, Surface, SurfaceSample};
use crate::error::{Error, Result};
use crate::geom::{Rotation, Vec3};

/// Minimum number of positives a creased patch must carry.
pub const MIN_CREASE_SAMPLES: usize = 8;

const MAX_ATTEMPTS: usize = 32;
const MAX_GROWTH_STEPS: usize = 4;
const GROWTH_FACTOR: f64 = 1.1;

/// Surface family and its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ShapeKind {
    Plane,
    /// Two half-planes meeting at `dihedral` radians along a crease line; a
    /// dihedral of π is flat and carries no crease.
    Wedge { dihedral: f64 },
    Cylinder { radius: f64 },
    /// A geodesic disk on a sphere of `radius`, limited to `cap_angle`
    /// radians from the pole.
    SphereCap { radius: f64, cap_angle: f64 },
}

impl ShapeKind {
    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Plane => "plane",
            ShapeKind::Wedge { .. } => "wedge",
            ShapeKind::Cylinder { .. } => "cylinder",
            ShapeKind::SphereCap { .. } => "sphere-cap",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    #[serde(flatten)]
    pub kind: ShapeKind,
    /// Target Poisson-disk spacing in shape units.
    pub spacing: f64,
    pub n_points: usize,
}

impl ShapeSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.spacing > 0.0) || !self.spacing.is_finite() {
            return bad(format!("spacing {} must be positive", self.spacing));
        }
        if self.n_points < 16 {
            return bad(format!("n_points {} below 16", self.n_points));
        }
        match self.kind {
            ShapeKind::Plane => Ok(()),
            ShapeKind::Wedge { dihedral } if dihedral > 0.0 && dihedral <= PI => Ok(()),
            ShapeKind::Wedge { dihedral } => bad(format!("wedge dihedral {dihedral} outside (0, π]")),
            ShapeKind::Cylinder { radius } if radius > 0.0 => Ok(()),
            ShapeKind::Cylinder { radius } => bad(format!("cylinder radius {radius} must be positive")),
            ShapeKind::SphereCap { radius, cap_angle } if radius > 0.0 && cap_angle > 0.0 && cap_angle <= PI => {
                Ok(())
            }
            ShapeKind::SphereCap { radius, cap_angle } => {
                bad(format!("sphere cap radius {radius} / angle {cap_angle} out of range"))
            }
        }
    }

    fn has_crease(&self) -> bool {
        matches!(self.kind, ShapeKind::Wedge { dihedral } if dihedral < PI)
    }
}

/// Surface families for randomized dataset mixes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeFamily {
    Plane,
    Wedge,
    Cylinder,
    SphereCap,
}

impl ShapeFamily {
    pub fn name(&self) -> &'static str {
        match self {
            ShapeFamily::Plane => "plane",
            ShapeFamily::Wedge => "wedge",
            ShapeFamily::Cylinder => "cylinder",
            ShapeFamily::SphereCap => "sphere-cap",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "plane" => Some(ShapeFamily::Plane),
            "wedge" => Some(ShapeFamily::Wedge),
            "cylinder" => Some(ShapeFamily::Cylinder),
            "sphere-cap" => Some(ShapeFamily::SphereCap),
            _ => None,
        }
    }

    /// Draws shape parameters for a patch of `n_points` at `spacing`.
    /// Wedge dihedrals span acute through obtuse angles up to 2.8 rad;
    /// curvature radii scale with the patch radius.
    pub fn random_spec(&self, n_points: usize, spacing: f64, rng: &mut impl Rng) -> ShapeSpec {
        let patch_radius = (n_points as f64 * spacing * spacing / PI).sqrt();
        let kind = match self {
            ShapeFamily::Plane => ShapeKind::Plane,
            ShapeFamily::Wedge => ShapeKind::Wedge { dihedral: rng.gen_range(0.5..2.8) },
            ShapeFamily::Cylinder => ShapeKind::Cylinder { radius: patch_radius * rng.gen_range(0.6..2.0) },
            ShapeFamily::SphereCap => {
                ShapeKind::SphereCap { radius: patch_radius * rng.gen_range(0.8..2.5), cap_angle: 2.0 }
            }
        };
        ShapeSpec { kind, spacing, n_points }
    }
}

/// Uniform point in a disk of `radius` centered at `center`.
fn disk_point(rng: &mut ChaCha8Rng, radius: f64, center: [f64; 2]) -> [f64; 2] {
    let r = radius * rng.gen::<f64>().sqrt();
    let t = TAU * rng.gen::<f64>();
    [center[0] + r * t.cos(), center[1] + r * t.sin()]
}

struct PlaneSurface {
    radius: f64,
}

impl Surface for PlaneSurface {
    fn area(&self) -> f64 {
        PI * self.radius * self.radius
    }
    fn sample(&self, rng: &mut ChaCha8Rng) -> SurfaceSample {
        let [x, y] = disk_point(rng, self.radius, [0.0, 0.0]);
        SurfaceSample { position: [x, y, 0.0], normal: [0.0, 0.0, 1.0], crease_distance: f64::INFINITY }
    }
}

/// Crease along the x axis; face A spans +y, face B is face A rotated by the
/// dihedral about x. The patch is a disk in the unfolded (u, v) plane, with
/// `v` the signed distance from the crease.
struct WedgeSurface {
    radius: f64,
    offset: f64,
    dihedral: f64,
    creased: bool,
}

impl Surface for WedgeSurface {
    fn area(&self) -> f64 {
        PI * self.radius * self.radius
    }
    fn sample(&self, rng: &mut ChaCha8Rng) -> SurfaceSample {
        let [u, v] = disk_point(rng, self.radius, [0.0, self.offset]);
        let (c, s) = (self.dihedral.cos(), self.dihedral.sin());
        let (position, normal) = if v >= 0.0 {
            ([u, v, 0.0], [0.0, 0.0, 1.0])
        } else {
            let t = -v;
            ([u, t * c, t * s], [0.0, s, -c])
        };
        let crease_distance = if self.creased { v.abs() } else { f64::INFINITY };
        SurfaceSample { position, normal, crease_distance }
    }
}

/// Cylinder about the z axis; the patch is a disk in (arc length, height).
struct CylinderSurface {
    radius: f64,
    patch_radius: f64,
}

impl Surface for CylinderSurface {
    fn area(&self) -> f64 {
        PI * self.patch_radius * self.patch_radius
    }
    fn sample(&self, rng: &mut ChaCha8Rng) -> SurfaceSample {
        let [a, h] = disk_point(rng, self.patch_radius, [0.0, 0.0]);
        let theta = a / self.radius;
        let normal = [theta.cos(), theta.sin(), 0.0];
        SurfaceSample {
            position: [self.radius * normal[0], self.radius * normal[1], h],
            normal,
            crease_distance: f64::INFINITY,
        }
    }
}

/// Geodesic disk around the +z pole of a sphere.
struct CapSurface {
    radius: f64,
    cos_alpha: f64,
}

impl Surface for CapSurface {
    fn area(&self) -> f64 {
        TAU * self.radius * self.radius * (1.0 - self.cos_alpha)
    }
    fn sample(&self, rng: &mut ChaCha8Rng) -> SurfaceSample {
        let z = rng.gen_range(self.cos_alpha..=1.0);
        let phi = TAU * rng.gen::<f64>();
        let rho = (1.0 - z * z).max(0.0).sqrt();
        let normal = [rho * phi.cos(), rho * phi.sin(), z];
        SurfaceSample {
            position: [self.radius * normal[0], self.radius * normal[1], self.radius * normal[2]],
            normal,
            crease_distance: f64::INFINITY,
        }
    }
}

fn build_surface(spec: &ShapeSpec, area: f64, rng: &mut ChaCha8Rng) -> Result<Box<dyn Surface>> {
    let radius = (area / PI).sqrt();
    Ok(match spec.kind {
        ShapeKind::Plane => Box::new(PlaneSurface { radius }),
        ShapeKind::Wedge { dihedral } => {
            let offset = rng.gen_range(-0.5..0.5) * radius;
            Box::new(WedgeSurface { radius, offset, dihedral, creased: dihedral < PI })
        }
        ShapeKind::Cylinder { radius: r } => {
            if radius >= PI * r {
                return Err(Error::Generation(format!(
                    "cylinder of radius {r} cannot hold a patch of radius {radius:.4} without wrapping"
                )));
            }
            Box::new(CylinderSurface { radius: r, patch_radius: radius })
        }
        ShapeKind::SphereCap { radius: r, cap_angle } => {
            let cos_alpha = 1.0 - area / (TAU * r * r);
            if cos_alpha < cap_angle.cos() {
                return Err(Error::Generation(format!(
                    "a cap of {cap_angle} rad on a sphere of radius {r} cannot hold {} points at spacing {}",
                    spec.n_points, spec.spacing
                )));
            }
            Box::new(CapSurface { radius: r, cos_alpha })
        }
    })
}

/// Generates a labeled, normalized, randomly oriented patch. Pure in
/// `(spec, seed)`.
///
/// Positives are the samples within one spacing of the crease. Creased
/// wedges are re-sampled until at least [`MIN_CREASE_SAMPLES`] positives
/// are present.
pub fn generate_patch(spec: &ShapeSpec, seed: u64) -> Result<PointPatch> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base_area = spec.n_points as f64 * spec.spacing * spec.spacing;
    let mut growth_steps = 0;
    for _ in 0..MAX_ATTEMPTS {
        let area = base_area * GROWTH_FACTOR.powi(growth_steps as i32);
        let surface = build_surface(spec, area, &mut rng)?;
        let samples = match poisson_disk(surface.as_ref(), spec.spacing, spec.n_points, &mut rng) {
            Ok(s) => s,
            Err(Error::Generation(_)) if growth_steps < MAX_GROWTH_STEPS => {
                growth_steps += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let sharp: Vec<u8> = samples.iter().map(|s| u8::from(s.crease_distance <= spec.spacing)).collect();
        let positives = sharp.iter().filter(|&&f| f == 1).count();
        if spec.has_crease() && positives < MIN_CREASE_SAMPLES {
            continue;
        }
        let rotation = Rotation::random(&mut rng);
        let positions: Vec<Vec3> = samples.iter().map(|s| rotation.apply(s.position)).collect();
        let (points, centroid, scale) = normalize_patch(&positions);
        return Ok(PointPatch {
            points: points.into_iter().map(to_f32).collect(),
            normals: Some(samples.iter().map(|s| to_f32(rotation.apply(s.normal))).collect()),
            sharp: Some(sharp),
            meta: PatchMeta {
                kind: spec.kind.name().to_string(),
                seed,
                centroid,
                scale,
                shape: Some(*spec),
                rotation: Some(rotation),
            },
        });
    }
    Err(Error::Generation(format!(
        "no valid {} patch after {MAX_ATTEMPTS} attempts",
        spec.kind.name()
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: ShapeKind, n: usize) -> ShapeSpec {
        ShapeSpec { kind, spacing: 0.05, n_points: n }
    }

    #[test]
    fn plane_has_no_positives_and_one_normal() {
        let p = generate_patch(&spec(ShapeKind::Plane, 128), 3).unwrap();
        assert_eq!(p.len(), 128);
        assert_eq!(p.sharp_count(), 0);
        let ns = p.normals.as_ref().unwrap();
        assert!(ns.iter().all(|n| n == &ns[0]));
    }

    #[test]
    fn flat_wedge_has_no_positives() {
        let p = generate_patch(&spec(ShapeKind::Wedge { dihedral: PI }, 128), 3).unwrap();
        assert_eq!(p.sharp_count(), 0);
    }

    #[test]
    fn deterministic_in_spec_and_seed() {
        let s = spec(ShapeKind::Wedge { dihedral: 1.2 }, 200);
        assert_eq!(generate_patch(&s, 17).unwrap(), generate_patch(&s, 17).unwrap());
        assert_ne!(generate_patch(&s, 17).unwrap().points, generate_patch(&s, 18).unwrap().points);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(generate_patch(&spec(ShapeKind::Wedge { dihedral: 0.0 }, 64), 0).is_err());
        assert!(generate_patch(&spec(ShapeKind::Wedge { dihedral: 3.5 }, 64), 0).is_err());
        assert!(generate_patch(&spec(ShapeKind::Plane, 8), 0).is_err());
        let mut s = spec(ShapeKind::Plane, 64);
        s.spacing = 0.0;
        assert!(generate_patch(&s, 0).is_err());
    }

    #[test]
    fn infeasible_cap_is_a_generation_error() {
        let s = spec(ShapeKind::SphereCap { radius: 0.1, cap_angle: 0.5 }, 512);
        assert!(matches!(generate_patch(&s, 1), Err(Error::Generation(_))));
    }

    #[test]
    fn curved_shapes_have_unit_normals() {
        for kind in [ShapeKind::Cylinder { radius: 0.5 }, ShapeKind::SphereCap { radius: 0.8, cap_angle: 2.0 }] {
            let p = generate_patch(&spec(kind, 256), 5).unwrap();
            for n in p.normals.unwrap() {
                let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                assert!((len - 1.0).abs() < 1e-5);
            }
        }
    }
}
