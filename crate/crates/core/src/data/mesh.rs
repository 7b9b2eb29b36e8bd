//! Triangle meshes: OBJ ingestion, dihedral sharp-edge detection, surface
//! sampling, and label transfer onto sampled points.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::patch::{normalize_patch, to_f32, PatchMeta, PointPatch};
use crate::data::poisson::{dart_throw, eliminate, Surface, SurfaceSample, MIN_DISTANCE_RATIO};
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};

/// Default sharpness threshold: deviation of the dihedral angle from flat.
pub const DEFAULT_SHARP_ANGLE_DEG: f64 = 30.0;

/// Points farther than this many spacings from the surface fail label
/// transfer.
const MAX_SURFACE_DISTANCE: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    /// Vertex-index pairs, smaller index first.
    pub sharp_edges: Vec<[u32; 2]>,
}

fn face_cross(v: &[Vec3], f: [u32; 3]) -> Vec3 {
    let (a, b, c) = (v[f[0] as usize], v[f[1] as usize], v[f[2] as usize]);
    geom::cross(geom::sub(b, a), geom::sub(c, a))
}

fn edge_key(a: u32, b: u32) -> [u32; 2] {
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

impl TriMesh {
    /// Validates face indices and drops zero-area faces.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>, sharp_edges: Vec<[u32; 2]>) -> Result<Self> {
        let nv = vertices.len() as u32;
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= nv)) {
            return Err(Error::InvalidArgument(format!("face {f:?} indexes past {nv} vertices")));
        }
        if let Some(e) = sharp_edges.iter().find(|e| e.iter().any(|&i| i >= nv)) {
            return Err(Error::InvalidArgument(format!("sharp edge {e:?} indexes past {nv} vertices")));
        }
        let faces = faces.into_iter().filter(|&f| geom::norm(face_cross(&vertices, f)) > 0.0).collect();
        let sharp_edges = sharp_edges.into_iter().map(|[a, b]| edge_key(a, b)).collect();
        Ok(Self { vertices, faces, sharp_edges })
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        geom::normalize(face_cross(&self.vertices, self.faces[f]))
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * geom::norm(face_cross(&self.vertices, self.faces[f]))
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Length of the bounding-box diagonal.
    pub fn extent(&self) -> f64 {
        if self.vertices.is_empty() {
            return 0.0;
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
        for v in &self.vertices {
            for c in 0..3 {
                lo[c] = lo[c].min(v[c]);
                hi[c] = hi[c].max(v[c]);
            }
        }
        geom::dist(lo, hi)
    }

    fn edge_faces(&self) -> HashMap<[u32; 2], Vec<usize>> {
        let mut map: HashMap<[u32; 2], Vec<usize>> = HashMap::new();
        for (fi, f) in self.faces.iter().enumerate() {
            for e in 0..3 {
                map.entry(edge_key(f[e], f[(e + 1) % 3])).or_default().push(fi);
            }
        }
        map
    }

    /// Marks edges whose adjacent face normals turn by more than
    /// `threshold` radians. Boundary edges are never sharp.
    pub fn detect_sharp_edges(&mut self, threshold: f64) {
        let mut sharp: Vec<[u32; 2]> = self
            .edge_faces()
            .into_iter()
            .filter(|(_, fs)| {
                fs.iter().enumerate().any(|(i, &a)| {
                    fs[i + 1..].iter().any(|&b| {
                        let c = geom::dot(self.face_normal(a), self.face_normal(b)).clamp(-1.0, 1.0);
                        c.acos() > threshold
                    })
                })
            })
            .map(|(e, _)| e)
            .collect();
        sharp.sort_unstable();
        self.sharp_edges = sharp;
    }

    /// Angle-weighted vertex normals.
    fn vertex_normals(&self) -> Vec<Vec3> {
        let mut out = vec![[0.0; 3]; self.vertices.len()];
        for (fi, f) in self.faces.iter().enumerate() {
            let n = self.face_normal(fi);
            for c in 0..3 {
                let p = self.vertices[f[c] as usize];
                let e1 = geom::normalize(geom::sub(self.vertices[f[(c + 1) % 3] as usize], p));
                let e2 = geom::normalize(geom::sub(self.vertices[f[(c + 2) % 3] as usize], p));
                let angle = geom::dot(e1, e2).clamp(-1.0, 1.0).acos();
                out[f[c] as usize] = geom::add(out[f[c] as usize], geom::scale(n, angle));
            }
        }
        out.into_iter().map(geom::normalize).collect()
    }
}

/// Parses `v` and `f` records; other records are ignored. Polygons are
/// fan-triangulated and sharp edges detected at `sharp_angle` radians.
pub fn parse_obj(text: &str, sharp_angle: f64) -> Result<TriMesh> {
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let err = |reason: String| Error::Parse { line: line_no, reason };
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<f64> = tokens
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|e| err(format!("bad coordinate {t:?}: {e}"))))
                    .collect::<Result<_>>()?;
                if coords.len() != 3 || coords.iter().any(|c| !c.is_finite()) {
                    return Err(err("vertex needs three finite coordinates".into()));
                }
                vertices.push([coords[0], coords[1], coords[2]]);
            }
            Some("f") => {
                let mut idx = Vec::new();
                for t in tokens {
                    let head = t.split('/').next().unwrap_or("");
                    let raw: i64 = head.parse().map_err(|e| err(format!("bad face index {t:?}: {e}")))?;
                    let n = vertices.len() as i64;
                    let resolved = if raw > 0 { raw - 1 } else { n + raw };
                    if raw == 0 || resolved < 0 || resolved >= n {
                        return Err(err(format!("face index {raw} out of range for {n} vertices")));
                    }
                    idx.push(resolved as u32);
                }
                if idx.len() < 3 {
                    return Err(err("face needs at least three vertices".into()));
                }
                for i in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[i], idx[i + 1]]);
                }
            }
            _ => {}
        }
    }
    let mut mesh = TriMesh::new(vertices, faces, Vec::new())?;
    mesh.detect_sharp_edges(sharp_angle);
    Ok(mesh)
}

pub fn load_obj(path: impl AsRef<Path>, sharp_angle: f64) -> Result<TriMesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, sharp_angle)
}

struct MeshSurface<'a> {
    mesh: &'a TriMesh,
    cumulative: Vec<f64>,
}

impl<'a> MeshSurface<'a> {
    fn new(mesh: &'a TriMesh) -> Self {
        let mut total = 0.0;
        let cumulative = (0..mesh.faces.len())
            .map(|f| {
                total += mesh.face_area(f);
                total
            })
            .collect();
        Self { mesh, cumulative }
    }
}

impl Surface for MeshSurface<'_> {
    fn area(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }
    fn sample(&self, rng: &mut ChaCha8Rng) -> SurfaceSample {
        let r = rng.gen::<f64>() * self.area();
        let fi = self.cumulative.partition_point(|&c| c < r).min(self.cumulative.len() - 1);
        let f = self.mesh.faces[fi];
        let (a, b, c) = (self.mesh.vertices[f[0] as usize], self.mesh.vertices[f[1] as usize], self.mesh.vertices[f[2] as usize]);
        let (mut u, mut v): (f64, f64) = (rng.gen(), rng.gen());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        let position = geom::add(a, geom::add(geom::scale(geom::sub(b, a), u), geom::scale(geom::sub(c, a), v)));
        SurfaceSample { position, normal: self.mesh.face_normal(fi), crease_distance: f64::INFINITY }
    }
}

/// Poisson-disk samples over the whole mesh, about one per `spacing²` of
/// area. Deterministic in `(mesh, spacing, seed)`.
pub fn poisson_sample_mesh(mesh: &TriMesh, spacing: f64, seed: u64) -> Result<Vec<Vec3>> {
    if mesh.faces.is_empty() {
        return Err(Error::InvalidArgument("mesh has no faces".into()));
    }
    if !(spacing > 0.0) {
        return Err(Error::InvalidArgument("spacing must be positive".into()));
    }
    let extent = mesh.extent();
    if spacing > extent {
        return Err(Error::InvalidArgument(format!("spacing {spacing} exceeds mesh extent {extent:.6}")));
    }
    let surface = MeshSurface::new(mesh);
    let area = surface.area();
    let target = ((area / (spacing * spacing)).round() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let darts = dart_throw(&surface, MIN_DISTANCE_RATIO * spacing, &mut rng);
    Ok(eliminate(darts, target, area).into_iter().map(|s| s.position).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Feature {
    Face,
    /// Local edge `e` runs from corner `e` to corner `(e + 1) % 3`.
    Edge(usize),
    Vertex(usize),
}

fn closest_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> (Vec3, Feature) {
    use geom::{add, dot, scale, sub};
    let (ab, ac, ap) = (sub(b, a), sub(c, a), sub(p, a));
    let (d1, d2) = (dot(ab, ap), dot(ac, ap));
    if d1 <= 0.0 && d2 <= 0.0 {
        return (a, Feature::Vertex(0));
    }
    let bp = sub(p, b);
    let (d3, d4) = (dot(ab, bp), dot(ac, bp));
    if d3 >= 0.0 && d4 <= d3 {
        return (b, Feature::Vertex(1));
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return (add(a, scale(ab, d1 / (d1 - d3))), Feature::Edge(0));
    }
    let cp = sub(p, c);
    let (d5, d6) = (dot(ab, cp), dot(ac, cp));
    if d6 >= 0.0 && d5 <= d6 {
        return (c, Feature::Vertex(2));
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return (add(a, scale(ac, d2 / (d2 - d6))), Feature::Edge(2));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && d4 - d3 >= 0.0 && d5 - d6 >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (add(b, scale(sub(c, b), w)), Feature::Edge(1));
    }
    let denom = 1.0 / (va + vb + vc);
    (add(a, add(scale(ab, vb * denom), scale(ac, vc * denom))), Feature::Face)
}

/// Ground-truth normals and sharp flags for points on a mesh surface.
///
/// The normal comes from the nearest face; when the nearest feature is a
/// non-sharp edge it is the mean of the adjacent face normals, and at a
/// vertex the angle-weighted vertex normal. A point is sharp when it lies
/// within `spacing` of a sharp edge.
pub fn transfer_labels(mesh: &TriMesh, points: &[Vec3], spacing: f64) -> Result<(Vec<Vec3>, Vec<u8>)> {
    if mesh.faces.is_empty() {
        return Err(Error::InvalidArgument("mesh has no faces".into()));
    }
    let edge_faces = mesh.edge_faces();
    let vertex_normals = mesh.vertex_normals();
    let sharp_set: std::collections::HashSet<[u32; 2]> = mesh.sharp_edges.iter().copied().collect();
    let mut normals = Vec::with_capacity(points.len());
    let mut sharp = Vec::with_capacity(points.len());
    for (pi, &p) in points.iter().enumerate() {
        let mut best = (f64::INFINITY, 0usize, Feature::Face);
        for (fi, f) in mesh.faces.iter().enumerate() {
            let (a, b, c) = (mesh.vertices[f[0] as usize], mesh.vertices[f[1] as usize], mesh.vertices[f[2] as usize]);
            let (q, feat) = closest_on_triangle(p, a, b, c);
            let d = geom::dist(p, q);
            if d < best.0 {
                best = (d, fi, feat);
            }
        }
        let (d, fi, feat) = best;
        if d > MAX_SURFACE_DISTANCE * spacing {
            return Err(Error::Consistency(format!("point {pi} lies {d:.6} from the surface")));
        }
        let face = mesh.faces[fi];
        let normal = match feat {
            Feature::Face => mesh.face_normal(fi),
            Feature::Edge(e) => {
                let key = edge_key(face[e], face[(e + 1) % 3]);
                if sharp_set.contains(&key) {
                    mesh.face_normal(fi)
                } else {
                    let sum = edge_faces[&key].iter().fold([0.0; 3], |acc, &f| geom::add(acc, mesh.face_normal(f)));
                    geom::normalize(sum)
                }
            }
            Feature::Vertex(c) => vertex_normals[face[c] as usize],
        };
        let near_sharp = mesh.sharp_edges.iter().any(|&[a, b]| {
            geom::point_segment_distance(p, mesh.vertices[a as usize], mesh.vertices[b as usize]) <= spacing
        });
        normals.push(normal);
        sharp.push(u8::from(near_sharp));
    }
    Ok((normals, sharp))
}

/// A labeled patch of `n_points` drawn from a whole mesh: Poisson-disk
/// samples, the `n_points` nearest to a random sample, labels transferred
/// from the mesh, then normalization.
pub fn patch_from_mesh(mesh: &TriMesh, spacing: f64, n_points: usize, seed: u64) -> Result<PointPatch> {
    let samples = poisson_sample_mesh(mesh, spacing, seed)?;
    if samples.len() < n_points {
        return Err(Error::Generation(format!(
            "mesh yields {} samples at spacing {spacing}, {n_points} requested",
            samples.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let center = samples[rng.gen_range(0..samples.len())];
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| {
        geom::dist(samples[a], center).total_cmp(&geom::dist(samples[b], center)).then(a.cmp(&b))
    });
    let chosen: Vec<Vec3> = order[..n_points].iter().map(|&i| samples[i]).collect();
    let (normals, sharp) = transfer_labels(mesh, &chosen, spacing)?;
    let (points, centroid, scale) = normalize_patch(&chosen);
    Ok(PointPatch {
        points: points.into_iter().map(to_f32).collect(),
        normals: Some(normals.into_iter().map(to_f32).collect()),
        sharp: Some(sharp),
        meta: PatchMeta { kind: "mesh".into(), seed, centroid, scale, shape: None, rotation: None },
    })
}
