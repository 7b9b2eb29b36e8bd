//! Poisson-disk surface sampling: dart throwing at a reduced radius,
//! then weighted sample elimination down to an exact count.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};

/// Minimum pairwise distance of the output, as a fraction of the spacing.
pub const MIN_DISTANCE_RATIO: f64 = 0.75;

/// Dart budget per unit of `area / r_min²`.
const DARTS_PER_CELL: f64 = 60.0;

/// Exponent of the elimination weight kernel.
const ELIMINATION_ALPHA: i32 = 8;

/// A surface point with its analytic labels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceSample {
    pub position: Vec3,
    pub normal: Vec3,
    /// Distance to the nearest sharp crease; infinite when there is none.
    pub crease_distance: f64,
}

/// A bounded surface that can be sampled uniformly by area.
pub trait Surface {
    fn area(&self) -> f64;
    fn sample(&self, rng: &mut ChaCha8Rng) -> SurfaceSample;
}

/// Uniform hash grid for radius queries.
pub(crate) struct SpatialGrid {
    cell: f64,
    cells: HashMap<[i64; 3], Vec<u32>>,
}

impl SpatialGrid {
    pub(crate) fn new(cell: f64) -> Self {
        Self { cell, cells: HashMap::new() }
    }

    fn key(&self, p: Vec3) -> [i64; 3] {
        [(p[0] / self.cell).floor() as i64, (p[1] / self.cell).floor() as i64, (p[2] / self.cell).floor() as i64]
    }

    pub(crate) fn insert(&mut self, idx: u32, p: Vec3) {
        self.cells.entry(self.key(p)).or_default().push(idx);
    }

    /// Calls `f` for every stored index in the 27 cells around `p`; with a
    /// cell size of at least `r`, this covers the ball of radius `r`.
    pub(crate) fn for_each_near(&self, p: Vec3, mut f: impl FnMut(u32)) {
        let [x, y, z] = self.key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(list) = self.cells.get(&[x + dx, y + dy, z + dz]) {
                        list.iter().copied().for_each(&mut f);
                    }
                }
            }
        }
    }
}

/// Throws darts uniformly over the surface, keeping each one farther than
/// `min_dist` from all kept ones.
pub fn dart_throw(surface: &dyn Surface, min_dist: f64, rng: &mut ChaCha8Rng) -> Vec<SurfaceSample> {
    let budget = (DARTS_PER_CELL * surface.area() / (min_dist * min_dist)).ceil().max(64.0) as usize;
    let mut grid = SpatialGrid::new(min_dist);
    let mut kept: Vec<SurfaceSample> = Vec::new();
    let min2 = min_dist * min_dist;
    for _ in 0..budget {
        let s = surface.sample(rng);
        let mut ok = true;
        grid.for_each_near(s.position, |j| {
            if ok {
                let d = geom::sub(kept[j as usize].position, s.position);
                if geom::dot(d, d) < min2 {
                    ok = false;
                }
            }
        });
        if ok {
            grid.insert(kept.len() as u32, s.position);
            kept.push(s);
        }
    }
    kept
}

#[derive(PartialEq)]
struct HeapEntry {
    weight: f64,
    idx: u32,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.weight.total_cmp(&other.weight).then(self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Repeatedly removes the most crowded sample until `target` remain.
/// Survivors keep their input order.
pub fn eliminate(samples: Vec<SurfaceSample>, target: usize, area: f64) -> Vec<SurfaceSample> {
    let m = samples.len();
    if target >= m {
        return samples;
    }
    // Disk radius of a hexagonal packing of `target` points over `area`.
    let r_max = (area / (2.0 * 3f64.sqrt() * target as f64)).sqrt();
    let reach = 2.0 * r_max;
    let mut grid = SpatialGrid::new(reach);
    for (i, s) in samples.iter().enumerate() {
        grid.insert(i as u32, s.position);
    }
    let mut weights = vec![0.0f64; m];
    let mut contrib: Vec<Vec<(u32, f64)>> = vec![Vec::new(); m];
    for (i, s) in samples.iter().enumerate() {
        grid.for_each_near(s.position, |j| {
            if j as usize == i {
                return;
            }
            let d = geom::dist(s.position, samples[j as usize].position);
            if d < reach {
                let w = (1.0 - d / reach).powi(ELIMINATION_ALPHA);
                weights[i] += w;
                contrib[i].push((j, w));
            }
        });
    }
    let mut heap: BinaryHeap<HeapEntry> =
        weights.iter().enumerate().map(|(i, &w)| HeapEntry { weight: w, idx: i as u32 }).collect();
    let mut removed = vec![false; m];
    let mut remaining = m;
    while remaining > target {
        let Some(HeapEntry { weight, idx }) = heap.pop() else { break };
        let i = idx as usize;
        if removed[i] || weight.to_bits() != weights[i].to_bits() {
            continue;
        }
        removed[i] = true;
        remaining -= 1;
        for &(j, w) in &contrib[i] {
            let j = j as usize;
            if !removed[j] {
                weights[j] -= w;
                heap.push(HeapEntry { weight: weights[j], idx: j as u32 });
            }
        }
    }
    samples.into_iter().zip(removed).filter(|(_, r)| !r).map(|(s, _)| s).collect()
}

/// Samples exactly `target` points at least `MIN_DISTANCE_RATIO · spacing`
/// apart, failing when dart throwing cannot place that many.
pub fn poisson_disk(
    surface: &dyn Surface,
    spacing: f64,
    target: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SurfaceSample>> {
    if !(spacing > 0.0) {
        return Err(Error::InvalidArgument("spacing must be positive".into()));
    }
    let darts = dart_throw(surface, MIN_DISTANCE_RATIO * spacing, rng);
    if darts.len() < target {
        return Err(Error::Generation(format!(
            "only {} samples fit at spacing {spacing}, {target} requested",
            darts.len()
        )));
    }
    Ok(eliminate(darts, target, surface.area()))
}
