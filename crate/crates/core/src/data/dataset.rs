//! Seeded synthetic datasets written as patch files plus a split manifest.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::format::write_patch;
use crate::data::patch::{rotate_patch, PointPatch};
use crate::geom::Rotation;
use crate::data::shapes::{generate_patch, ShapeFamily};
use crate::data::split::{save_manifest, split_dataset, SplitManifest};
use crate::error::{Error, Result};
use crate::par::{try_map_ordered, Execution};

const SPEC_STREAM: u64 = 0x5eed_0001;
const PATCH_STREAM: u64 = 0x5eed_0002;
const SPEC_DRAWS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    /// Families cycled through in order, patch `i` using `shapes[i % len]`.
    pub shapes: Vec<ShapeFamily>,
    pub count: usize,
    pub n_points: usize,
    pub spacing: f64,
    pub seed: u64,
    /// Randomly rotate every patch; otherwise keep the shape's own frame.
    #[serde(default = "yes")]
    pub random_orientation: bool,
}

fn yes() -> bool {
    true
}

fn mix(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed ^ stream.rotate_left(17) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generates patch `index` of the dataset; pure in `(spec, index)`.
pub fn generate_indexed(spec: &DatasetSpec, index: usize) -> Result<PointPatch> {
    let family = spec.shapes[index % spec.shapes.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed, SPEC_STREAM, index as u64));
    let mut last = None;
    for draw in 0..SPEC_DRAWS {
        let shape = family.random_spec(spec.n_points, spec.spacing, &mut rng);
        let seed = mix(spec.seed, PATCH_STREAM, ((index as u64) << 8) | draw as u64);
        match generate_patch(&shape, seed) {
            Ok(p) if spec.random_orientation => return Ok(p),
            Ok(p) => return Ok(canonical_frame(&p)),
            Err(e @ Error::Generation(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap())
}

/// Undoes the generation rotation so the patch sits in its shape frame
/// (wedge creases and cylinder axes along x), still centered and unit-scaled.
pub fn canonical_frame(patch: &PointPatch) -> PointPatch {
    let Some(rotation) = patch.meta.rotation else {
        return patch.clone();
    };
    let inverse = rotation.inverse();
    let mut out = rotate_patch(patch, &inverse);
    out.meta.centroid = inverse.apply(patch.meta.centroid);
    out.meta.rotation = Some(Rotation::identity());
    out
}

pub fn generate_dataset(spec: &DatasetSpec, execution: Execution) -> Result<Vec<PointPatch>> {
    if spec.shapes.is_empty() {
        return Err(Error::InvalidArgument("at least one shape family is required".into()));
    }
    let indices: Vec<usize> = (0..spec.count).collect();
    try_map_ordered(execution, &indices, |&i| generate_indexed(spec, i))
}

pub fn patch_file_name(index: usize) -> String {
    format!("patch_{index:05}.gapc")
}

/// Writes `patches` into `dir` and assigns them 4:1:1 with `split_seed`.
pub fn write_dataset(dir: impl AsRef<Path>, patches: &[PointPatch], split_seed: u64) -> Result<SplitManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let names: Vec<String> = (0..patches.len()).map(patch_file_name).collect();
    let (train, val, test) = split_dataset(&names, split_seed)?;
    for (name, p) in names.iter().zip(patches) {
        write_patch(dir.join(name), p)?;
    }
    let manifest = SplitManifest { seed: split_seed, train, val, test };
    save_manifest(dir, &manifest)?;
    Ok(manifest)
}
