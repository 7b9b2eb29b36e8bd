use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::format::read_patch;
use crate::data::patch::PointPatch;
use crate::error::{Error, Result};

/// File name of the split manifest inside a data directory.
pub const SPLIT_FILE: &str = "split.json";

/// Patch files assigned to each split, relative to the data directory.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl SplitManifest {
    pub fn files(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

pub fn save_manifest(dir: impl AsRef<Path>, manifest: &SplitManifest) -> Result<()> {
    let path = dir.as_ref().join(SPLIT_FILE);
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_manifest(dir: impl AsRef<Path>) -> Result<SplitManifest> {
    let path = dir.as_ref().join(SPLIT_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::from(e).in_file(&path))
}

/// Reads every patch of `split`, failing on an empty split or the first
/// unreadable file.
pub fn load_split(dir: impl AsRef<Path>, split: Split) -> Result<Vec<PointPatch>> {
    let dir = dir.as_ref();
    let manifest = load_manifest(dir)?;
    let files = manifest.files(split);
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("{} split of {} is empty", split.name(), dir.display())));
    }
    files.iter().map(|f| read_patch(dir.join(f))).collect()
}

/// Shuffles `ids` with `seed` and cuts them 4:1:1 into train, validation,
/// and test; the remainder goes to train.
pub fn split_dataset<T: Clone>(ids: &[T], seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if ids.len() < 6 {
        return Err(Error::InvalidArgument(format!("need at least 6 patches to split, got {}", ids.len())));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let sixth = ids.len() / 6;
    let test = shuffled.split_off(ids.len() - sixth);
    let val = shuffled.split_off(ids.len() - 2 * sixth);
    Ok((shuffled, val, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sizes(n: usize) -> (usize, usize, usize) {
        let ids: Vec<usize> = (0..n).collect();
        let (a, b, c) = split_dataset(&ids, 1).unwrap();
        (a.len(), b.len(), c.len())
    }

    #[test]
    fn four_one_one_with_remainder_to_train() {
        assert_eq!(sizes(6), (4, 1, 1));
        assert_eq!(sizes(7), (5, 1, 1));
        assert_eq!(sizes(600), (400, 100, 100));
        assert!(split_dataset(&[1, 2, 3, 4, 5], 0).is_err());
    }

    #[test]
    fn disjoint_cover_and_deterministic() {
        let ids: Vec<usize> = (0..50).collect();
        let (a, b, c) = split_dataset(&ids, 9).unwrap();
        let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).copied().collect();
        all.sort_unstable();
        assert_eq!(all, ids);
        assert_eq!(split_dataset(&ids, 9).unwrap(), (a, b, c));
    }
}
