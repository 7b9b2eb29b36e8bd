//! GACK checkpoint files.
//!
//! Little-endian layout: magic `GACK`, version `u32`, a `u32` length and a
//! UTF-8 JSON header, then one record per tensor until the end of the file:
//! name length `u32`, name, rank `u32`, extents `u32×rank`, `f32` data.
//! Tensors are named `<mlp>.<layer>.weight` and `<mlp>.<layer>.bias`.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::format::ByteReader;
use crate::error::{Error, Result};
use crate::network::{init_weights, ModelConfig, Weights};
use crate::tensor::Tensor;
use crate::training::TrainConfig;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"GACK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained weights with the configuration that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub training: Option<TrainConfig>,
    /// Epoch at which the weights were taken (1-based; 0 before training).
    pub epoch: usize,
    pub weights: Weights<f32>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    #[serde(default)]
    training: Option<TrainConfig>,
    #[serde(default)]
    epoch: usize,
}

fn record_names(weights: &Weights<f32>) -> Vec<(String, &Tensor<f32>)> {
    let mut out = Vec::new();
    for p in &weights.params {
        for (i, l) in p.layers.iter().enumerate() {
            out.push((format!("{}.{i}.weight", p.name), &l.weight));
            out.push((format!("{}.{i}.bias", p.name), &l.bias));
        }
    }
    out
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        model: ckpt.model.clone(),
        training: ckpt.training.clone(),
        epoch: ckpt.epoch,
    })?;
    let mut out = Vec::with_capacity(12 + header.len() + 4 * ckpt.weights.parameter_count());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for (name, t) in record_names(&ckpt.weights) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = ByteReader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    r.version(CHECKPOINT_VERSION)?;
    let header_len = r.u32()? as usize;
    let header_at = r.offset();
    let header: Header = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| Error::Format { offset: header_at, reason: format!("header: {e}") })?;
    header
        .model
        .validate()
        .map_err(|e| Error::Format { offset: header_at, reason: format!("header: {e}") })?;

    let mut records: HashMap<String, (u64, Tensor<f32>)> = HashMap::new();
    while !r.at_end() {
        let at = r.offset();
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format { offset: at, reason: "record name is not UTF-8".into() })?
            .to_string();
        let rank = r.u32()? as usize;
        if rank == 0 || rank > 4 {
            return Err(r.fail(format!("record {name} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let count = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e)).ok_or_else(|| r.fail("extent overflow"))?;
        let data = r.f32s(count)?;
        let tensor = Tensor::new(shape, data).map_err(|e| Error::Format { offset: at, reason: e.to_string() })?;
        if records.insert(name.clone(), (at, tensor)).is_some() {
            return Err(Error::Format { offset: at, reason: format!("duplicate record {name}") });
        }
    }

    let end = r.offset();
    let mut weights = init_weights::<f32>(&header.model);
    for p in &mut weights.params {
        for (i, l) in p.layers.iter_mut().enumerate() {
            for (suffix, slot) in [("weight", &mut l.weight), ("bias", &mut l.bias)] {
                let name = format!("{}.{i}.{suffix}", p.name);
                let (at, t) = records
                    .remove(&name)
                    .ok_or_else(|| Error::Format { offset: end, reason: format!("missing record {name}") })?;
                if t.shape() != slot.shape() {
                    return Err(Error::Format {
                        offset: at,
                        reason: format!("record {name} has shape {:?}, expected {:?}", t.shape(), slot.shape()),
                    });
                }
                *slot = t;
            }
        }
    }
    if let Some((name, (at, _))) = records.into_iter().min_by_key(|(_, (at, _))| *at) {
        return Err(Error::Format { offset: at, reason: format!("unexpected record {name}") });
    }
    Ok(Checkpoint { model: header.model, training: header.training, epoch: header.epoch, weights })
}

pub fn write_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(ckpt)?).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Arch;

    fn ckpt() -> Checkpoint {
        let model = ModelConfig { arch: Arch::Ga, widths: vec![4, 4], semantic_width: 4, global_width: 8, head_widths: vec![8], k: 3, ..ModelConfig::default() };
        Checkpoint { weights: init_weights(&model), model, training: Some(TrainConfig::default()), epoch: 2 }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = ckpt();
        let bytes = encode_checkpoint(&c).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }

    #[test]
    fn corruption_is_positioned() {
        let bytes = encode_checkpoint(&ckpt()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_checkpoint(&bad), Err(Error::UnsupportedVersion { found: 9, offset: 4, .. })));
        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(decode_checkpoint(truncated), Err(Error::Format { .. })));
    }
}
