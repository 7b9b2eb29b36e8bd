//! GAPC binary patch files.
//!
//! Little-endian layout: magic `GAPC`, version `u32`, point count `u32`,
//! flags `u32` (bit 0 normals, bit 1 sharp), points as `n×3 f32`, normals
//! as `n×3 f32` when flagged, sharp flags as `n u8` when flagged, then a
//! `u32` length and a UTF-8 JSON metadata blob.

use std::path::Path;

use crate::data::patch::{PatchMeta, PointPatch};
use crate::error::{Error, Result};

pub const PATCH_MAGIC: [u8; 4] = *b"GAPC";
pub const PATCH_VERSION: u32 = 1;

const HAS_NORMALS: u32 = 1;
const HAS_SHARP: u32 = 2;

pub fn encode_patch(patch: &PointPatch) -> Result<Vec<u8>> {
    patch.validate()?;
    let n = patch.points.len();
    let meta = serde_json::to_vec(&patch.meta)?;
    let mut out = Vec::with_capacity(20 + n * 25 + meta.len());
    out.extend_from_slice(&PATCH_MAGIC);
    out.extend_from_slice(&PATCH_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    let flags = (if patch.normals.is_some() { HAS_NORMALS } else { 0 }) | (if patch.sharp.is_some() { HAS_SHARP } else { 0 });
    out.extend_from_slice(&flags.to_le_bytes());
    for v in patch.points.iter().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(ns) = &patch.normals {
        for v in ns.iter().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(s) = &patch.sharp {
        out.extend_from_slice(s);
    }
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    Ok(out)
}

/// Cursor over a byte buffer that reports the offset of any failure.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }

    pub(crate) fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Format { offset: self.offset(), reason: reason.into() }
    }

    pub(crate) fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < len {
            return Err(self.fail(format!(
                "truncated: need {len} bytes, {} remain",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let raw = self.take(count.checked_mul(4).ok_or_else(|| self.fail("length overflow"))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub(crate) fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expected {
            self.pos -= 4;
            return Err(self.fail(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(&expected)
            )));
        }
        Ok(())
    }

    pub(crate) fn version(&mut self, expected: u32) -> Result<()> {
        let offset = self.offset();
        let found = self.u32()?;
        if found != expected {
            return Err(Error::UnsupportedVersion { found, expected, offset });
        }
        Ok(())
    }
}

fn triples(v: Vec<f32>) -> Vec<[f32; 3]> {
    v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

pub fn decode_patch(bytes: &[u8]) -> Result<PointPatch> {
    let mut r = ByteReader::new(bytes);
    r.magic(PATCH_MAGIC)?;
    r.version(PATCH_VERSION)?;
    let n = r.u32()? as usize;
    let flags_at = r.offset();
    let flags = r.u32()?;
    if flags & !(HAS_NORMALS | HAS_SHARP) != 0 {
        return Err(Error::Format { offset: flags_at, reason: format!("unknown flag bits {flags:#x}") });
    }
    let points = triples(r.f32s(n * 3)?);
    let normals = if flags & HAS_NORMALS != 0 { Some(triples(r.f32s(n * 3)?)) } else { None };
    let sharp = if flags & HAS_SHARP != 0 {
        let at = r.offset();
        let s = r.take(n)?.to_vec();
        if let Some(i) = s.iter().position(|&f| f > 1) {
            return Err(Error::Format { offset: at + i as u64, reason: format!("sharp flag {} is not 0/1", s[i]) });
        }
        Some(s)
    } else {
        None
    };
    let meta_len = r.u32()? as usize;
    let meta_at = r.offset();
    let meta: PatchMeta = serde_json::from_slice(r.take(meta_len)?)
        .map_err(|e| Error::Format { offset: meta_at, reason: format!("metadata: {e}") })?;
    if !r.at_end() {
        return Err(r.fail("trailing bytes after metadata"));
    }
    Ok(PointPatch { points, normals, sharp, meta })
}

pub fn write_patch(path: impl AsRef<Path>, patch: &PointPatch) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_patch(patch)?).map_err(|e| Error::io(path, e))
}

pub fn read_patch(path: impl AsRef<Path>) -> Result<PointPatch> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_patch(&bytes).map_err(|e| e.in_file(path))
}
