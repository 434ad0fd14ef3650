//! CKPT files.
//!
//! Layout, all integers u32 LE: magic `"CKPT"`, version, entry count, then
//! per entry the name length, UTF-8 name, rank, extents and f32 LE data.
//! A CRC32 of the entry region follows the last entry.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const CKPT_MAGIC: [u8; 4] = *b"CKPT";
pub const CKPT_VERSION: u32 = 1;
const HEADER: usize = 12;

pub fn encode_checkpoint(params: &ParamStore<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out[HEADER..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).ok_or(Error::Truncated)?;
        if end > self.bytes.len() {
            return Err(Error::Truncated);
        }
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamStore<f32>> {
    if bytes.len() < 4 {
        return Err(Error::Truncated);
    }
    if bytes[..4] != CKPT_MAGIC {
        return Err(Error::BadMagic {
            expected: CKPT_MAGIC,
            got: bytes[..4].try_into().expect("4 bytes"),
        });
    }
    if bytes.len() < HEADER + 4 {
        return Err(Error::Truncated);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CKPT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let body_end = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[HEADER..body_end]);
    if stored != computed {
        return Err(Error::Crc { stored, computed });
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    let mut cur = Cursor {
        bytes: &bytes[..body_end],
        at: HEADER,
    };
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|e| Error::Format(format!("checkpoint entry name: {e}")))?
            .to_owned();
        let rank = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("entry {name:?} extents overflow")))?;
        let raw = cur.take(numel.checked_mul(4).ok_or(Error::Truncated)?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        store.insert(name, Tensor::new(shape, data)?)?;
    }
    if cur.at != body_end {
        return Err(Error::Format(format!("{} unread bytes after the last entry", body_end - cur.at)));
    }
    Ok(store)
}

/// Path of the JSON configuration written next to a checkpoint.
pub fn config_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the checkpoint and, when given, its configuration sidecar.
pub fn save_checkpoint(path: impl AsRef<Path>, params: &ParamStore<f32>, config: Option<&serde_json::Value>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(params))?;
    if let Some(cfg) = config {
        fs::write(config_sidecar(path), serde_json::to_vec_pretty(cfg)?)?;
    }
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParamStore<f32>> {
    decode_checkpoint(&fs::read(path)?)
}

/// Configuration sidecar of a checkpoint, if present.
pub fn load_checkpoint_config(path: impl AsRef<Path>) -> Result<Option<serde_json::Value>> {
    let side = config_sidecar(path.as_ref());
    if !side.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_slice(&fs::read(side)?)?))
}
