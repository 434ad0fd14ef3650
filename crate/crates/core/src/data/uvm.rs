//! UVM1 files: `"UVM1"`, width and height as u32 LE, then per pixel in
//! row-major order the triple `(u, v, valid)` as f32 LE.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::warp::UvMap;

pub const UVM_MAGIC: [u8; 4] = *b"UVM1";
const HEADER: usize = 12;

pub fn encode_uvm(map: &UvMap) -> Vec<u8> {
    let n = map.width() * map.height();
    let mut out = Vec::with_capacity(HEADER + 12 * n);
    out.extend_from_slice(&UVM_MAGIC);
    out.extend_from_slice(&(map.width() as u32).to_le_bytes());
    out.extend_from_slice(&(map.height() as u32).to_le_bytes());
    for i in 0..n {
        out.extend_from_slice(&map.raw_u()[i].to_le_bytes());
        out.extend_from_slice(&map.raw_v()[i].to_le_bytes());
        let valid: f32 = if map.valid_mask()[i] { 1.0 } else { 0.0 };
        out.extend_from_slice(&valid.to_le_bytes());
    }
    out
}

fn f32_at(bytes: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

pub fn decode_uvm(bytes: &[u8]) -> Result<UvMap> {
    if bytes.len() < 4 {
        return Err(Error::Truncated);
    }
    if bytes[..4] != UVM_MAGIC {
        return Err(Error::BadMagic {
            expected: UVM_MAGIC,
            got: bytes[..4].try_into().expect("4 bytes"),
        });
    }
    if bytes.len() < HEADER {
        return Err(Error::Truncated);
    }
    let w = u32_at(bytes, 4) as usize;
    let h = u32_at(bytes, 8) as usize;
    let n = w
        .checked_mul(h)
        .ok_or_else(|| Error::Format(format!("UVM1 extent {w}x{h} overflows")))?;
    let need = n
        .checked_mul(12)
        .and_then(|p| p.checked_add(HEADER))
        .ok_or_else(|| Error::Format(format!("UVM1 extent {w}x{h} overflows")))?;
    if bytes.len() < need {
        return Err(Error::Truncated);
    }
    if bytes.len() > need {
        return Err(Error::Format(format!("{} trailing bytes after UVM1 payload", bytes.len() - need)));
    }
    let (mut u, mut v, mut valid) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let at = HEADER + 12 * i;
        u.push(f32_at(bytes, at));
        v.push(f32_at(bytes, at + 4));
        let flag = f32_at(bytes, at + 8);
        valid.push(match flag {
            f if f == 1.0 => true,
            f if f == 0.0 => false,
            f => return Err(Error::Format(format!("UVM1 pixel {i} has valid flag {f}"))),
        });
    }
    UvMap::from_parts(w, h, u, v, valid)
}

pub fn write_uvm(path: impl AsRef<Path>, map: &UvMap) -> Result<()> {
    fs::write(path, encode_uvm(map))?;
    Ok(())
}

pub fn read_uvm(path: impl AsRef<Path>) -> Result<UvMap> {
    decode_uvm(&fs::read(path)?)
}
