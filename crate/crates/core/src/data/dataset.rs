//! On-disk datasets of posed views named `<id>_<pose>.png` / `<id>_<pose>.uvm`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::warp::{Image, UvMap};

use super::png::read_png;
use super::uvm::read_uvm;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One in every `TEST_MODULUS` ids (by hash) is held out.
pub const TEST_MODULUS: u32 = 10;

/// Split of a subject id, from a CRC32 of its UTF-8 bytes.
pub fn split_of(id: &str) -> Split {
    if crc32fast::hash(id.as_bytes()).is_multiple_of(TEST_MODULUS) {
        Split::Test
    } else {
        Split::Train
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct View {
    pub pose: String,
    pub image: PathBuf,
    pub uv: PathBuf,
}

/// Ordered source/target pair of views of the same subject.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairRecord {
    pub id: String,
    pub split: Split,
    pub source: View,
    pub target: View,
}

impl PairRecord {
    pub fn load(&self) -> Result<LoadedPair> {
        Ok(LoadedPair {
            source: read_png(&self.source.image)?,
            source_uv: read_uvm(&self.source.uv)?,
            target: read_png(&self.target.image)?,
            target_uv: read_uvm(&self.target.uv)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadedPair {
    pub source: Image,
    pub source_uv: UvMap,
    pub target: Image,
    pub target_uv: UvMap,
}

/// Splits `stem` at its last underscore into `(id, pose)`.
fn parse_stem(stem: &str) -> Option<(&str, &str)> {
    let k = stem.rfind('_')?;
    let (id, pose) = (&stem[..k], &stem[k + 1..]);
    (!id.is_empty() && !pose.is_empty()).then_some((id, pose))
}

/// Every ordered pair of distinct poses per id, sorted by id, then source
/// pose, then target pose. Views need both a `.png` and a `.uvm` file.
pub fn dataset_index(dir: impl AsRef<Path>) -> Result<Vec<PairRecord>> {
    let dir = dir.as_ref();
    let mut views: BTreeMap<String, BTreeMap<String, View>> = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let uv = path.with_extension("uvm");
        if !uv.is_file() {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let Some((id, pose)) = parse_stem(stem) else {
            continue;
        };
        views.entry(id.to_owned()).or_default().insert(
            pose.to_owned(),
            View {
                pose: pose.to_owned(),
                image: path.clone(),
                uv,
            },
        );
    }
    let mut out = Vec::new();
    for (id, poses) in views {
        let split = split_of(&id);
        for (a, va) in &poses {
            for (b, vb) in &poses {
                if a != b {
                    out.push(PairRecord {
                        id: id.clone(),
                        split,
                        source: va.clone(),
                        target: vb.clone(),
                    });
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stems_split_at_last_underscore() {
        assert_eq!(parse_stem("a_b_3"), Some(("a_b", "3")));
        assert_eq!(parse_stem("nounderscore"), None);
        assert_eq!(parse_stem("_3"), None);
    }
}
