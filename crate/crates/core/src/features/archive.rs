//! Feature archive file format.
//!
//! Layout (little-endian):
//!   magic "AFEA" | version u32 | flags u32 (bit 0: single-window mode) |
//!   label table: count u32, names (u16 len + UTF-8) in index order |
//!   clip count u64 | per clip: id (u16 len + UTF-8), label index u32,
//!   frame count T u32, 3*T*40 f32 values (channel-major).

use std::path::Path;

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::features::{FeatureTensor, N_COEFFS};

const MAGIC: &[u8; 4] = b"AFEA";
const VERSION: u32 = 1;
const FLAG_SINGLE_WINDOW: u32 = 1;

/// A set of extracted clips plus the class-name table.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureArchive {
    pub label_table: Vec<String>,
    pub single_window: bool,
    pub clips: Vec<FeatureTensor>,
}

impl FeatureArchive {
    pub fn label_name(&self, index: u32) -> &str {
        &self.label_table[index as usize]
    }

    pub fn num_classes(&self) -> usize {
        self.label_table.len()
    }
}

pub fn save_archive(archive: &FeatureArchive, path: &Path) -> Result<()> {
    let mut w = ByteWriter::new();
    w.magic(MAGIC);
    w.u32(VERSION);
    w.u32(if archive.single_window { FLAG_SINGLE_WINDOW } else { 0 });
    w.u32(archive.label_table.len() as u32);
    for name in &archive.label_table {
        w.str16(name);
    }
    w.u64(archive.clips.len() as u64);
    for clip in &archive.clips {
        w.str16(clip.clip_id());
        w.u32(clip.label());
        w.u32(clip.frames() as u32);
        for &v in clip.raw() {
            w.f32(v);
        }
    }
    std::fs::write(path, w.into_bytes())?;
    Ok(())
}

pub fn load_archive(path: &Path) -> Result<FeatureArchive> {
    let bytes = std::fs::read(path)?;
    let mut r = ByteReader::new(&bytes, path);
    r.expect_magic(MAGIC)?;
    r.expect_version(VERSION)?;
    let flags = r.u32("flags")?;
    let single_window = flags & FLAG_SINGLE_WINDOW != 0;
    let n_labels = r.u32("label count")? as usize;
    let mut label_table = Vec::with_capacity(n_labels);
    for _ in 0..n_labels {
        label_table.push(r.str16("label name")?);
    }
    let n_clips = r.u64("clip count")? as usize;
    let mut clips = Vec::with_capacity(n_clips);
    for _ in 0..n_clips {
        let id = r.str16("clip id")?;
        let label = r.u32("label index")?;
        if label as usize >= label_table.len() {
            return Err(Error::Corrupt {
                path: path.to_path_buf(),
                detail: format!("clip {id} has label {label} outside the table"),
            });
        }
        let frames = r.u32("frame count")? as usize;
        let data = r.f32_slice(3 * frames * N_COEFFS, "clip data")?;
        clips.push(FeatureTensor::from_parts(&id, label, frames, data, single_window)?);
    }
    r.expect_end()?;
    Ok(FeatureArchive {
        label_table,
        single_window,
        clips,
    })
}
