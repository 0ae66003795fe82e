//! On-disk feature cache, one file per clip.
//!
//! Layout (little-endian): magic `MCLFEAT1`; `u32` length + UTF-8 clip id;
//! `u32` frame count; `u32` column count; `u32` length + UTF-8 label; `u32`
//! fold; then frames × columns `f32` values, row-major.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::FeatureClip;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"MCLFEAT1";

fn format_err(reason: impl Into<String>) -> Error {
    Error::Format {
        kind: "feature cache",
        reason: reason.into(),
    }
}

pub fn write_feature_clip<W: Write>(clip: &FeatureClip, mut out: W) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + 4 * clip.frames.len());
    buf.extend_from_slice(FEATURE_MAGIC);
    let put_str = |buf: &mut Vec<u8>, s: &str| {
        buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
        buf.extend_from_slice(s.as_bytes());
    };
    put_str(&mut buf, &clip.clip_id);
    buf.extend_from_slice(&(clip.frames.nrows() as u32).to_le_bytes());
    buf.extend_from_slice(&(clip.frames.ncols() as u32).to_le_bytes());
    put_str(&mut buf, &clip.label);
    buf.extend_from_slice(&(clip.fold as u32).to_le_bytes());
    for &v in clip.frames.iter() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.write_all(&buf)
        .map_err(|e| format_err(format!("write failed: {e}")))
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(format_err("truncated file"));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()?;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| format_err("string is not UTF-8"))
    }
}

pub fn read_feature_clip<R: Read>(mut input: R) -> Result<FeatureClip> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| format_err(format!("read failed: {e}")))?;
    let mut r = Reader { bytes: &bytes };
    if r.take(FEATURE_MAGIC.len())? != FEATURE_MAGIC {
        return Err(format_err("missing MCLFEAT1 magic"));
    }
    let clip_id = r.string()?;
    let frames = r.u32()?;
    let cols = r.u32()?;
    let label = r.string()?;
    let fold = r.u32()?;
    let payload = r.take(4 * frames * cols)?;
    if !r.bytes.is_empty() {
        return Err(format_err("trailing bytes"));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let matrix = Array2::from_shape_vec((frames, cols), values).unwrap();
    FeatureClip::new(clip_id, label, fold, matrix)
}

/// Cache file name for a manifest path: path separators become `__`.
pub fn cache_file_name(clip_path: &str) -> String {
    let flat = clip_path.replace(['/', '\\'], "__").replace(':', "-");
    format!("{flat}.mclfeat")
}

pub fn save_cached(clip: &FeatureClip, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(cache_file_name(&clip.clip_id));
    let mut buf = Vec::new();
    write_feature_clip(clip, &mut buf)?;
    std::fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// The cached clip for `clip_path`, or `None` when no cache file exists.
pub fn load_cached(clip_path: &str, dir: &Path) -> Result<Option<FeatureClip>> {
    let path = dir.join(cache_file_name(clip_path));
    match std::fs::read(&path) {
        Ok(bytes) => read_feature_clip(bytes.as_slice()).map(Some),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(&path, e)),
    }
}
