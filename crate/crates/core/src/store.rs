//! On-disk tensor records shared by the frame, transcript and feature caches.
//!
//! A record is a pair of files with a common stem: `<stem>.f32` holds raw
//! little-endian 32-bit floats in row-major index order, `<stem>.json` holds
//! the [`TensorMeta`] sidecar. Every write goes through a temporary file and a
//! rename, so readers never observe a partially written file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub video_id: String,
    pub shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub real_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
}

impl TensorMeta {
    pub fn new(video_id: impl Into<String>, shape: Vec<usize>) -> Self {
        Self {
            video_id: video_id.into(),
            shape,
            kind: None,
            real_count: None,
            vocab_size: None,
            fold: None,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// A unique temporary path next to `target`, on the same filesystem.
pub(crate) fn temp_sibling(target: &Path) -> PathBuf {
    let n = TEMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let name = target
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    target.with_file_name(format!(".tmp-{}-{}-{}", std::process::id(), n, name))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `bytes` to `path` via a temporary sibling and an atomic rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    let tmp = temp_sibling(path);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn f32_to_le_bytes(data: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn f32_from_le_bytes(bytes: &[u8]) -> Result<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::ShapeMismatch(format!(
            "tensor payload of {} bytes is not a whole number of f32 values",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn record_paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{stem}.f32")),
        dir.join(format!("{stem}.json")),
    )
}

/// Writes a tensor record. The payload lands before the sidecar, so the
/// presence of the sidecar marks a complete record.
pub fn write_tensor(dir: &Path, stem: &str, data: &[f32], meta: &TensorMeta) -> Result<()> {
    if meta.numel() != data.len() {
        return Err(Error::ShapeMismatch(format!(
            "metadata shape {:?} has {} elements but payload has {}",
            meta.shape,
            meta.numel(),
            data.len()
        )));
    }
    let (bin, json) = record_paths(dir, stem);
    atomic_write(&bin, &f32_to_le_bytes(data))?;
    write_json(&json, meta)
}

pub fn tensor_exists(dir: &Path, stem: &str) -> bool {
    let (bin, json) = record_paths(dir, stem);
    bin.is_file() && json.is_file()
}

pub fn read_tensor(dir: &Path, stem: &str) -> Result<(Vec<f32>, TensorMeta)> {
    let (bin, json) = record_paths(dir, stem);
    let meta: TensorMeta = read_json(&json)?;
    let data = f32_from_le_bytes(&read_file(&bin)?)?;
    if data.len() != meta.numel() {
        return Err(Error::ShapeMismatch(format!(
            "{}: payload has {} elements, sidecar shape {:?}",
            bin.display(),
            data.len(),
            meta.shape
        )));
    }
    Ok((data, meta))
}

/// Hex SHA-256 of a byte string.
pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> Result<String> {
    Ok(digest_bytes(&read_file(path)?))
}

/// A 64-bit seed derived from arbitrary bytes; stable across platforms and runs.
pub fn stable_seed(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    u64::from_le_bytes([d[0], d[1], d[2], d[3], d[4], d[5], d[6], d[7]])
}
