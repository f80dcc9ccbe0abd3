//! Raw volume file I/O.
//!
//! A volume is stored as `<name>.vol` (raw little-endian payload, x fastest,
//! then y, then z) next to a `<name>.volhdr` sidecar holding `dims`,
//! `spacing_mm` and `dtype`. Masks use the same layout with `dtype =
//! "uint8"`; local feature maps reuse it with a leading channel dimension
//! and `dtype = "float32le"`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{CtVolume, Dims, RoiMask, Spacing};

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct VolumeHeader {
    pub dims: Vec<usize>,
    pub spacing_mm: [f64; 3],
    pub dtype: String,
}

pub(crate) fn header_path(payload: &Path) -> PathBuf {
    payload.with_extension("volhdr")
}

pub(crate) fn read_header(payload: &Path) -> Result<VolumeHeader> {
    let hdr_path = header_path(payload);
    let text = fs::read_to_string(&hdr_path).map_err(|e| Error::io(&hdr_path, e))?;
    let header: VolumeHeader = toml::from_str(&text)
        .map_err(|e| Error::Header(format!("{}: {e}", hdr_path.display())))?;
    if header.dims.is_empty() || header.dims.iter().any(|&d| d == 0) {
        return Err(Error::Header(format!(
            "{}: dims must be positive",
            hdr_path.display()
        )));
    }
    if header.spacing_mm.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::Header(format!(
            "{}: spacing_mm must be positive",
            hdr_path.display()
        )));
    }
    Ok(header)
}

/// Header access for payloads with arbitrary dimensionality (used by the
/// local-map files, which carry a leading channel dimension).
pub(crate) fn read_header_raw(payload: &Path) -> Result<(Vec<usize>, String)> {
    let header = read_header(payload)?;
    Ok((header.dims, header.dtype))
}

pub(crate) fn write_header_raw(payload: &Path, dims: Vec<usize>, dtype: &str) -> Result<()> {
    write_header(
        payload,
        &VolumeHeader {
            dims,
            spacing_mm: [1.0, 1.0, 1.0],
            dtype: dtype.into(),
        },
    )
}

pub(crate) fn write_header(payload: &Path, header: &VolumeHeader) -> Result<()> {
    let hdr_path = header_path(payload);
    let text = toml::to_string(header)
        .map_err(|e| Error::Header(format!("{}: {e}", hdr_path.display())))?;
    fs::write(&hdr_path, text).map_err(|e| Error::io(&hdr_path, e))
}

fn spatial_dims(header: &VolumeHeader, payload: &Path) -> Result<Dims> {
    if header.dims.len() != 3 {
        return Err(Error::Header(format!(
            "{}: expected 3 dims, got {}",
            payload.display(),
            header.dims.len()
        )));
    }
    Ok(Dims::new(header.dims[0], header.dims[1], header.dims[2]))
}

/// Loads a `.vol` + `.volhdr` pair with `dtype = "int16le"`.
pub fn load_volume(path: impl AsRef<Path>) -> Result<CtVolume> {
    let path = path.as_ref();
    let header = read_header(path)?;
    if header.dtype != "int16le" {
        return Err(Error::Header(format!(
            "{}: expected dtype int16le, got {}",
            path.display(),
            header.dtype
        )));
    }
    let dims = spatial_dims(&header, path)?;
    let payload = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = dims.count() * 2;
    if payload.len() != expected {
        return Err(Error::SizeMismatch(format!(
            "{}: payload is {} bytes, dims {} require {}",
            path.display(),
            payload.len(),
            dims,
            expected
        )));
    }
    let voxels = payload
        .chunks_exact(2)
        .map(|b| f64::from(i16::from_le_bytes([b[0], b[1]])))
        .collect();
    let spacing = Spacing::new(header.spacing_mm[0], header.spacing_mm[1], header.spacing_mm[2]);
    CtVolume::new(dims, spacing, voxels)
}

/// Writes a volume as int16le, rounding to the nearest integer and clamping
/// to the i16 range.
pub fn save_volume(path: impl AsRef<Path>, volume: &CtVolume) -> Result<()> {
    let path = path.as_ref();
    let mut payload = Vec::with_capacity(volume.voxels.len() * 2);
    for &v in &volume.voxels {
        let q = v.round().clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16;
        payload.extend_from_slice(&q.to_le_bytes());
    }
    fs::write(path, payload).map_err(|e| Error::io(path, e))?;
    write_header(
        path,
        &VolumeHeader {
            dims: vec![volume.dims.z, volume.dims.y, volume.dims.x],
            spacing_mm: [volume.spacing.z, volume.spacing.y, volume.spacing.x],
            dtype: "int16le".into(),
        },
    )
}

/// Loads a mask stored with `dtype = "uint8"`.
pub fn load_mask(path: impl AsRef<Path>) -> Result<RoiMask> {
    let path = path.as_ref();
    let header = read_header(path)?;
    if header.dtype != "uint8" {
        return Err(Error::Header(format!(
            "{}: expected dtype uint8, got {}",
            path.display(),
            header.dtype
        )));
    }
    let dims = spatial_dims(&header, path)?;
    let payload = fs::read(path).map_err(|e| Error::io(path, e))?;
    if payload.len() != dims.count() {
        return Err(Error::SizeMismatch(format!(
            "{}: payload is {} bytes, dims {} require {}",
            path.display(),
            payload.len(),
            dims,
            dims.count()
        )));
    }
    RoiMask::new(dims, payload)
}

pub fn save_mask(path: impl AsRef<Path>, mask: &RoiMask) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, &mask.voxels).map_err(|e| Error::io(path, e))?;
    write_header(
        path,
        &VolumeHeader {
            dims: vec![mask.dims.z, mask.dims.y, mask.dims.x],
            spacing_mm: [1.0, 1.0, 1.0],
            dtype: "uint8".into(),
        },
    )
}

/// One line of a dataset manifest. Paths are relative to the manifest file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub volume: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    pub label: u8,
}

/// Reads a manifest: one JSON record per line with fields `id`, `volume`,
/// optional `mask`, and `label`.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| {
            Error::Header(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for entry in entries {
        out.push_str(&serde_json::to_string(entry).expect("manifest entry serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
