//! Volume data model: CT grids in Hounsfield units, binary ROI masks,
//! Hounsfield thresholding, intensity normalization, zero padding, file I/O
//! and synthetic phantom generation.

mod io;
mod phantom;

pub use io::{load_mask, load_volume, read_manifest, save_mask, save_volume, write_manifest, ManifestEntry};
pub(crate) use io::{read_header_raw as io_read_header, write_header_raw as io_write_header};
pub use phantom::{synth_phantom, synth_phantom_with, ClassParams, PhantomParams};

use crate::error::{Error, Result};

/// Grid dimensions ordered `(z, y, x)` = (depth, height, width).
/// The x axis varies fastest in memory and on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Dims {
    pub z: usize,
    pub y: usize,
    pub x: usize,
}

impl Dims {
    pub fn new(z: usize, y: usize, x: usize) -> Self {
        Dims { z, y, x }
    }

    pub fn count(&self) -> usize {
        self.z * self.y * self.x
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.y + y) * self.x + x
    }

    /// Inverse of `index`.
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let x = idx % self.x;
        let y = (idx / self.x) % self.y;
        let z = idx / (self.x * self.y);
        (z, y, x)
    }

    pub fn fits_within(&self, other: &Dims) -> bool {
        self.z <= other.z && self.y <= other.y && self.x <= other.x
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.z, self.y, self.x)
    }
}

/// Voxel spacing in millimeters, ordered `(z, y, x)` like [`Dims`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Spacing {
    pub z: f64,
    pub y: f64,
    pub x: f64,
}

impl Spacing {
    pub fn new(z: f64, y: f64, x: f64) -> Self {
        Spacing { z, y, x }
    }

    pub fn isotropic(s: f64) -> Self {
        Spacing { z: s, y: s, x: s }
    }

    pub fn is_valid(&self) -> bool {
        self.z > 0.0 && self.y > 0.0 && self.x > 0.0 && [self.z, self.y, self.x].iter().all(|v| v.is_finite())
    }
}

/// Dense 3D scalar grid of Hounsfield-unit intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct CtVolume {
    pub dims: Dims,
    pub spacing: Spacing,
    pub voxels: Vec<f64>,
}

impl CtVolume {
    pub fn new(dims: Dims, spacing: Spacing, voxels: Vec<f64>) -> Result<Self> {
        if voxels.len() != dims.count() {
            return Err(Error::SizeMismatch(format!(
                "volume has {} voxels, dims {} require {}",
                voxels.len(),
                dims,
                dims.count()
            )));
        }
        if !spacing.is_valid() {
            return Err(Error::InvalidArgument(format!(
                "spacing components must be positive, got ({}, {}, {})",
                spacing.z, spacing.y, spacing.x
            )));
        }
        if voxels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("volume contains non-finite voxels".into()));
        }
        Ok(CtVolume { dims, spacing, voxels })
    }

    pub fn filled(dims: Dims, spacing: Spacing, value: f64) -> Self {
        CtVolume {
            dims,
            spacing,
            voxels: vec![value; dims.count()],
        }
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> f64 {
        self.voxels[self.dims.index(z, y, x)]
    }
}

/// Binary 3D grid marking ROI voxels; dims match the paired [`CtVolume`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoiMask {
    pub dims: Dims,
    pub voxels: Vec<u8>,
}

impl RoiMask {
    pub fn new(dims: Dims, voxels: Vec<u8>) -> Result<Self> {
        if voxels.len() != dims.count() {
            return Err(Error::SizeMismatch(format!(
                "mask has {} voxels, dims {} require {}",
                voxels.len(),
                dims,
                dims.count()
            )));
        }
        if voxels.iter().any(|&v| v > 1) {
            return Err(Error::InvalidArgument(
                "mask values must be 0 or 1".into(),
            ));
        }
        Ok(RoiMask { dims, voxels })
    }

    pub fn empty(dims: Dims) -> Self {
        RoiMask {
            dims,
            voxels: vec![0; dims.count()],
        }
    }

    #[inline]
    pub fn contains(&self, z: usize, y: usize, x: usize) -> bool {
        self.voxels[self.dims.index(z, y, x)] != 0
    }

    /// Number of ROI voxels.
    pub fn sum(&self) -> usize {
        self.voxels.iter().map(|&v| v as usize).sum()
    }
}

/// One labelled dataset sample: a volume, its ROI mask and a binary label
/// (0 or 1).
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub volume: CtVolume,
    pub mask: RoiMask,
    pub label: u8,
}

impl Sample {
    pub fn new(id: impl Into<String>, volume: CtVolume, mask: RoiMask, label: u8) -> Result<Self> {
        if volume.dims != mask.dims {
            return Err(Error::DimMismatch(format!(
                "volume dims {} != mask dims {}",
                volume.dims, mask.dims
            )));
        }
        if label > 1 {
            return Err(Error::InvalidArgument(format!("label must be 0 or 1, got {label}")));
        }
        Ok(Sample {
            id: id.into(),
            volume,
            mask,
            label,
        })
    }
}

/// Default Hounsfield window for the fat-tissue ROI.
pub const DEFAULT_ROI_LOW_HU: f64 = -250.0;
pub const DEFAULT_ROI_HIGH_HU: f64 = 0.0;

/// Default source window for intensity normalization.
pub const DEFAULT_NORM_LOW_HU: f64 = -1024.0;
pub const DEFAULT_NORM_HIGH_HU: f64 = 1024.0;

/// Marks every voxel with `low <= HU <= high` (inclusive at both ends).
pub fn threshold_roi(volume: &CtVolume, low: f64, high: f64) -> Result<RoiMask> {
    if low > high {
        return Err(Error::InvalidArgument(format!(
            "threshold low {low} exceeds high {high}"
        )));
    }
    let voxels = volume
        .voxels
        .iter()
        .map(|&v| u8::from(v >= low && v <= high))
        .collect();
    Ok(RoiMask {
        dims: volume.dims,
        voxels,
    })
}

/// Affine map sending `lo -> -1` and `hi -> +1`, clipping outside values.
pub fn normalize_intensities(volume: &CtVolume, lo: f64, hi: f64) -> Result<CtVolume> {
    if lo >= hi {
        return Err(Error::InvalidArgument(format!(
            "normalization window lo {lo} must be below hi {hi}"
        )));
    }
    let scale = 2.0 / (hi - lo);
    let voxels = volume
        .voxels
        .iter()
        .map(|&v| ((v - lo) * scale - 1.0).clamp(-1.0, 1.0))
        .collect();
    Ok(CtVolume {
        dims: volume.dims,
        spacing: volume.spacing,
        voxels,
    })
}

/// Zero-pads volume and mask up to `target`, anchoring the original content
/// at the low corner. The pad value is 0 for both grids.
pub fn pad_to_shape(sample: &Sample, target: Dims) -> Result<Sample> {
    let src = sample.volume.dims;
    if !src.fits_within(&target) {
        return Err(Error::InvalidArgument(format!(
            "source dims {src} exceed target {target}"
        )));
    }
    if src == target {
        return Ok(sample.clone());
    }
    let mut voxels = vec![0.0f64; target.count()];
    let mut mvoxels = vec![0u8; target.count()];
    for z in 0..src.z {
        for y in 0..src.y {
            let src_row = src.index(z, y, 0);
            let dst_row = target.index(z, y, 0);
            voxels[dst_row..dst_row + src.x]
                .copy_from_slice(&sample.volume.voxels[src_row..src_row + src.x]);
            mvoxels[dst_row..dst_row + src.x]
                .copy_from_slice(&sample.mask.voxels[src_row..src_row + src.x]);
        }
    }
    Ok(Sample {
        id: sample.id.clone(),
        volume: CtVolume {
            dims: target,
            spacing: sample.volume.spacing,
            voxels,
        },
        mask: RoiMask {
            dims: target,
            voxels: mvoxels,
        },
        label: sample.label,
    })
}
