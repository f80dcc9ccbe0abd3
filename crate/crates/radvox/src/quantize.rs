//! Fixed-bin-width gray-level discretization of ROI intensities — the shared
//! front-end for every texture matrix.

use crate::error::{Error, Result};
use crate::volume::{CtVolume, Dims, RoiMask};

/// Default discretization bin width in HU.
pub const DEFAULT_BIN_WIDTH: f64 = 25.0;

/// Gray-level indices per voxel. Level 0 is reserved for "outside ROI";
/// in-ROI voxels carry levels in `1..=num_levels`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedVolume {
    pub dims: Dims,
    pub levels: Vec<u32>,
    pub num_levels: usize,
    pub bin_width: f64,
    /// Minimum ROI intensity, used as the bin origin.
    pub origin: f64,
}

impl QuantizedVolume {
    #[inline]
    pub fn level(&self, z: usize, y: usize, x: usize) -> u32 {
        self.levels[self.dims.index(z, y, x)]
    }

    /// Number of in-ROI voxels.
    pub fn roi_count(&self) -> usize {
        self.levels.iter().filter(|&&l| l != 0).count()
    }
}

/// Assigns `level = floor((HU - min_roi) / bin_width) + 1` to in-ROI voxels
/// and 0 elsewhere.
pub fn discretize(volume: &CtVolume, mask: &RoiMask, bin_width: f64) -> Result<QuantizedVolume> {
    if volume.dims != mask.dims {
        return Err(Error::DimMismatch(format!(
            "volume dims {} != mask dims {}",
            volume.dims, mask.dims
        )));
    }
    if !(bin_width > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "bin width must be positive, got {bin_width}"
        )));
    }
    let origin = volume
        .voxels
        .iter()
        .zip(&mask.voxels)
        .filter(|(_, &m)| m != 0)
        .map(|(&v, _)| v)
        .fold(f64::INFINITY, f64::min);
    if !origin.is_finite() {
        return Err(Error::EmptyRoi("discretize requires a nonempty mask".into()));
    }
    let mut num_levels = 0usize;
    let levels = volume
        .voxels
        .iter()
        .zip(&mask.voxels)
        .map(|(&v, &m)| {
            if m == 0 {
                0
            } else {
                let level = ((v - origin) / bin_width).floor() as u32 + 1;
                num_levels = num_levels.max(level as usize);
                level
            }
        })
        .collect();
    Ok(QuantizedVolume {
        dims: volume.dims,
        levels,
        num_levels,
        bin_width,
        origin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Spacing;

    fn line(values: Vec<f64>, mask: Vec<u8>) -> (CtVolume, RoiMask) {
        let dims = Dims::new(1, 1, values.len());
        (
            CtVolume::new(dims, Spacing::isotropic(1.0), values).unwrap(),
            RoiMask::new(dims, mask).unwrap(),
        )
    }

    #[test]
    fn constant_roi_collapses_to_one_level() {
        let (v, m) = line(vec![-250.0; 4], vec![1; 4]);
        let q = discretize(&v, &m, 25.0).unwrap();
        assert_eq!(q.levels, vec![1, 1, 1, 1]);
        assert_eq!(q.num_levels, 1);
        assert_eq!(q.origin, -250.0);
    }

    #[test]
    fn floor_convention_at_bin_boundary() {
        let (v, m) = line(vec![-250.0, -226.0, -225.0], vec![1; 3]);
        let q = discretize(&v, &m, 25.0).unwrap();
        assert_eq!(q.levels, vec![1, 1, 2]);
    }

    #[test]
    fn derived_levels_for_spread_values() {
        let (v, m) = line(vec![-250.0, -200.0, -100.0, 0.0], vec![1; 4]);
        let q = discretize(&v, &m, 25.0).unwrap();
        assert_eq!(q.levels, vec![1, 3, 7, 11]);
        assert_eq!(q.num_levels, 11);
    }

    #[test]
    fn outside_roi_is_level_zero() {
        let (v, m) = line(vec![-250.0, -100.0, 0.0], vec![1, 0, 1]);
        let q = discretize(&v, &m, 25.0).unwrap();
        assert_eq!(q.levels[1], 0);
        assert_eq!(q.roi_count(), 2);
    }

    #[test]
    fn empty_mask_and_bad_width_are_errors() {
        let (v, m) = line(vec![1.0, 2.0], vec![0, 0]);
        assert!(matches!(discretize(&v, &m, 25.0), Err(Error::EmptyRoi(_))));
        let (v, m) = line(vec![1.0, 2.0], vec![1, 1]);
        assert!(discretize(&v, &m, 0.0).is_err());
        assert!(discretize(&v, &m, -5.0).is_err());
    }

    #[test]
    fn shift_invariance_of_levels() {
        let base = vec![-250.0, -237.0, -120.0, -3.0, -77.0, -250.0];
        let (v, m) = line(base.clone(), vec![1; 6]);
        let q0 = discretize(&v, &m, 25.0).unwrap();
        let shifted: Vec<f64> = base.iter().map(|v| v + 137.0).collect();
        let (vs, ms) = line(shifted, vec![1; 6]);
        let q1 = discretize(&vs, &ms, 25.0).unwrap();
        assert_eq!(q0.levels, q1.levels);
        assert_eq!(q0.num_levels, q1.num_levels);
    }

    #[test]
    fn level_monotone_in_intensity() {
        let values = vec![-250.0, -130.0, -130.0, -90.0, -20.0, -251.0];
        let (v, m) = line(values.clone(), vec![1; 6]);
        let q = discretize(&v, &m, 10.0).unwrap();
        for i in 0..values.len() {
            for j in 0..values.len() {
                if values[i] <= values[j] {
                    assert!(q.levels[i] <= q.levels[j]);
                }
            }
        }
        assert!(q.num_levels <= ((values.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
            - q.origin)
            / 10.0)
            .floor() as usize
            + 1);
    }
}
