//! Synthetic phantom generation.
//!
//! Each phantom is an ellipsoidal "atrium" (positive HU) wrapped in a
//! fat-range shell whose HU values fall inside the ROI threshold window.
//! The two classes differ in shell thickness (affecting the diameter
//! features), texture correlation length (affecting GLCM homogeneity) and
//! texture amplitude (affecting the ROI maximum), each with independent
//! per-sample jitter so no single feature separates the classes perfectly.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{threshold_roi, CtVolume, Dims, Sample, Spacing};

/// Per-class generator settings. Fractions are relative to the axis extent.
#[derive(Debug, Clone)]
pub struct ClassParams {
    /// Texture correlation length in voxels (coarse-noise cell size).
    pub corr_len: f64,
    /// Texture amplitude in HU.
    pub amplitude: f64,
    /// Shell HU baseline.
    pub base_hu: f64,
    /// Shell thickness as a fraction of the axis extent.
    pub thickness_frac: f64,
}

#[derive(Debug, Clone)]
pub struct PhantomParams {
    pub spacing: Spacing,
    pub inner_radius_frac: f64,
    pub class0: ClassParams,
    pub class1: ClassParams,
}

impl Default for PhantomParams {
    fn default() -> Self {
        PhantomParams {
            spacing: Spacing::isotropic(1.0),
            inner_radius_frac: 0.24,
            class0: ClassParams {
                corr_len: 3.5,
                amplitude: 55.0,
                base_hu: -150.0,
                thickness_frac: 0.09,
            },
            class1: ClassParams {
                corr_len: 1.8,
                amplitude: 95.0,
                base_hu: -135.0,
                thickness_frac: 0.14,
            },
        }
    }
}

const MIN_DIM: usize = 16;

/// Smooth noise field: white noise on a coarse grid, trilinearly
/// interpolated back to the voxel grid. `cell` sets the correlation length.
struct SmoothNoise {
    gz: usize,
    gy: usize,
    gx: usize,
    cell: f64,
    values: Vec<f64>,
}

impl SmoothNoise {
    fn generate(dims: Dims, cell: f64, rng: &mut ChaCha8Rng) -> Self {
        let gz = (dims.z as f64 / cell).ceil() as usize + 2;
        let gy = (dims.y as f64 / cell).ceil() as usize + 2;
        let gx = (dims.x as f64 / cell).ceil() as usize + 2;
        let values = (0..gz * gy * gx).map(|_| rng.gen_range(-1.0..1.0)).collect();
        SmoothNoise { gz, gy, gx, cell, values }
    }

    fn at(&self, z: usize, y: usize, x: usize) -> f64 {
        let fz = z as f64 / self.cell;
        let fy = y as f64 / self.cell;
        let fx = x as f64 / self.cell;
        let (iz, ty) = (fz.floor() as usize, fz.fract());
        let (iy, tu) = (fy.floor() as usize, fy.fract());
        let (ix, tv) = (fx.floor() as usize, fx.fract());
        let iz = iz.min(self.gz - 2);
        let iy = iy.min(self.gy - 2);
        let ix = ix.min(self.gx - 2);
        let g = |z: usize, y: usize, x: usize| self.values[(z * self.gy + y) * self.gx + x];
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let c00 = lerp(g(iz, iy, ix), g(iz, iy, ix + 1), tv);
        let c01 = lerp(g(iz, iy + 1, ix), g(iz, iy + 1, ix + 1), tv);
        let c10 = lerp(g(iz + 1, iy, ix), g(iz + 1, iy, ix + 1), tv);
        let c11 = lerp(g(iz + 1, iy + 1, ix), g(iz + 1, iy + 1, ix + 1), tv);
        lerp(lerp(c00, c01, tu), lerp(c10, c11, tu), ty)
    }
}

fn mix_seed(label: u8, seed: u64, dims: Dims) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64 ^ seed;
    for v in [u64::from(label) + 1, dims.z as u64, dims.y as u64, dims.x as u64] {
        h ^= v.wrapping_mul(0xFF51_AFD7_ED55_8CCD).rotate_left(31);
        h = h.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    }
    h
}

/// Deterministic synthetic sample for the given class, seed and dims.
/// The returned mask is the threshold ROI of the generated volume.
pub fn synth_phantom(label: u8, seed: u64, dims: Dims) -> Result<Sample> {
    synth_phantom_with(&PhantomParams::default(), label, seed, dims)
}

pub fn synth_phantom_with(
    params: &PhantomParams,
    label: u8,
    seed: u64,
    dims: Dims,
) -> Result<Sample> {
    if dims.z < MIN_DIM || dims.y < MIN_DIM || dims.x < MIN_DIM {
        return Err(Error::InvalidArgument(format!(
            "phantom dims {dims} below minimum ({MIN_DIM},{MIN_DIM},{MIN_DIM})"
        )));
    }
    if label > 1 {
        return Err(Error::InvalidArgument(format!("label must be 0 or 1, got {label}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(label, seed, dims));
    let class = if label == 0 { &params.class0 } else { &params.class1 };

    // Per-sample jitter keeps every class-informative feature noisy.
    let corr_len = class.corr_len * rng.gen_range(0.85..1.15);
    let amplitude = class.amplitude * rng.gen_range(0.80..1.20);
    let base_hu = class.base_hu + rng.gen_range(-10.0..10.0);
    let thick_xy = class.thickness_frac + rng.gen_range(-0.025..0.025);
    let thick_z = class.thickness_frac + rng.gen_range(-0.025..0.025);

    let cz = dims.z as f64 / 2.0 + rng.gen_range(-1.0..1.0);
    let cy = dims.y as f64 / 2.0 + rng.gen_range(-1.0..1.0);
    let cx = dims.x as f64 / 2.0 + rng.gen_range(-1.0..1.0);
    let rin_z = params.inner_radius_frac * dims.z as f64 * rng.gen_range(0.92..1.08);
    let rin_y = params.inner_radius_frac * dims.y as f64 * rng.gen_range(0.92..1.08);
    let rin_x = params.inner_radius_frac * dims.x as f64 * rng.gen_range(0.92..1.08);
    let rout_z = rin_z + thick_z * dims.z as f64;
    let rout_y = rin_y + thick_xy * dims.y as f64;
    let rout_x = rin_x + thick_xy * dims.x as f64;

    let shell_noise = SmoothNoise::generate(dims, corr_len, &mut rng);

    let mut voxels = vec![0.0f64; dims.count()];
    let mut idx = 0;
    for z in 0..dims.z {
        for y in 0..dims.y {
            for x in 0..dims.x {
                let nz = (z as f64 - cz) / rin_z;
                let ny = (y as f64 - cy) / rin_y;
                let nx = (x as f64 - cx) / rin_x;
                let inner = nz * nz + ny * ny + nx * nx;
                let oz = (z as f64 - cz) / rout_z;
                let oy = (y as f64 - cy) / rout_y;
                let ox = (x as f64 - cx) / rout_x;
                let outer = oz * oz + oy * oy + ox * ox;
                let background = rng.gen_range(-15.0..15.0);
                let hu = if inner <= 1.0 {
                    // Blood-pool interior; strictly above the ROI window.
                    45.0 + background * 0.6
                } else if outer <= 1.0 {
                    // Fat shell, kept strictly inside [-250, 0].
                    (base_hu + amplitude * shell_noise.at(z, y, x)).clamp(-249.0, -6.0)
                } else {
                    // Soft-tissue background, strictly above the ROI window.
                    55.0 + background
                };
                voxels[idx] = hu.round();
                idx += 1;
            }
        }
    }

    let volume = CtVolume::new(dims, params.spacing, voxels)?;
    let mask = threshold_roi(&volume, super::DEFAULT_ROI_LOW_HU, super::DEFAULT_ROI_HIGH_HU)?;
    Sample::new(format!("phantom_c{label}_s{seed}"), volume, mask, label)
}
