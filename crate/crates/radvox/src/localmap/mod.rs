//! Per-voxel locally computed texture feature maps.
//!
//! Every voxel receives the value of a texture feature evaluated on the
//! cubic patch of radius `p` around it, clamped to the volume bounds and
//! restricted to patch∩ROI, reusing the volume-global quantization so patch
//! values stay comparable across locations. [`local_feature_map`] is the
//! optimized kernel; [`naive_local_oracle`] recomputes every patch from
//! scratch and defines correctness.

mod kernels;

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{
    build_glcm, build_gldm, build_glrlm, MatrixRef, TextureFeature,
};
use crate::quantize::QuantizedVolume;
use crate::volume::{Dims, RoiMask};

/// One channel of a local map: which feature at which patch radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ChannelSpec {
    pub key: TextureFeature,
    pub radius: usize,
}

/// Stack of per-voxel feature volumes. Channel `c` occupies
/// `values[c*V..(c+1)*V]` in the spatial layout of the source volume.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFeatureMap {
    pub dims: Dims,
    pub channel_spec: Vec<ChannelSpec>,
    pub values: Vec<f64>,
    /// 1 where the patch∩ROI was nonempty, per channel and voxel.
    pub validity: Vec<u8>,
}

impl LocalFeatureMap {
    pub fn num_channels(&self) -> usize {
        self.channel_spec.len()
    }

    pub fn channel_values(&self, c: usize) -> &[f64] {
        let v = self.dims.count();
        &self.values[c * v..(c + 1) * v]
    }

    pub fn channel_validity(&self, c: usize) -> &[u8] {
        let v = self.dims.count();
        &self.validity[c * v..(c + 1) * v]
    }
}

fn check_args(q: &QuantizedVolume, mask: &RoiMask, p: usize) -> Result<()> {
    if q.dims != mask.dims {
        return Err(Error::DimMismatch(format!(
            "quantized dims {} != mask dims {}",
            q.dims, mask.dims
        )));
    }
    if p < 1 {
        return Err(Error::InvalidArgument("patch radius must be >= 1".into()));
    }
    Ok(())
}

/// Optimized single-channel local feature map.
///
/// Bit-identical to [`naive_local_oracle`] and independent of the rayon
/// worker count: voxel outputs are computed independently and written to
/// disjoint slices.
pub fn local_feature_map(
    q: &QuantizedVolume,
    mask: &RoiMask,
    key: TextureFeature,
    p: usize,
) -> Result<LocalFeatureMap> {
    check_args(q, mask, p)?;
    let (values, validity) = match key {
        TextureFeature::GlcmIdn => kernels::glcm_idn_map(q, p),
        TextureFeature::GlrlmLongRunEmphasis => kernels::glrlm_lre_map(q, p),
        TextureFeature::GldmDependenceNonUniformityNormalized
        | TextureFeature::GldmLargeDependenceEmphasis => {
            kernels::gldm_map(q, p, 0, key == TextureFeature::GldmLargeDependenceEmphasis)
        }
    };
    Ok(LocalFeatureMap {
        dims: q.dims,
        channel_spec: vec![ChannelSpec { key, radius: p }],
        values,
        validity,
    })
}

/// Reference implementation: independent per-voxel patch extraction and full
/// matrix rebuild, no shared state, no incremental updates.
pub fn naive_local_oracle(
    q: &QuantizedVolume,
    mask: &RoiMask,
    key: TextureFeature,
    p: usize,
) -> Result<LocalFeatureMap> {
    check_args(q, mask, p)?;
    let dims = q.dims;
    let count = dims.count();
    let mut values = vec![0.0f64; count];
    let mut validity = vec![0u8; count];
    for cz in 0..dims.z {
        for cy in 0..dims.y {
            for cx in 0..dims.x {
                let z0 = cz.saturating_sub(p);
                let z1 = (cz + p).min(dims.z - 1);
                let y0 = cy.saturating_sub(p);
                let y1 = (cy + p).min(dims.y - 1);
                let x0 = cx.saturating_sub(p);
                let x1 = (cx + p).min(dims.x - 1);
                let pdims = Dims::new(z1 - z0 + 1, y1 - y0 + 1, x1 - x0 + 1);
                let mut levels = Vec::with_capacity(pdims.count());
                let mut roi = 0usize;
                for z in z0..=z1 {
                    for y in y0..=y1 {
                        for x in x0..=x1 {
                            let l = q.levels[dims.index(z, y, x)];
                            roi += usize::from(l != 0);
                            levels.push(l);
                        }
                    }
                }
                let idx = dims.index(cz, cy, cx);
                if roi == 0 {
                    continue;
                }
                validity[idx] = 1;
                let patch = QuantizedVolume {
                    dims: pdims,
                    levels,
                    num_levels: q.num_levels,
                    bin_width: q.bin_width,
                    origin: q.origin,
                };
                values[idx] = match key {
                    TextureFeature::GlcmIdn => match build_glcm(&patch) {
                        Ok(m) => crate::features::texture_feature(MatrixRef::Glcm(&m), key)?,
                        // A patch whose ROI voxels are all isolated has no
                        // pairs; the map reports 0 there.
                        Err(Error::EmptyMatrix(_)) => 0.0,
                        Err(e) => return Err(e),
                    },
                    TextureFeature::GlrlmLongRunEmphasis => {
                        let m = build_glrlm(&patch)?;
                        crate::features::texture_feature(MatrixRef::Glrlm(&m), key)?
                    }
                    TextureFeature::GldmDependenceNonUniformityNormalized
                    | TextureFeature::GldmLargeDependenceEmphasis => {
                        let m = build_gldm(&patch, 0)?;
                        crate::features::texture_feature(MatrixRef::Gldm(&m), key)?
                    }
                };
            }
        }
    }
    Ok(LocalFeatureMap {
        dims,
        channel_spec: vec![ChannelSpec { key, radius: p }],
        values,
        validity,
    })
}

/// Channel concatenation in argument order.
pub fn stack_local_maps(maps: &[LocalFeatureMap]) -> Result<LocalFeatureMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot stack zero maps".into()))?;
    let dims = first.dims;
    for m in maps {
        if m.dims != dims {
            return Err(Error::DimMismatch(format!(
                "map dims {} != {}",
                m.dims, dims
            )));
        }
    }
    let mut channel_spec = Vec::new();
    let mut values = Vec::new();
    let mut validity = Vec::new();
    for m in maps {
        channel_spec.extend_from_slice(&m.channel_spec);
        values.extend_from_slice(&m.values);
        validity.extend_from_slice(&m.validity);
    }
    Ok(LocalFeatureMap {
        dims,
        channel_spec,
        values,
        validity,
    })
}

/// Writes the map as float32le with a leading channel dimension, a
/// channel-spec sidecar (`<name>.channels`) and a uint8 validity payload
/// (`<name>_valid.vol`).
pub fn save_local_map(path: impl AsRef<Path>, map: &LocalFeatureMap) -> Result<()> {
    let path = path.as_ref();
    let mut payload = Vec::with_capacity(map.values.len() * 4);
    for &v in &map.values {
        payload.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, payload).map_err(|e| Error::io(path, e))?;
    crate::volume::io_write_header(
        path,
        vec![map.num_channels(), map.dims.z, map.dims.y, map.dims.x],
        "float32le",
    )?;
    let spec_path = path.with_extension("channels");
    let mut spec = String::new();
    for ch in &map.channel_spec {
        spec.push_str(&format!("{} {}\n", ch.key.canonical_key(), ch.radius));
    }
    fs::write(&spec_path, spec).map_err(|e| Error::io(&spec_path, e))?;
    let valid_path = valid_path_for(path);
    fs::write(&valid_path, &map.validity).map_err(|e| Error::io(&valid_path, e))?;
    crate::volume::io_write_header(
        &valid_path,
        vec![map.num_channels(), map.dims.z, map.dims.y, map.dims.x],
        "uint8",
    )
}

fn valid_path_for(path: &Path) -> std::path::PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}_valid.vol"))
}

/// Loads a map written by [`save_local_map`]. Values come back as the f32
/// they were stored as.
pub fn load_local_map(path: impl AsRef<Path>) -> Result<LocalFeatureMap> {
    let path = path.as_ref();
    let (dims4, dtype) = crate::volume::io_read_header(path)?;
    if dtype != "float32le" {
        return Err(Error::Header(format!(
            "{}: expected dtype float32le, got {dtype}",
            path.display()
        )));
    }
    if dims4.len() != 4 {
        return Err(Error::Header(format!(
            "{}: expected 4 dims for a local map",
            path.display()
        )));
    }
    let l = dims4[0];
    let dims = Dims::new(dims4[1], dims4[2], dims4[3]);
    let payload = fs::read(path).map_err(|e| Error::io(path, e))?;
    if payload.len() != l * dims.count() * 4 {
        return Err(Error::SizeMismatch(format!(
            "{}: payload is {} bytes, expected {}",
            path.display(),
            payload.len(),
            l * dims.count() * 4
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect();
    let spec_path = path.with_extension("channels");
    let spec_text = fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
    let mut channel_spec = Vec::new();
    for line in spec_text.lines().filter(|l| !l.trim().is_empty()) {
        let mut parts = line.split_whitespace();
        let key = parts
            .next()
            .ok_or_else(|| Error::Header(format!("{}: bad channel line", spec_path.display())))?;
        let radius: usize = parts
            .next()
            .ok_or_else(|| Error::Header(format!("{}: bad channel line", spec_path.display())))?
            .parse()
            .map_err(|e| Error::Header(format!("{}: {e}", spec_path.display())))?;
        channel_spec.push(ChannelSpec {
            key: TextureFeature::parse(key)?,
            radius,
        });
    }
    if channel_spec.len() != l {
        return Err(Error::Header(format!(
            "{}: {} channels in sidecar, header says {l}",
            spec_path.display(),
            channel_spec.len()
        )));
    }
    let valid_path = valid_path_for(path);
    let validity = if valid_path.exists() {
        let v = fs::read(&valid_path).map_err(|e| Error::io(&valid_path, e))?;
        if v.len() != l * dims.count() {
            return Err(Error::SizeMismatch(format!(
                "{}: validity payload size mismatch",
                valid_path.display()
            )));
        }
        v
    } else {
        vec![1u8; l * dims.count()]
    };
    Ok(LocalFeatureMap {
        dims,
        channel_spec,
        values,
        validity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantize::discretize;
    use crate::volume::{threshold_roi, CtVolume, RoiMask, Spacing};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_quantized(dims: Dims, seed: u64, roi_frac: f64, ng_hint: i32) -> (QuantizedVolume, RoiMask) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..dims.count())
            .map(|_| -250.0 + f64::from(rng.gen_range(0..=(10 * ng_hint))))
            .collect();
        let mask_vox: Vec<u8> = (0..dims.count())
            .map(|_| u8::from(rng.gen_bool(roi_frac)))
            .collect();
        let volume = CtVolume::new(dims, Spacing::isotropic(1.0), values).unwrap();
        let mut mask = RoiMask::new(dims, mask_vox).unwrap();
        if mask.sum() == 0 {
            mask.voxels[0] = 1;
        }
        let q = discretize(&volume, &mask, 10.0).unwrap();
        (q, mask)
    }

    #[test]
    fn constant_roi_maps_to_idn_one() {
        let dims = Dims::new(4, 4, 4);
        let v = CtVolume::new(dims, Spacing::isotropic(1.0), vec![-100.0; 64]).unwrap();
        let mask = threshold_roi(&v, -250.0, 0.0).unwrap();
        let q = discretize(&v, &mask, 25.0).unwrap();
        for p in [1usize, 3] {
            let m = local_feature_map(&q, &mask, TextureFeature::GlcmIdn, p).unwrap();
            for (&val, &ok) in m.values.iter().zip(&m.validity) {
                assert_eq!(ok, 1);
                assert_eq!(val, 1.0);
            }
        }
    }

    #[test]
    fn oracle_equality_on_random_volumes() {
        for seed in 0..6u64 {
            let (q, mask) = random_quantized(Dims::new(9, 8, 10), seed, 0.7, 6);
            for key in TextureFeature::ALL {
                for p in [1usize, 2] {
                    let fast = local_feature_map(&q, &mask, key, p).unwrap();
                    let slow = naive_local_oracle(&q, &mask, key, p).unwrap();
                    assert_eq!(fast.values, slow.values, "{key} p={p} seed={seed}");
                    assert_eq!(fast.validity, slow.validity, "{key} p={p} seed={seed}");
                }
            }
        }
    }

    #[test]
    fn full_volume_patch_matches_global_feature() {
        let (q, mask) = random_quantized(Dims::new(6, 6, 6), 11, 0.8, 5);
        let p = 6; // clamped patch covers the whole volume everywhere
        for key in TextureFeature::ALL {
            let global = match key {
                TextureFeature::GlcmIdn => {
                    crate::features::build_glcm(&q).unwrap().idn()
                }
                TextureFeature::GlrlmLongRunEmphasis => crate::features::build_glrlm(&q)
                    .unwrap()
                    .long_run_emphasis()
                    .unwrap(),
                TextureFeature::GldmDependenceNonUniformityNormalized => {
                    crate::features::build_gldm(&q, 0)
                        .unwrap()
                        .dependence_non_uniformity_normalized()
                        .unwrap()
                }
                TextureFeature::GldmLargeDependenceEmphasis => crate::features::build_gldm(&q, 0)
                    .unwrap()
                    .large_dependence_emphasis()
                    .unwrap(),
            };
            let m = local_feature_map(&q, &mask, key, p).unwrap();
            for &v in &m.values {
                assert_eq!(v, global, "{key}");
            }
        }
    }

    #[test]
    fn empty_mask_region_is_invalid_zero() {
        // ROI confined to one corner: far corners see empty patches at p=1.
        let dims = Dims::new(8, 8, 8);
        let mut mask = RoiMask::empty(dims);
        mask.voxels[dims.index(0, 0, 0)] = 1;
        mask.voxels[dims.index(0, 0, 1)] = 1;
        let v = CtVolume::new(dims, Spacing::isotropic(1.0), vec![-100.0; 512]).unwrap();
        let q = discretize(&v, &mask, 25.0).unwrap();
        let m = local_feature_map(&q, &mask, TextureFeature::GlcmIdn, 1).unwrap();
        let far = dims.index(7, 7, 7);
        assert_eq!(m.validity[far], 0);
        assert_eq!(m.values[far], 0.0);
        let near = dims.index(0, 0, 0);
        assert_eq!(m.validity[near], 1);
    }

    #[test]
    fn one_voxel_roi_glcm_patch_is_zero_but_valid() {
        let dims = Dims::new(4, 4, 4);
        let mut mask = RoiMask::empty(dims);
        mask.voxels[dims.index(1, 1, 1)] = 1;
        let v = CtVolume::new(dims, Spacing::isotropic(1.0), vec![-50.0; 64]).unwrap();
        let q = discretize(&v, &mask, 25.0).unwrap();
        let fast = local_feature_map(&q, &mask, TextureFeature::GlcmIdn, 1).unwrap();
        let slow = naive_local_oracle(&q, &mask, TextureFeature::GlcmIdn, 1).unwrap();
        assert_eq!(fast.values, slow.values);
        let at = dims.index(1, 1, 1);
        assert_eq!(fast.values[at], 0.0);
        assert_eq!(fast.validity[at], 1);
    }

    #[test]
    fn stacking_concatenates_channels() {
        let (q, mask) = random_quantized(Dims::new(8, 8, 8), 3, 0.9, 4);
        let maps: Vec<LocalFeatureMap> = [1usize, 2, 5, 10]
            .iter()
            .map(|&p| local_feature_map(&q, &mask, TextureFeature::GlcmIdn, p).unwrap())
            .collect();
        let stacked = stack_local_maps(&maps).unwrap();
        assert_eq!(stacked.num_channels(), 4);
        assert_eq!(stacked.channel_spec[2].radius, 5);
        assert_eq!(stacked.channel_values(1), maps[1].values.as_slice());
        let single = stack_local_maps(&maps[..1]).unwrap();
        assert_eq!(single.values, maps[0].values);
    }

    #[test]
    fn stacking_rejects_dim_mismatch() {
        let (qa, ma) = random_quantized(Dims::new(8, 8, 8), 3, 0.9, 4);
        let (qb, mb) = random_quantized(Dims::new(6, 8, 8), 4, 0.9, 4);
        let a = local_feature_map(&qa, &ma, TextureFeature::GlcmIdn, 1).unwrap();
        let b = local_feature_map(&qb, &mb, TextureFeature::GlcmIdn, 1).unwrap();
        assert!(stack_local_maps(&[a, b]).is_err());
    }

    #[test]
    fn rejects_zero_radius() {
        let (q, mask) = random_quantized(Dims::new(8, 8, 8), 5, 0.9, 4);
        assert!(local_feature_map(&q, &mask, TextureFeature::GlcmIdn, 0).is_err());
    }

    #[test]
    fn map_persistence_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.vol");
        let (q, mask) = random_quantized(Dims::new(6, 6, 6), 9, 0.8, 4);
        let maps: Vec<LocalFeatureMap> = [1usize, 2]
            .iter()
            .map(|&p| local_feature_map(&q, &mask, TextureFeature::GlcmIdn, p).unwrap())
            .collect();
        let stacked = stack_local_maps(&maps).unwrap();
        save_local_map(&path, &stacked).unwrap();
        let back = load_local_map(&path).unwrap();
        assert_eq!(back.dims, stacked.dims);
        assert_eq!(back.channel_spec, stacked.channel_spec);
        assert_eq!(back.validity, stacked.validity);
        for (a, b) in back.values.iter().zip(&stacked.values) {
            assert_eq!(*a, f64::from(*b as f32));
        }
    }
}
