//! Global radiomic feature extraction: gray-level co-occurrence, run-length
//! and dependence matrices, their scalar texture features, shape diameters
//! and the first-order maximum.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::quantize::{discretize, QuantizedVolume, DEFAULT_BIN_WIDTH};
use crate::volume::{CtVolume, RoiMask, Sample, Spacing};

/// The 13 unique 3D direction offsets: 26-connectivity modulo sign, ordered
/// `(dz, dy, dx)` with the first nonzero component positive.
pub const DIRECTIONS_13: [(i32, i32, i32); 13] = [
    (1, -1, -1),
    (1, -1, 0),
    (1, -1, 1),
    (1, 0, -1),
    (1, 0, 0),
    (1, 0, 1),
    (1, 1, -1),
    (1, 1, 0),
    (1, 1, 1),
    (0, 1, -1),
    (0, 1, 0),
    (0, 1, 1),
    (0, 0, 1),
];

/// All 26 neighbor offsets in a fixed order (also the bit order used by the
/// sliding-window GLDM kernel).
pub const NEIGHBOR_OFFSETS_26: [(i32, i32, i32); 26] = [
    (-1, -1, -1),
    (-1, -1, 0),
    (-1, -1, 1),
    (-1, 0, -1),
    (-1, 0, 0),
    (-1, 0, 1),
    (-1, 1, -1),
    (-1, 1, 0),
    (-1, 1, 1),
    (0, -1, -1),
    (0, -1, 0),
    (0, -1, 1),
    (0, 0, -1),
    (0, 0, 1),
    (0, 1, -1),
    (0, 1, 0),
    (0, 1, 1),
    (1, -1, -1),
    (1, -1, 0),
    (1, -1, 1),
    (1, 0, -1),
    (1, 0, 0),
    (1, 0, 1),
    (1, 1, -1),
    (1, 1, 0),
    (1, 1, 1),
];

/// Texture feature keys usable for both global extraction and local maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum TextureFeature {
    GlcmIdn,
    GlrlmLongRunEmphasis,
    GldmDependenceNonUniformityNormalized,
    GldmLargeDependenceEmphasis,
}

impl TextureFeature {
    pub const ALL: [TextureFeature; 4] = [
        TextureFeature::GlcmIdn,
        TextureFeature::GlrlmLongRunEmphasis,
        TextureFeature::GldmDependenceNonUniformityNormalized,
        TextureFeature::GldmLargeDependenceEmphasis,
    ];

    pub fn canonical_key(&self) -> &'static str {
        match self {
            TextureFeature::GlcmIdn => "original_glcm_Idn",
            TextureFeature::GlrlmLongRunEmphasis => "original_glrlm_LongRunEmphasis",
            TextureFeature::GldmDependenceNonUniformityNormalized => {
                "original_gldm_DependenceNonUniformityNormalized"
            }
            TextureFeature::GldmLargeDependenceEmphasis => "original_gldm_LargeDependenceEmphasis",
        }
    }

    pub fn parse(key: &str) -> Result<Self> {
        let short = key.strip_prefix("original_").unwrap_or(key);
        match short {
            "glcm_Idn" => Ok(TextureFeature::GlcmIdn),
            "glrlm_LongRunEmphasis" => Ok(TextureFeature::GlrlmLongRunEmphasis),
            "gldm_DependenceNonUniformityNormalized" => {
                Ok(TextureFeature::GldmDependenceNonUniformityNormalized)
            }
            "gldm_LargeDependenceEmphasis" => Ok(TextureFeature::GldmLargeDependenceEmphasis),
            _ => Err(Error::UnknownFeature(key.to_string())),
        }
    }
}

impl std::fmt::Display for TextureFeature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.canonical_key())
    }
}

/// Any feature key handled by [`extract_global`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKey {
    Maximum3dDiameter,
    Maximum2dDiameterSlice,
    FirstOrderMaximum,
    Texture(TextureFeature),
}

impl FeatureKey {
    /// The four features used as the default global set.
    pub const DEFAULT_SET: [FeatureKey; 4] = [
        FeatureKey::Maximum3dDiameter,
        FeatureKey::Maximum2dDiameterSlice,
        FeatureKey::FirstOrderMaximum,
        FeatureKey::Texture(TextureFeature::GlcmIdn),
    ];

    pub fn canonical_key(&self) -> &'static str {
        match self {
            FeatureKey::Maximum3dDiameter => "original_shape_Maximum3DDiameter",
            FeatureKey::Maximum2dDiameterSlice => "original_shape_Maximum2DDiameterSlice",
            FeatureKey::FirstOrderMaximum => "original_firstorder_Maximum",
            FeatureKey::Texture(t) => t.canonical_key(),
        }
    }

    pub fn parse(key: &str) -> Result<Self> {
        let short = key.strip_prefix("original_").unwrap_or(key);
        match short {
            "shape_Maximum3DDiameter" => Ok(FeatureKey::Maximum3dDiameter),
            "shape_Maximum2DDiameterSlice" => Ok(FeatureKey::Maximum2dDiameterSlice),
            "firstorder_Maximum" => Ok(FeatureKey::FirstOrderMaximum),
            _ => TextureFeature::parse(key).map(FeatureKey::Texture),
        }
    }
}

/// Symmetric gray-level co-occurrence matrix accumulated over the 13 unique
/// offsets.
#[derive(Debug, Clone)]
pub struct Glcm {
    pub ng: usize,
    /// `ng x ng` pair counts, row-major; always integer-valued.
    pub counts: Vec<f64>,
    /// Counts normalized to sum 1.
    pub probabilities: Vec<f64>,
    /// Sum of all counts (twice the number of unordered pairs).
    pub total: f64,
}

/// Gray-level run-length matrix accumulated over the 13 directions.
#[derive(Debug, Clone)]
pub struct Glrlm {
    pub ng: usize,
    pub max_len: usize,
    /// `ng x max_len` run counts; `counts[i][j]` = runs of level `i+1`,
    /// length `j+1`.
    pub counts: Vec<f64>,
    pub num_runs: f64,
}

/// Gray-level dependence matrix over the 26-neighborhood.
#[derive(Debug, Clone)]
pub struct Gldm {
    pub ng: usize,
    /// Maximum dependence count (center plus 26 neighbors).
    pub max_dep: usize,
    /// `ng x max_dep` counts; `counts[i][j]` = ROI voxels of level `i+1`
    /// with dependence `j+1`.
    pub counts: Vec<f64>,
    /// Number of counted ROI voxels.
    pub total: f64,
    pub alpha: u32,
}

#[inline]
fn in_bounds(z: i64, y: i64, x: i64, dims: &crate::volume::Dims) -> bool {
    z >= 0 && y >= 0 && x >= 0 && (z as usize) < dims.z && (y as usize) < dims.y && (x as usize) < dims.x
}

/// Builds the symmetric GLCM. Errors if the ROI is empty or no co-occurring
/// pair exists (an isolated voxel has no texture).
pub fn build_glcm(q: &QuantizedVolume) -> Result<Glcm> {
    let ng = q.num_levels;
    if ng == 0 {
        return Err(Error::EmptyRoi("GLCM requires a nonempty ROI".into()));
    }
    let dims = q.dims;
    let mut counts = vec![0.0f64; ng * ng];
    let mut total = 0.0f64;
    for z in 0..dims.z {
        for y in 0..dims.y {
            for x in 0..dims.x {
                let a = q.levels[dims.index(z, y, x)];
                if a == 0 {
                    continue;
                }
                for &(dz, dy, dx) in &DIRECTIONS_13 {
                    let (nz, ny, nx) = (z as i64 + i64::from(dz), y as i64 + i64::from(dy), x as i64 + i64::from(dx));
                    if !in_bounds(nz, ny, nx, &dims) {
                        continue;
                    }
                    let b = q.levels[dims.index(nz as usize, ny as usize, nx as usize)];
                    if b == 0 {
                        continue;
                    }
                    let (ai, bi) = ((a - 1) as usize, (b - 1) as usize);
                    counts[ai * ng + bi] += 1.0;
                    counts[bi * ng + ai] += 1.0;
                    total += 2.0;
                }
            }
        }
    }
    if total == 0.0 {
        return Err(Error::EmptyMatrix(
            "GLCM has no co-occurring voxel pairs".into(),
        ));
    }
    let probabilities = counts.iter().map(|&c| c / total).collect();
    Ok(Glcm {
        ng,
        counts,
        probabilities,
        total,
    })
}

/// Builds the GLRLM over a chosen direction subset. Runs are maximal
/// same-level segments; out-of-ROI voxels break runs.
pub fn build_glrlm_dirs(q: &QuantizedVolume, dirs: &[(i32, i32, i32)]) -> Result<Glrlm> {
    let ng = q.num_levels;
    if ng == 0 {
        return Err(Error::EmptyRoi("GLRLM requires a nonempty ROI".into()));
    }
    let dims = q.dims;
    let max_len = dims.z.max(dims.y).max(dims.x);
    let mut counts = vec![0.0f64; ng * max_len];
    let mut num_runs = 0.0f64;
    for &(dz, dy, dx) in dirs {
        for z in 0..dims.z {
            for y in 0..dims.y {
                for x in 0..dims.x {
                    let level = q.levels[dims.index(z, y, x)];
                    if level == 0 {
                        continue;
                    }
                    // Run head: the previous voxel along the direction is
                    // outside the volume or carries a different level.
                    let (pz, py, px) = (z as i64 - i64::from(dz), y as i64 - i64::from(dy), x as i64 - i64::from(dx));
                    if in_bounds(pz, py, px, &dims)
                        && q.levels[dims.index(pz as usize, py as usize, px as usize)] == level
                    {
                        continue;
                    }
                    let mut len = 1usize;
                    let (mut nz, mut ny, mut nx) = (z as i64 + i64::from(dz), y as i64 + i64::from(dy), x as i64 + i64::from(dx));
                    while in_bounds(nz, ny, nx, &dims)
                        && q.levels[dims.index(nz as usize, ny as usize, nx as usize)] == level
                    {
                        len += 1;
                        nz += i64::from(dz);
                        ny += i64::from(dy);
                        nx += i64::from(dx);
                    }
                    counts[(level as usize - 1) * max_len + (len - 1)] += 1.0;
                    num_runs += 1.0;
                }
            }
        }
    }
    Ok(Glrlm {
        ng,
        max_len,
        counts,
        num_runs,
    })
}

pub fn build_glrlm(q: &QuantizedVolume) -> Result<Glrlm> {
    build_glrlm_dirs(q, &DIRECTIONS_13)
}

/// Builds the GLDM: for every ROI voxel, the dependence count is 1 (the
/// center) plus the number of in-ROI 26-neighbors within `alpha` levels.
pub fn build_gldm(q: &QuantizedVolume, alpha: u32) -> Result<Gldm> {
    let ng = q.num_levels;
    if ng == 0 {
        return Err(Error::EmptyRoi("GLDM requires a nonempty ROI".into()));
    }
    let dims = q.dims;
    let max_dep = 27;
    let mut counts = vec![0.0f64; ng * max_dep];
    let mut total = 0.0f64;
    for z in 0..dims.z {
        for y in 0..dims.y {
            for x in 0..dims.x {
                let level = q.levels[dims.index(z, y, x)];
                if level == 0 {
                    continue;
                }
                let mut dep = 1usize;
                for &(dz, dy, dx) in &NEIGHBOR_OFFSETS_26 {
                    let (nz, ny, nx) = (z as i64 + i64::from(dz), y as i64 + i64::from(dy), x as i64 + i64::from(dx));
                    if !in_bounds(nz, ny, nx, &dims) {
                        continue;
                    }
                    let b = q.levels[dims.index(nz as usize, ny as usize, nx as usize)];
                    if b != 0 && level.abs_diff(b) <= alpha {
                        dep += 1;
                    }
                }
                counts[(level as usize - 1) * max_dep + (dep - 1)] += 1.0;
                total += 1.0;
            }
        }
    }
    Ok(Gldm {
        ng,
        max_dep,
        counts,
        total,
        alpha,
    })
}

// Scalar evaluations shared by the global path and the sliding-window
// kernels. Each sums exact integer-valued terms and divides once at the
// end, so results do not depend on accumulation order.

pub(crate) fn idn_weights(ng: usize) -> Vec<f64> {
    let ngf = ng as f64;
    (0..ng).map(|k| 1.0 + k as f64 / ngf).collect()
}

pub(crate) fn idn_from_diff_hist_weighted(diff: &[i64], total: i64, weights: &[f64]) -> f64 {
    let totalf = total as f64;
    let mut acc = 0.0f64;
    for (&d, &w) in diff.iter().zip(weights) {
        if d != 0 {
            acc += (d as f64 / totalf) / w;
        }
    }
    acc
}

pub(crate) fn idn_from_diff_hist(diff: &[i64], total: i64, ng: usize) -> f64 {
    idn_from_diff_hist_weighted(diff, total, &idn_weights(ng))
}

pub(crate) fn lre_from_sums(sum_len_sq: i64, num_runs: i64) -> f64 {
    sum_len_sq as f64 / num_runs as f64
}

pub(crate) fn dnun_from_hist(dep_hist: &[i64], nz: i64) -> f64 {
    let mut acc = 0.0f64;
    for &h in dep_hist {
        if h != 0 {
            let hf = h as f64;
            acc += hf * hf;
        }
    }
    let nzf = nz as f64;
    acc / (nzf * nzf)
}

pub(crate) fn lde_from_hist(dep_hist: &[i64], nz: i64) -> f64 {
    let mut acc = 0i64;
    for (j, &h) in dep_hist.iter().enumerate() {
        let dep = (j + 1) as i64;
        acc += h * dep * dep;
    }
    acc as f64 / nz as f64
}

impl Glcm {
    /// Inverse difference normalized.
    pub fn idn(&self) -> f64 {
        let mut diff = vec![0i64; self.ng];
        for i in 0..self.ng {
            for j in 0..self.ng {
                let c = self.counts[i * self.ng + j];
                if c != 0.0 {
                    diff[i.abs_diff(j)] += c as i64;
                }
            }
        }
        idn_from_diff_hist(&diff, self.total as i64, self.ng)
    }
}

impl Glrlm {
    /// Long-run emphasis.
    pub fn long_run_emphasis(&self) -> Result<f64> {
        if self.num_runs == 0.0 {
            return Err(Error::EmptyMatrix("GLRLM has no runs".into()));
        }
        let mut sum = 0i64;
        for i in 0..self.ng {
            for j in 0..self.max_len {
                let c = self.counts[i * self.max_len + j] as i64;
                let len = (j + 1) as i64;
                sum += c * len * len;
            }
        }
        Ok(lre_from_sums(sum, self.num_runs as i64))
    }
}

impl Gldm {
    fn dep_hist(&self) -> Vec<i64> {
        let mut hist = vec![0i64; self.max_dep];
        for i in 0..self.ng {
            for j in 0..self.max_dep {
                hist[j] += self.counts[i * self.max_dep + j] as i64;
            }
        }
        hist
    }

    /// Dependence non-uniformity normalized.
    pub fn dependence_non_uniformity_normalized(&self) -> Result<f64> {
        if self.total == 0.0 {
            return Err(Error::EmptyMatrix("GLDM counted no voxels".into()));
        }
        Ok(dnun_from_hist(&self.dep_hist(), self.total as i64))
    }

    /// Large-dependence emphasis.
    pub fn large_dependence_emphasis(&self) -> Result<f64> {
        if self.total == 0.0 {
            return Err(Error::EmptyMatrix("GLDM counted no voxels".into()));
        }
        Ok(lde_from_hist(&self.dep_hist(), self.total as i64))
    }
}

/// Borrowed view over any of the three texture matrices.
pub enum MatrixRef<'a> {
    Glcm(&'a Glcm),
    Glrlm(&'a Glrlm),
    Gldm(&'a Gldm),
}

/// Evaluates a named texture feature, rejecting key/matrix family
/// mismatches.
pub fn texture_feature(matrix: MatrixRef<'_>, key: TextureFeature) -> Result<f64> {
    match (matrix, key) {
        (MatrixRef::Glcm(m), TextureFeature::GlcmIdn) => Ok(m.idn()),
        (MatrixRef::Glrlm(m), TextureFeature::GlrlmLongRunEmphasis) => m.long_run_emphasis(),
        (MatrixRef::Gldm(m), TextureFeature::GldmDependenceNonUniformityNormalized) => {
            m.dependence_non_uniformity_normalized()
        }
        (MatrixRef::Gldm(m), TextureFeature::GldmLargeDependenceEmphasis) => {
            m.large_dependence_emphasis()
        }
        (_, key) => Err(Error::FeatureMatrixMismatch(format!(
            "{key} cannot be computed from the given matrix family"
        ))),
    }
}

/// Maximum 3D and within-slice 2D diameters between ROI voxel centers, in
/// millimeters.
///
/// Only per-row extreme voxels (the min-x and max-x ROI voxel of each
/// `(z, y)` row) can realize a maximum pairwise distance, which keeps the
/// pair scan tractable; those extremes are surface voxels by construction.
pub fn shape_diameters(mask: &RoiMask, spacing: Spacing) -> Result<(f64, f64)> {
    let dims = mask.dims;
    let mut candidates: Vec<(usize, usize, usize)> = Vec::new();
    for z in 0..dims.z {
        for y in 0..dims.y {
            let mut min_x = None;
            let mut max_x = None;
            for x in 0..dims.x {
                if mask.voxels[dims.index(z, y, x)] != 0 {
                    if min_x.is_none() {
                        min_x = Some(x);
                    }
                    max_x = Some(x);
                }
            }
            if let Some(lo) = min_x {
                candidates.push((z, y, lo));
                let hi = max_x.unwrap();
                if hi != lo {
                    candidates.push((z, y, hi));
                }
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::EmptyRoi("shape diameters require a nonempty mask".into()));
    }
    let mut max3d = 0.0f64;
    let mut max2d = 0.0f64;
    for i in 0..candidates.len() {
        let (az, ay, ax) = candidates[i];
        for &(bz, by, bx) in candidates.iter().skip(i + 1) {
            let dz = (az as f64 - bz as f64) * spacing.z;
            let dy = (ay as f64 - by as f64) * spacing.y;
            let dx = (ax as f64 - bx as f64) * spacing.x;
            let d2 = dz * dz + dy * dy + dx * dx;
            if d2 > max3d {
                max3d = d2;
            }
            if az == bz && d2 > max2d {
                max2d = d2;
            }
        }
    }
    Ok((max3d.sqrt(), max2d.sqrt()))
}

/// Maximum HU over ROI voxels.
pub fn firstorder_max(volume: &CtVolume, mask: &RoiMask) -> Result<f64> {
    if volume.dims != mask.dims {
        return Err(Error::DimMismatch(format!(
            "volume dims {} != mask dims {}",
            volume.dims, mask.dims
        )));
    }
    let max = volume
        .voxels
        .iter()
        .zip(&mask.voxels)
        .filter(|(_, &m)| m != 0)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max.is_finite() {
        Ok(max)
    } else {
        Err(Error::EmptyRoi("firstorder maximum requires a nonempty mask".into()))
    }
}

/// Ordered feature-key -> value map with unique keys.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector {
    entries: Vec<(String, f64)>,
}

impl FeatureVector {
    pub fn new() -> Self {
        FeatureVector { entries: Vec::new() }
    }

    pub fn insert(&mut self, key: impl Into<String>, value: f64) -> Result<()> {
        let key = key.into();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("feature {key} is not finite")));
        }
        if self.entries.iter().any(|(k, _)| *k == key) {
            return Err(Error::InvalidArgument(format!("duplicate feature key {key}")));
        }
        self.entries.push((key, value));
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn values_for(&self, keys: &[String]) -> Result<Vec<f64>> {
        keys.iter()
            .map(|k| self.get(k).ok_or_else(|| Error::MissingFeature(k.clone())))
            .collect()
    }
}

/// Extraction knobs shared by global and local feature computation.
#[derive(Debug, Clone, Copy)]
pub struct ExtractOptions {
    pub bin_width: f64,
    pub gldm_alpha: u32,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            bin_width: DEFAULT_BIN_WIDTH,
            gldm_alpha: 0,
        }
    }
}

/// Runs discretization once, builds each required matrix once and returns
/// the requested keys in order.
pub fn extract_global(sample: &Sample, keys: &[FeatureKey]) -> Result<FeatureVector> {
    extract_global_with(sample, keys, ExtractOptions::default())
}

pub fn extract_global_with(
    sample: &Sample,
    keys: &[FeatureKey],
    opts: ExtractOptions,
) -> Result<FeatureVector> {
    let mut quantized: Option<QuantizedVolume> = None;
    let mut glcm: Option<Glcm> = None;
    let mut glrlm: Option<Glrlm> = None;
    let mut gldm: Option<Gldm> = None;
    let mut shape: Option<(f64, f64)> = None;

    let mut out = FeatureVector::new();
    for key in keys {
        let value = match key {
            FeatureKey::Maximum3dDiameter | FeatureKey::Maximum2dDiameterSlice => {
                if shape.is_none() {
                    shape = Some(shape_diameters(&sample.mask, sample.volume.spacing)?);
                }
                let (d3, d2) = shape.unwrap();
                if *key == FeatureKey::Maximum3dDiameter {
                    d3
                } else {
                    d2
                }
            }
            FeatureKey::FirstOrderMaximum => firstorder_max(&sample.volume, &sample.mask)?,
            FeatureKey::Texture(t) => {
                if quantized.is_none() {
                    quantized = Some(discretize(&sample.volume, &sample.mask, opts.bin_width)?);
                }
                let q = quantized.as_ref().unwrap();
                match t {
                    TextureFeature::GlcmIdn => {
                        if glcm.is_none() {
                            glcm = Some(build_glcm(q)?);
                        }
                        texture_feature(MatrixRef::Glcm(glcm.as_ref().unwrap()), *t)?
                    }
                    TextureFeature::GlrlmLongRunEmphasis => {
                        if glrlm.is_none() {
                            glrlm = Some(build_glrlm(q)?);
                        }
                        texture_feature(MatrixRef::Glrlm(glrlm.as_ref().unwrap()), *t)?
                    }
                    TextureFeature::GldmDependenceNonUniformityNormalized
                    | TextureFeature::GldmLargeDependenceEmphasis => {
                        if gldm.is_none() {
                            gldm = Some(build_gldm(q, opts.gldm_alpha)?);
                        }
                        texture_feature(MatrixRef::Gldm(gldm.as_ref().unwrap()), *t)?
                    }
                }
            }
        };
        out.insert(key.canonical_key(), value)?;
    }
    Ok(out)
}

/// Per-sample named feature values with labels, persisted as delimited text.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub feature_keys: Vec<String>,
    pub ids: Vec<String>,
    /// Row-major sample values, one row per id.
    pub values: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl FeatureTable {
    pub fn new(feature_keys: Vec<String>) -> Self {
        FeatureTable {
            feature_keys,
            ids: Vec::new(),
            values: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn n_samples(&self) -> usize {
        self.ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_keys.len()
    }

    pub fn push_row(&mut self, id: impl Into<String>, features: &FeatureVector, label: u8) -> Result<()> {
        let row = features.values_for(&self.feature_keys)?;
        self.ids.push(id.into());
        self.values.push(row);
        self.labels.push(label);
        Ok(())
    }

    pub fn push_raw_row(&mut self, id: impl Into<String>, row: Vec<f64>, label: u8) -> Result<()> {
        if row.len() != self.feature_keys.len() {
            return Err(Error::DimMismatch(format!(
                "row has {} values, table has {} features",
                row.len(),
                self.feature_keys.len()
            )));
        }
        self.ids.push(id.into());
        self.values.push(row);
        self.labels.push(label);
        Ok(())
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[k]).collect()
    }

    /// Row subset in the given order.
    pub fn subset(&self, indices: &[usize]) -> FeatureTable {
        FeatureTable {
            feature_keys: self.feature_keys.clone(),
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            values: indices.iter().map(|&i| self.values[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Writes `id,<feature...>,label` rows with a header line.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("id");
        for key in &self.feature_keys {
            out.push(',');
            out.push_str(key);
        }
        out.push_str(",label\n");
        for i in 0..self.n_samples() {
            out.push_str(&self.ids[i]);
            for v in &self.values[i] {
                out.push(',');
                out.push_str(&format!("{v:.17e}"));
            }
            out.push_str(&format!(",{}\n", self.labels[i]));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<FeatureTable> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Header(format!("{}: empty table", path.display())))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 2 || cols[0] != "id" || cols[cols.len() - 1] != "label" {
            return Err(Error::Header(format!(
                "{}: expected header id,<features...>,label",
                path.display()
            )));
        }
        let feature_keys: Vec<String> = cols[1..cols.len() - 1].iter().map(|s| s.to_string()).collect();
        let mut table = FeatureTable::new(feature_keys);
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != cols.len() {
                return Err(Error::Header(format!(
                    "{}:{}: expected {} fields, got {}",
                    path.display(),
                    lineno + 2,
                    cols.len(),
                    parts.len()
                )));
            }
            let id = parts[0].to_string();
            let mut row = Vec::with_capacity(table.feature_keys.len());
            for p in &parts[1..parts.len() - 1] {
                row.push(p.parse::<f64>().map_err(|e| {
                    Error::Header(format!("{}:{}: {e}", path.display(), lineno + 2))
                })?);
            }
            let label: u8 = parts[parts.len() - 1].parse().map_err(|e| {
                Error::Header(format!("{}:{}: {e}", path.display(), lineno + 2))
            })?;
            table.push_raw_row(id, row, label)?;
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantize::discretize;
    use crate::volume::{CtVolume, Dims, RoiMask, Sample, Spacing};

    fn quantized_line(levels: &[u32]) -> QuantizedVolume {
        let dims = Dims::new(1, 1, levels.len());
        QuantizedVolume {
            dims,
            levels: levels.to_vec(),
            num_levels: levels.iter().copied().max().unwrap_or(0) as usize,
            bin_width: 1.0,
            origin: 0.0,
        }
    }

    fn quantized_cube(dims: Dims, levels: Vec<u32>) -> QuantizedVolume {
        let num_levels = levels.iter().copied().max().unwrap_or(0) as usize;
        QuantizedVolume {
            dims,
            levels,
            num_levels,
            bin_width: 1.0,
            origin: 0.0,
        }
    }

    #[test]
    fn glcm_line_counts_and_probabilities() {
        let q = quantized_line(&[1, 1, 2, 2]);
        let g = build_glcm(&q).unwrap();
        assert_eq!(g.ng, 2);
        // counts: (1,1)=2, (1,2)=1, (2,1)=1, (2,2)=2
        assert_eq!(g.counts, vec![2.0, 1.0, 1.0, 2.0]);
        assert_eq!(g.total, 6.0);
        let sum: f64 = g.probabilities.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        // symmetry
        assert_eq!(g.counts[1], g.counts[2]);
    }

    #[test]
    fn glcm_idn_derived_value() {
        let q = quantized_line(&[1, 1, 2, 2]);
        let g = build_glcm(&q).unwrap();
        let idn = texture_feature(MatrixRef::Glcm(&g), TextureFeature::GlcmIdn).unwrap();
        let expected = (4.0 / 6.0) + (2.0 / 6.0) / (1.0 + 0.5);
        assert!((idn - expected).abs() < 1e-15, "idn {idn} vs {expected}");
        assert!((idn - 8.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn glcm_constant_roi_gives_idn_one() {
        let q = quantized_cube(Dims::new(2, 2, 2), vec![1; 8]);
        let g = build_glcm(&q).unwrap();
        assert_eq!(g.counts.len(), 1);
        assert_eq!(g.probabilities[0], 1.0);
        assert_eq!(g.idn(), 1.0);
    }

    #[test]
    fn glcm_isolated_voxel_is_empty() {
        let q = quantized_cube(Dims::new(3, 3, 3), {
            let mut v = vec![0u32; 27];
            v[13] = 1;
            v
        });
        assert!(matches!(build_glcm(&q), Err(Error::EmptyMatrix(_))));
    }

    #[test]
    fn glrlm_single_direction_runs() {
        let q = quantized_line(&[1, 1, 2, 2]);
        let g = build_glrlm_dirs(&q, &[(0, 0, 1)]).unwrap();
        assert_eq!(g.num_runs, 2.0);
        // one run of level 1 length 2, one of level 2 length 2
        assert_eq!(g.counts[0 * g.max_len + 1], 1.0);
        assert_eq!(g.counts[1 * g.max_len + 1], 1.0);
    }

    #[test]
    fn glrlm_single_voxel_runs_once_per_direction() {
        let q = quantized_cube(Dims::new(3, 3, 3), {
            let mut v = vec![0u32; 27];
            v[13] = 1;
            v
        });
        let g = build_glrlm(&q).unwrap();
        assert_eq!(g.num_runs, 13.0);
        assert_eq!(g.counts[0], 13.0);
    }

    #[test]
    fn glrlm_constant_line_is_one_run() {
        let q = quantized_line(&[3, 3, 3, 3, 3]);
        let g = build_glrlm_dirs(&q, &[(0, 0, 1)]).unwrap();
        assert_eq!(g.num_runs, 1.0);
        assert_eq!(g.counts[2 * g.max_len + 4], 1.0);
    }

    #[test]
    fn glrlm_long_run_emphasis_single_run() {
        let q = quantized_line(&[1, 1, 1, 1]);
        let g = build_glrlm_dirs(&q, &[(0, 0, 1)]).unwrap();
        let lre = texture_feature(MatrixRef::Glrlm(&g), TextureFeature::GlrlmLongRunEmphasis).unwrap();
        assert_eq!(lre, 16.0);
    }

    #[test]
    fn gldm_constant_cube() {
        let q = quantized_cube(Dims::new(2, 2, 2), vec![1; 8]);
        let g = build_gldm(&q, 0).unwrap();
        assert_eq!(g.total, 8.0);
        // every voxel has 7 in-ROI equal neighbors -> dependence 8
        assert_eq!(g.counts[0 * g.max_dep + 7], 8.0);
        let dnun = g.dependence_non_uniformity_normalized().unwrap();
        assert_eq!(dnun, 1.0);
        let lde = g.large_dependence_emphasis().unwrap();
        assert_eq!(lde, 64.0);
    }

    #[test]
    fn gldm_single_voxel() {
        let q = quantized_cube(Dims::new(3, 3, 3), {
            let mut v = vec![0u32; 27];
            v[0] = 2;
            v
        });
        let g = build_gldm(&q, 0).unwrap();
        assert_eq!(g.counts[(2 - 1) * g.max_dep + 0], 1.0);
    }

    #[test]
    fn gldm_alpha_saturates() {
        // alpha >= Ng counts every in-ROI neighbor regardless of level
        let q = quantized_line(&[1, 5, 2, 4]);
        let g = build_gldm(&q, 10).unwrap();
        // endpoints have 1 neighbor -> dep 2; middles have 2 -> dep 3
        let hist = g.dep_hist();
        assert_eq!(hist[1], 2);
        assert_eq!(hist[2], 2);
    }

    #[test]
    fn texture_feature_rejects_family_mismatch() {
        let q = quantized_line(&[1, 1, 2, 2]);
        let g = build_glcm(&q).unwrap();
        assert!(matches!(
            texture_feature(MatrixRef::Glcm(&g), TextureFeature::GlrlmLongRunEmphasis),
            Err(Error::FeatureMatrixMismatch(_))
        ));
    }

    #[test]
    fn shape_diameters_triangle() {
        let dims = Dims::new(1, 4, 5);
        let mut m = RoiMask::empty(dims);
        m.voxels[dims.index(0, 0, 0)] = 1;
        m.voxels[dims.index(0, 3, 4)] = 1;
        let (d3, d2) = shape_diameters(&m, Spacing::isotropic(1.0)).unwrap();
        assert_eq!(d3, 5.0);
        assert_eq!(d2, 5.0);
    }

    #[test]
    fn shape_diameters_single_voxel() {
        let dims = Dims::new(2, 2, 2);
        let mut m = RoiMask::empty(dims);
        m.voxels[0] = 1;
        let (d3, d2) = shape_diameters(&m, Spacing::isotropic(1.0)).unwrap();
        assert_eq!(d3, 0.0);
        assert_eq!(d2, 0.0);
    }

    #[test]
    fn shape_diameters_spacing_scaling() {
        let dims = Dims::new(3, 1, 1);
        let mut m = RoiMask::empty(dims);
        m.voxels[dims.index(0, 0, 0)] = 1;
        m.voxels[dims.index(2, 0, 0)] = 1;
        let (d3, d2) = shape_diameters(&m, Spacing::new(2.0, 1.0, 1.0)).unwrap();
        assert_eq!(d3, 4.0);
        assert_eq!(d2, 0.0);
    }

    #[test]
    fn shape_diameters_empty_mask_errors() {
        let m = RoiMask::empty(Dims::new(2, 2, 2));
        assert!(shape_diameters(&m, Spacing::isotropic(1.0)).is_err());
    }

    #[test]
    fn firstorder_max_examples() {
        let dims = Dims::new(1, 1, 3);
        let v = CtVolume::new(dims, Spacing::isotropic(1.0), vec![-120.0, -80.0, -3.0]).unwrap();
        let m = RoiMask::new(dims, vec![1, 1, 1]).unwrap();
        assert_eq!(firstorder_max(&v, &m).unwrap(), -3.0);
        let m2 = RoiMask::new(dims, vec![1, 0, 0]).unwrap();
        assert_eq!(firstorder_max(&v, &m2).unwrap(), -120.0);
        let empty = RoiMask::empty(dims);
        assert!(firstorder_max(&v, &empty).is_err());
    }

    fn small_sample() -> Sample {
        let dims = Dims::new(4, 4, 4);
        let values: Vec<f64> = (0..64).map(|i| -200.0 + f64::from(i as i32 % 13) * 9.0).collect();
        let v = CtVolume::new(dims, Spacing::isotropic(1.0), values).unwrap();
        let m = RoiMask::new(dims, vec![1; 64]).unwrap();
        Sample::new("s", v, m, 0).unwrap()
    }

    #[test]
    fn extract_global_default_has_four_entries() {
        let s = small_sample();
        let fv = extract_global(&s, &FeatureKey::DEFAULT_SET).unwrap();
        assert_eq!(fv.len(), 4);
        assert!(fv.get("original_glcm_Idn").is_some());
        assert!(fv.get("original_shape_Maximum3DDiameter").is_some());
    }

    #[test]
    fn extract_global_extra_key_gives_five() {
        let s = small_sample();
        let mut keys = FeatureKey::DEFAULT_SET.to_vec();
        keys.push(FeatureKey::Texture(TextureFeature::GldmLargeDependenceEmphasis));
        let fv = extract_global(&s, &keys).unwrap();
        assert_eq!(fv.len(), 5);
    }

    #[test]
    fn extract_global_empty_roi_errors() {
        let dims = Dims::new(4, 4, 4);
        let v = CtVolume::new(dims, Spacing::isotropic(1.0), vec![0.0; 64]).unwrap();
        let m = RoiMask::empty(dims);
        let s = Sample::new("s", v, m, 0).unwrap();
        assert!(extract_global(&s, &FeatureKey::DEFAULT_SET).is_err());
    }

    #[test]
    fn texture_features_invariant_to_roi_translation() {
        // Same pattern placed at two corners of a larger volume.
        let dims = Dims::new(6, 6, 6);
        let pattern = [1u32, 2, 1, 3, 2, 2, 1, 1];
        let mut a = vec![0u32; dims.count()];
        let mut b = vec![0u32; dims.count()];
        let mut k = 0;
        for z in 0..2 {
            for y in 0..2 {
                for x in 0..2 {
                    a[dims.index(z, y, x)] = pattern[k];
                    b[dims.index(z + 3, y + 2, x + 4 - 1)] = pattern[k];
                    k += 1;
                }
            }
        }
        let qa = quantized_cube(dims, a);
        let qb = quantized_cube(dims, b);
        let ga = build_glcm(&qa).unwrap();
        let gb = build_glcm(&qb).unwrap();
        assert_eq!(ga.counts, gb.counts);
        let ra = build_glrlm(&qa).unwrap();
        let rb = build_glrlm(&qb).unwrap();
        assert_eq!(ra.counts, rb.counts);
        let da = build_gldm(&qa, 0).unwrap();
        let db = build_gldm(&qb, 0).unwrap();
        assert_eq!(da.counts, db.counts);
    }

    #[test]
    fn affine_intensity_rescale_preserves_matrices() {
        let dims = Dims::new(1, 2, 4);
        let values = vec![-250.0, -210.0, -180.0, -240.0, -170.0, -200.0, -255.0, -190.0];
        let v = CtVolume::new(dims, Spacing::isotropic(1.0), values.clone()).unwrap();
        let m = RoiMask::new(dims, vec![1; 8]).unwrap();
        let q1 = discretize(&v, &m, 25.0).unwrap();
        let scaled: Vec<f64> = values.iter().map(|x| 3.0 * x + 100.0).collect();
        let vs = CtVolume::new(dims, Spacing::isotropic(1.0), scaled).unwrap();
        let q2 = discretize(&vs, &m, 75.0).unwrap();
        assert_eq!(q1.levels, q2.levels);
        let g1 = build_glcm(&q1).unwrap();
        let g2 = build_glcm(&q2).unwrap();
        assert_eq!(g1.counts, g2.counts);
    }

    #[test]
    fn feature_table_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.csv");
        let mut t = FeatureTable::new(vec!["f_a".into(), "f_b".into()]);
        t.push_raw_row("s0", vec![1.5, -2.25], 0).unwrap();
        t.push_raw_row("s1", vec![0.001234, 7.0], 1).unwrap();
        t.save(&path).unwrap();
        let back = FeatureTable::load(&path).unwrap();
        assert_eq!(back, t);
    }
}
