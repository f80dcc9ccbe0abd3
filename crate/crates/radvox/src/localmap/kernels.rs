//! Sliding-window kernels for the local feature maps.
//!
//! All three kernels parallelize over z-slices; every voxel's output is a
//! pure function of the shared read-only inputs, so results are identical
//! for any worker count. Counting state is kept in integers and each scalar
//! feature is produced by the same evaluation helpers the global path uses,
//! which makes the maps bit-identical to the per-patch rebuild oracle.

use rayon::prelude::*;

use crate::features::{
    dnun_from_hist, idn_from_diff_hist_weighted, idn_weights, lde_from_hist, lre_from_sums,
    NEIGHBOR_OFFSETS_26,
};
use crate::quantize::QuantizedVolume;

/// Per-slice state for the GLCM kernel: per-x-plane pair histograms over
/// the current `(z, y)` rect. The z rect is fixed per slice task; the y rect
/// slides with `cy` (whole pair lines enter and leave), and the x window
/// slides with `cx` (whole plane histograms enter and leave). Every
/// co-occurring pair is therefore enumerated O(1) times per scan row
/// instead of once per covering window.
struct PlaneHists {
    ng: usize,
    /// Intra-plane pair histograms, `nx x ng`.
    ih: Vec<i32>,
    /// Cross-plane histograms for the plane pair `(x - 1, x)`, `nx x ng`.
    ch: Vec<i32>,
    ih_tot: Vec<i32>,
    ch_tot: Vec<i32>,
    plane_roi: Vec<i32>,
}

impl PlaneHists {
    fn new(nx: usize, ng: usize) -> Self {
        PlaneHists {
            ng,
            ih: vec![0; nx * ng],
            ch: vec![0; nx * ng],
            ih_tot: vec![0; nx],
            ch_tot: vec![0; nx],
            plane_roi: vec![0; nx],
        }
    }

    fn reset(&mut self) {
        self.ih.fill(0);
        self.ch.fill(0);
        self.ih_tot.fill(0);
        self.ch_tot.fill(0);
        self.plane_roi.fill(0);
    }
}

/// One `(x, y)` line of the transposed volume: z contiguous.
#[inline]
fn zline(t: &[u32], nzd: usize, ny: usize, x: usize, y: usize) -> &[u32] {
    let base = (x * ny + y) * nzd;
    &t[base..base + nzd]
}

/// Counts level pairs `(a[z], b[z + dz])` for each `dz` in `dzs`, both ends
/// inside `[z0, z1]` and in-ROI, into `hist` with the symmetric double
/// count. `sign` is +1 to add, -1 to remove.
fn pairs_between(
    a: &[u32],
    b: &[u32],
    z0: usize,
    z1: usize,
    dzs: &[isize],
    hist: &mut [i32],
    tot: &mut i32,
    sign: i32,
) {
    for &dz in dzs {
        let lo = (z0 as isize).max(z0 as isize - dz) as usize;
        let hi_s = (z1 as isize).min(z1 as isize - dz);
        if hi_s < lo as isize {
            continue;
        }
        let hi = hi_s as usize;
        for z in lo..=hi {
            let la = a[z];
            if la != 0 {
                let lb = b[(z as isize + dz) as usize];
                if lb != 0 {
                    hist[la.abs_diff(lb) as usize] += 2 * sign;
                    *tot += 2 * sign;
                }
            }
        }
    }
}

const DZ_HALF: [isize; 1] = [1];
const DZ_FULL: [isize; 3] = [-1, 0, 1];

/// Adds (`sign = 1`) or removes (`sign = -1`) the pair contributions of line
/// `yy`: pairs lying on the line itself plus pairs connecting it to
/// `partner` (the neighboring line inside the rect), for every x plane.
#[allow(clippy::too_many_arguments)]
fn line_update(
    ph: &mut PlaneHists,
    t: &[u32],
    nzd: usize,
    ny: usize,
    nx: usize,
    z0: usize,
    z1: usize,
    yy: usize,
    partner: Option<usize>,
    sign: i32,
) {
    let ng = ph.ng;
    for x in 0..nx {
        let vrow = zline(t, nzd, ny, x, yy);
        let mut roi = 0i32;
        for &l in &vrow[z0..=z1] {
            roi += i32::from(l != 0);
        }
        ph.plane_roi[x] += sign * roi;

        let ih = &mut ph.ih[x * ng..(x + 1) * ng];
        let mut it = 0i32;
        pairs_between(vrow, vrow, z0, z1, &DZ_HALF, ih, &mut it, sign);
        if let Some(py) = partner {
            let prow = zline(t, nzd, ny, x, py);
            pairs_between(vrow, prow, z0, z1, &DZ_FULL, ih, &mut it, sign);
        }
        ph.ih_tot[x] += it;

        if x > 0 {
            let ch = &mut ph.ch[x * ng..(x + 1) * ng];
            let mut ct = 0i32;
            let same_y = zline(t, nzd, ny, x - 1, yy);
            pairs_between(vrow, same_y, z0, z1, &DZ_FULL, ch, &mut ct, sign);
            if let Some(py) = partner {
                let diag_a = zline(t, nzd, ny, x - 1, py);
                pairs_between(vrow, diag_a, z0, z1, &DZ_FULL, ch, &mut ct, sign);
                let other_v = zline(t, nzd, ny, x - 1, yy);
                let diag_b = zline(t, nzd, ny, x, py);
                pairs_between(other_v, diag_b, z0, z1, &DZ_FULL, ch, &mut ct, sign);
            }
            ph.ch_tot[x] += ct;
        }
    }
}

/// GLCM inverse-difference-normalized map via two nested sliding windows
/// over integer pair histograms.
pub(super) fn glcm_idn_map(q: &QuantizedVolume, p: usize) -> (Vec<f64>, Vec<u8>) {
    let dims = q.dims;
    let (nz, ny, nx) = (dims.z, dims.y, dims.x);
    let plane = ny * nx;
    let ng = q.num_levels;
    let levels = q.levels.as_slice();
    let weights = idn_weights(ng);

    // Transposed copy with z contiguous: T[(x*ny + y)*nz + z].
    let mut transposed = vec![0u32; dims.count()];
    for z in 0..nz {
        for y in 0..ny {
            let src = (z * ny + y) * nx;
            for x in 0..nx {
                transposed[(x * ny + y) * nz + z] = levels[src + x];
            }
        }
    }
    let t = transposed.as_slice();

    let mut values = vec![0.0f64; dims.count()];
    let mut validity = vec![0u8; dims.count()];
    values
        .par_chunks_mut(plane)
        .zip(validity.par_chunks_mut(plane))
        .enumerate()
        .for_each(|(cz, (vals, valid))| {
            let z0 = cz.saturating_sub(p);
            let z1 = (cz + p).min(nz - 1);
            let mut ph = PlaneHists::new(nx, ng);
            let mut diff = vec![0i64; ng];
            ph.reset();
            let mut y_lo = 0usize;
            let mut y_hi = p.min(ny - 1);
            for yy in 0..=y_hi {
                let partner = if yy > y_lo { Some(yy - 1) } else { None };
                line_update(&mut ph, t, nz, ny, nx, z0, z1, yy, partner, 1);
            }
            for cy in 0..ny {
                let t_lo = cy.saturating_sub(p);
                let t_hi = (cy + p).min(ny - 1);
                while y_hi < t_hi {
                    y_hi += 1;
                    line_update(&mut ph, t, nz, ny, nx, z0, z1, y_hi, Some(y_hi - 1), 1);
                }
                while y_lo < t_lo {
                    let partner = if y_lo < y_hi { Some(y_lo + 1) } else { None };
                    line_update(&mut ph, t, nz, ny, nx, z0, z1, y_lo, partner, -1);
                    y_lo += 1;
                }

                diff.fill(0);
                let mut total = 0i64;
                let mut roi = 0i64;
                let mut lo = 0usize;
                let mut hi = p.min(nx - 1);
                for x in 0..=hi {
                    let ih = &ph.ih[x * ng..(x + 1) * ng];
                    for (b, &h) in diff.iter_mut().zip(ih) {
                        *b += i64::from(h);
                    }
                    total += i64::from(ph.ih_tot[x]);
                    roi += i64::from(ph.plane_roi[x]);
                    if x > 0 {
                        let chist = &ph.ch[x * ng..(x + 1) * ng];
                        for (b, &h) in diff.iter_mut().zip(chist) {
                            *b += i64::from(h);
                        }
                        total += i64::from(ph.ch_tot[x]);
                    }
                }
                for cx in 0..nx {
                    let t_xlo = cx.saturating_sub(p);
                    let t_xhi = (cx + p).min(nx - 1);
                    while hi < t_xhi {
                        hi += 1;
                        let ih = &ph.ih[hi * ng..(hi + 1) * ng];
                        let chist = &ph.ch[hi * ng..(hi + 1) * ng];
                        for ((b, &h), &c) in diff.iter_mut().zip(ih).zip(chist) {
                            *b += i64::from(h) + i64::from(c);
                        }
                        total += i64::from(ph.ih_tot[hi]) + i64::from(ph.ch_tot[hi]);
                        roi += i64::from(ph.plane_roi[hi]);
                    }
                    while lo < t_xlo {
                        // ch[lo + 1] holds the pairs between planes lo and
                        // lo + 1, which leave together with plane lo.
                        let ih = &ph.ih[lo * ng..(lo + 1) * ng];
                        let chist = &ph.ch[(lo + 1) * ng..(lo + 2) * ng];
                        for ((b, &h), &c) in diff.iter_mut().zip(ih).zip(chist) {
                            *b -= i64::from(h) + i64::from(c);
                        }
                        total -= i64::from(ph.ih_tot[lo]) + i64::from(ph.ch_tot[lo + 1]);
                        roi -= i64::from(ph.plane_roi[lo]);
                        lo += 1;
                    }
                    let out = cy * nx + cx;
                    if roi > 0 {
                        valid[out] = 1;
                        if total > 0 {
                            vals[out] = idn_from_diff_hist_weighted(&diff, total, &weights);
                        }
                    }
                }
            }
        });
    (values, validity)
}

/// GLRLM long-run-emphasis map. Maximal runs are precomputed once per
/// direction; within a patch, each global run clipped by the patch box
/// contributes one run whose length is read off in O(1) at its patch head.
pub(super) fn glrlm_lre_map(q: &QuantizedVolume, p: usize) -> (Vec<f64>, Vec<u8>) {
    let dims = q.dims;
    let (nz, ny, nx) = (dims.z, dims.y, dims.x);
    let plane = ny * nx;
    let levels = q.levels.as_slice();
    let dirs = crate::features::DIRECTIONS_13;

    // rem[d][v] = length of the maximal same-level run starting at v along
    // +d. Descending linear order visits v + d before v for every d.
    let mut rem: Vec<Vec<u16>> = vec![vec![0u16; dims.count()]; dirs.len()];
    for (d, &(dz, dy, dx)) in dirs.iter().enumerate() {
        let rd = &mut rem[d];
        for idx in (0..dims.count()).rev() {
            let lv = levels[idx];
            if lv == 0 {
                continue;
            }
            let (z, y, x) = dims.coords(idx);
            let (uz, uy, ux) = (z as isize + dz as isize, y as isize + dy as isize, x as isize + dx as isize);
            let next = if uz >= 0
                && uy >= 0
                && ux >= 0
                && (uz as usize) < nz
                && (uy as usize) < ny
                && (ux as usize) < nx
            {
                let uidx = ((uz as usize) * ny + uy as usize) * nx + ux as usize;
                if levels[uidx] == lv {
                    rd[uidx]
                } else {
                    0
                }
            } else {
                0
            };
            rd[idx] = next.saturating_add(1);
        }
    }

    let mut values = vec![0.0f64; dims.count()];
    let mut validity = vec![0u8; dims.count()];
    values
        .par_chunks_mut(plane)
        .zip(validity.par_chunks_mut(plane))
        .enumerate()
        .for_each(|(cz, (vals, valid))| {
            let z0 = cz.saturating_sub(p);
            let z1 = (cz + p).min(nz - 1);
            for cy in 0..ny {
                let y0 = cy.saturating_sub(p);
                let y1 = (cy + p).min(ny - 1);
                for cx in 0..nx {
                    let x0 = cx.saturating_sub(p);
                    let x1 = (cx + p).min(nx - 1);
                    let mut roi = 0i64;
                    for zz in z0..=z1 {
                        for yy in y0..=y1 {
                            let base = (zz * ny + yy) * nx;
                            for xx in x0..=x1 {
                                roi += i64::from(levels[base + xx] != 0);
                            }
                        }
                    }
                    let out = cy * nx + cx;
                    if roi == 0 {
                        continue;
                    }
                    valid[out] = 1;
                    let mut num_runs = 0i64;
                    let mut sum_len_sq = 0i64;
                    for (d, &(dz, dy, dx)) in dirs.iter().enumerate() {
                        let rd = &rem[d];
                        for zz in z0..=z1 {
                            for yy in y0..=y1 {
                                let base = (zz * ny + yy) * nx;
                                for xx in x0..=x1 {
                                    let lv = levels[base + xx];
                                    if lv == 0 {
                                        continue;
                                    }
                                    // Patch-run head: predecessor along d is
                                    // outside the box or a different level.
                                    let (wz, wy, wx) = (
                                        zz as isize - dz as isize,
                                        yy as isize - dy as isize,
                                        xx as isize - dx as isize,
                                    );
                                    if wz >= z0 as isize
                                        && wz <= z1 as isize
                                        && wy >= y0 as isize
                                        && wy <= y1 as isize
                                        && wx >= x0 as isize
                                        && wx <= x1 as isize
                                        && levels[((wz as usize) * ny + wy as usize) * nx + wx as usize]
                                            == lv
                                    {
                                        continue;
                                    }
                                    let mut m_box = usize::MAX;
                                    if dz > 0 {
                                        m_box = m_box.min(z1 - zz + 1);
                                    }
                                    if dy > 0 {
                                        m_box = m_box.min(y1 - yy + 1);
                                    } else if dy < 0 {
                                        m_box = m_box.min(yy - y0 + 1);
                                    }
                                    if dx > 0 {
                                        m_box = m_box.min(x1 - xx + 1);
                                    } else if dx < 0 {
                                        m_box = m_box.min(xx - x0 + 1);
                                    }
                                    let m = (rd[base + xx] as usize).min(m_box) as i64;
                                    sum_len_sq += m * m;
                                    num_runs += 1;
                                }
                            }
                        }
                    }
                    vals[out] = lre_from_sums(sum_len_sq, num_runs);
                }
            }
        });
    (values, validity)
}

/// GLDM map (dependence non-uniformity normalized or large-dependence
/// emphasis). Similar-neighbor relations are precomputed as 26-bit masks;
/// per patch only a box-boundary mask and a popcount remain.
pub(super) fn gldm_map(
    q: &QuantizedVolume,
    p: usize,
    alpha: u32,
    large_dependence: bool,
) -> (Vec<f64>, Vec<u8>) {
    let dims = q.dims;
    let (nz, ny, nx) = (dims.z, dims.y, dims.x);
    let plane = ny * nx;
    let levels = q.levels.as_slice();

    let mut neg_z = 0u32;
    let mut pos_z = 0u32;
    let mut neg_y = 0u32;
    let mut pos_y = 0u32;
    let mut neg_x = 0u32;
    let mut pos_x = 0u32;
    for (k, &(dz, dy, dx)) in NEIGHBOR_OFFSETS_26.iter().enumerate() {
        let bit = 1u32 << k;
        match dz {
            -1 => neg_z |= bit,
            1 => pos_z |= bit,
            _ => {}
        }
        match dy {
            -1 => neg_y |= bit,
            1 => pos_y |= bit,
            _ => {}
        }
        match dx {
            -1 => neg_x |= bit,
            1 => pos_x |= bit,
            _ => {}
        }
    }

    // similar[v]: bit k set iff neighbor k is in-volume, in-ROI and within
    // alpha levels of v.
    let mut similar = vec![0u32; dims.count()];
    similar
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(z, chunk)| {
            for y in 0..ny {
                for x in 0..nx {
                    let lv = levels[(z * ny + y) * nx + x];
                    if lv == 0 {
                        continue;
                    }
                    let mut bits = 0u32;
                    for (k, &(dz, dy, dx)) in NEIGHBOR_OFFSETS_26.iter().enumerate() {
                        let (uz, uy, ux) = (
                            z as isize + dz as isize,
                            y as isize + dy as isize,
                            x as isize + dx as isize,
                        );
                        if uz < 0 || uy < 0 || ux < 0 {
                            continue;
                        }
                        let (uz, uy, ux) = (uz as usize, uy as usize, ux as usize);
                        if uz >= nz || uy >= ny || ux >= nx {
                            continue;
                        }
                        let lu = levels[(uz * ny + uy) * nx + ux];
                        if lu != 0 && lv.abs_diff(lu) <= alpha {
                            bits |= 1 << k;
                        }
                    }
                    chunk[y * nx + x] = bits;
                }
            }
        });

    let mut values = vec![0.0f64; dims.count()];
    let mut validity = vec![0u8; dims.count()];
    values
        .par_chunks_mut(plane)
        .zip(validity.par_chunks_mut(plane))
        .enumerate()
        .for_each(|(cz, (vals, valid))| {
            let z0 = cz.saturating_sub(p);
            let z1 = (cz + p).min(nz - 1);
            let mut hist = [0i64; 27];
            for cy in 0..ny {
                let y0 = cy.saturating_sub(p);
                let y1 = (cy + p).min(ny - 1);
                for cx in 0..nx {
                    let x0 = cx.saturating_sub(p);
                    let x1 = (cx + p).min(nx - 1);
                    hist.fill(0);
                    let mut count = 0i64;
                    for zz in z0..=z1 {
                        let z_mask = {
                            let mut m = u32::MAX;
                            if zz == z0 {
                                m &= !neg_z;
                            }
                            if zz == z1 {
                                m &= !pos_z;
                            }
                            m
                        };
                        for yy in y0..=y1 {
                            let mut zy_mask = z_mask;
                            if yy == y0 {
                                zy_mask &= !neg_y;
                            }
                            if yy == y1 {
                                zy_mask &= !pos_y;
                            }
                            let base = (zz * ny + yy) * nx;
                            for xx in x0..=x1 {
                                if levels[base + xx] == 0 {
                                    continue;
                                }
                                let mut m = zy_mask;
                                if xx == x0 {
                                    m &= !neg_x;
                                }
                                if xx == x1 {
                                    m &= !pos_x;
                                }
                                let dep = 1 + (similar[base + xx] & m).count_ones() as usize;
                                hist[dep - 1] += 1;
                                count += 1;
                            }
                        }
                    }
                    let out = cy * nx + cx;
                    if count == 0 {
                        continue;
                    }
                    valid[out] = 1;
                    vals[out] = if large_dependence {
                        lde_from_hist(&hist, count)
                    } else {
                        dnun_from_hist(&hist, count)
                    };
                }
            }
        });
    (values, validity)
}
