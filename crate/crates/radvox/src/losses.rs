//! Training losses: the exponentially-weighted feature-bank de-correlation
//! loss with analytic gradients, binary cross-entropy, per-decoder
//! self-reconstruction and the combined objective.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Probability clamp applied inside every cross-entropy term.
pub const PROB_CLAMP: f64 = 1e-7;

/// Relative variance threshold below which a feature dimension is treated
/// as constant and contributes zero rows/columns to the correlation.
const DEGENERATE_VAR_REL: f64 = 1e-24;

/// Bounded FIFO of paired (deep, radiomic) feature vectors with an
/// exponential recency weighting. Index 1 is the newest entry and carries
/// the largest weight `w^1`.
#[derive(Debug, Clone)]
pub struct FeatureBank {
    capacity: usize,
    decay: f64,
    batch: usize,
    warm_up: usize,
    dim_deep: usize,
    dim_radiomic: usize,
    /// Front = newest.
    entries: VecDeque<(Vec<f64>, Vec<f64>)>,
    pushes: usize,
}

impl FeatureBank {
    pub fn new(
        capacity: usize,
        decay: f64,
        batch: usize,
        warm_up: usize,
        dim_deep: usize,
        dim_radiomic: usize,
    ) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("bank capacity must be positive".into()));
        }
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "decay must lie in (0, 1), got {decay}"
            )));
        }
        if batch == 0 || dim_deep == 0 || dim_radiomic == 0 {
            return Err(Error::InvalidArgument(
                "batch size and feature dims must be positive".into(),
            ));
        }
        Ok(FeatureBank {
            capacity,
            decay,
            batch,
            warm_up,
            dim_deep,
            dim_radiomic,
            entries: VecDeque::new(),
            pushes: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn dim_deep(&self) -> usize {
        self.dim_deep
    }

    pub fn dim_radiomic(&self) -> usize {
        self.dim_radiomic
    }

    pub fn pushes(&self) -> usize {
        self.pushes
    }

    /// Entry by recency: 0 = newest.
    pub fn entry(&self, i: usize) -> Option<(&[f64], &[f64])> {
        self.entries.get(i).map(|(z, r)| (z.as_slice(), r.as_slice()))
    }

    /// Replaces the deep vector of a recency-indexed entry (used by the
    /// finite-difference oracle).
    pub fn set_deep(&mut self, i: usize, z: Vec<f64>) -> Result<()> {
        if z.len() != self.dim_deep {
            return Err(Error::DimMismatch(format!(
                "deep vector has dim {}, bank expects {}",
                z.len(),
                self.dim_deep
            )));
        }
        match self.entries.get_mut(i) {
            Some(e) => {
                e.0 = z;
                Ok(())
            }
            None => Err(Error::InvalidArgument(format!("no bank entry {i}"))),
        }
    }

    /// Appends the newest entry, evicting the oldest beyond capacity.
    pub fn push(&mut self, deep: Vec<f64>, radiomic: Vec<f64>) -> Result<()> {
        if deep.len() != self.dim_deep {
            return Err(Error::DimMismatch(format!(
                "deep vector has dim {}, bank expects {}",
                deep.len(),
                self.dim_deep
            )));
        }
        if radiomic.len() != self.dim_radiomic {
            return Err(Error::DimMismatch(format!(
                "radiomic vector has dim {}, bank expects {}",
                radiomic.len(),
                self.dim_radiomic
            )));
        }
        self.entries.push_front((deep, radiomic));
        if self.entries.len() > self.capacity {
            self.entries.pop_back();
        }
        self.pushes += 1;
        Ok(())
    }

    /// The loss is active once the warm-up push count has elapsed and at
    /// least two entries exist.
    pub fn is_active(&self) -> bool {
        self.pushes > self.warm_up && self.entries.len() >= 2
    }
}

/// Exponentially weighted per-dimension statistics of the bank contents.
/// `sigma` holds 0 for degenerate (effectively constant) dimensions.
#[derive(Debug, Clone)]
pub struct BankStats {
    pub weight_sum: f64,
    pub mu_deep: Vec<f64>,
    pub sigma_deep: Vec<f64>,
    pub mu_radiomic: Vec<f64>,
    pub sigma_radiomic: Vec<f64>,
}

/// Dense row-major matrix for cross-correlation results.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl CorrMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CorrMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Entrywise absolute sum.
    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Exponentially weighted mean and standard deviation of every bank
/// dimension. Dimensions whose weighted variance is negligible relative to
/// their second moment get `sigma = 0`.
pub fn bank_stats(bank: &FeatureBank) -> Result<BankStats> {
    if bank.entries.len() < 2 {
        return Err(Error::DegenerateData(format!(
            "correlation needs at least 2 bank entries, have {}",
            bank.entries.len()
        )));
    }
    let stats_for = |dim: usize, pick: &dyn Fn(&(Vec<f64>, Vec<f64>)) -> &[f64]| {
        let mut weight_sum = 0.0f64;
        let mut mu = vec![0.0f64; dim];
        let mut wi = 1.0f64;
        for e in &bank.entries {
            wi *= bank.decay;
            weight_sum += wi;
            for (m, &v) in mu.iter_mut().zip(pick(e)) {
                *m += wi * v;
            }
        }
        for m in mu.iter_mut() {
            *m /= weight_sum;
        }
        let mut var = vec![0.0f64; dim];
        let mut second = vec![0.0f64; dim];
        let mut wi = 1.0f64;
        for e in &bank.entries {
            wi *= bank.decay;
            for ((v, s), (&x, m)) in var
                .iter_mut()
                .zip(second.iter_mut())
                .zip(pick(e).iter().zip(&mu))
            {
                let d = x - m;
                *v += wi * d * d;
                *s += wi * x * x;
            }
        }
        let sigma: Vec<f64> = var
            .iter()
            .zip(&second)
            .map(|(&v, &s)| {
                let v = v / weight_sum;
                let s = s / weight_sum;
                if v <= DEGENERATE_VAR_REL * s || v == 0.0 {
                    0.0
                } else {
                    v.sqrt()
                }
            })
            .collect();
        (weight_sum, mu, sigma)
    };
    let (weight_sum, mu_deep, sigma_deep) = stats_for(bank.dim_deep, &|e| e.0.as_slice());
    let (_, mu_radiomic, sigma_radiomic) = stats_for(bank.dim_radiomic, &|e| e.1.as_slice());
    Ok(BankStats {
        weight_sum,
        mu_deep,
        sigma_deep,
        mu_radiomic,
        sigma_radiomic,
    })
}

/// Raw exponentially weighted cross sum `sum_i w^i Z_i^T R_i / sum_i w^i`
/// without standardization.
pub fn raw_weighted_cross(bank: &FeatureBank) -> Result<CorrMatrix> {
    if bank.entries.len() < 2 {
        return Err(Error::DegenerateData(
            "weighted cross sum needs at least 2 entries".into(),
        ));
    }
    let mut out = CorrMatrix::zeros(bank.dim_deep, bank.dim_radiomic);
    let mut weight_sum = 0.0f64;
    let mut wi = 1.0f64;
    for (z, r) in &bank.entries {
        wi *= bank.decay;
        weight_sum += wi;
        for (a, &za) in z.iter().enumerate() {
            for (b, &rb) in r.iter().enumerate() {
                out.data[a * out.cols + b] += wi * za * rb;
            }
        }
    }
    for v in out.data.iter_mut() {
        *v /= weight_sum;
    }
    Ok(out)
}

fn correlation_with_stats(bank: &FeatureBank, stats: &BankStats) -> CorrMatrix {
    let mut out = CorrMatrix::zeros(bank.dim_deep, bank.dim_radiomic);
    let mut wi = 1.0f64;
    for (z, r) in &bank.entries {
        wi *= bank.decay;
        for a in 0..bank.dim_deep {
            let sz = stats.sigma_deep[a];
            if sz == 0.0 {
                continue;
            }
            let zt = (z[a] - stats.mu_deep[a]) / sz;
            for b in 0..bank.dim_radiomic {
                let sr = stats.sigma_radiomic[b];
                if sr == 0.0 {
                    continue;
                }
                let rt = (r[b] - stats.mu_radiomic[b]) / sr;
                out.data[a * out.cols + b] += wi * zt * rt;
            }
        }
    }
    for v in out.data.iter_mut() {
        *v /= stats.weight_sum;
    }
    out
}

/// Exponentially weighted cross-correlation between the standardized deep
/// and radiomic bank features.
pub fn weighted_correlation(bank: &FeatureBank) -> Result<CorrMatrix> {
    let stats = bank_stats(bank)?;
    Ok(correlation_with_stats(bank, &stats))
}

/// De-correlation loss: entrywise L1 norm of the weighted correlation.
/// Returns 0 while the bank is warming up.
pub fn decorr_loss(bank: &FeatureBank) -> Result<f64> {
    if !bank.is_active() {
        return Ok(0.0);
    }
    Ok(weighted_correlation(bank)?.l1_norm())
}

/// De-correlation loss with frozen standardization statistics; the
/// finite-difference oracle perturbs entries under this stop-gradient
/// convention.
pub fn decorr_loss_with_stats(bank: &FeatureBank, stats: &BankStats) -> f64 {
    correlation_with_stats(bank, stats).l1_norm()
}

/// Analytic gradient of [`decorr_loss`] with respect to the raw deep
/// vectors of the newest `batch` entries, treating the bank statistics and
/// all other entries as constants and using `sign(0) = 0`. Returns zero
/// vectors while the loss is inactive.
pub fn decorr_grad(bank: &FeatureBank) -> Result<Vec<Vec<f64>>> {
    let b = bank.batch.min(bank.entries.len());
    if !bank.is_active() {
        return Ok(vec![vec![0.0; bank.dim_deep]; b]);
    }
    let stats = bank_stats(bank)?;
    let corr = correlation_with_stats(bank, &stats);
    let mut grads = vec![vec![0.0f64; bank.dim_deep]; b];
    let mut wi = 1.0f64;
    for (i, (_, r)) in bank.entries.iter().take(b).enumerate() {
        wi *= bank.decay;
        let g = &mut grads[i];
        for a in 0..bank.dim_deep {
            let sz = stats.sigma_deep[a];
            if sz == 0.0 {
                continue;
            }
            let mut acc = 0.0f64;
            for bcol in 0..bank.dim_radiomic {
                let sr = stats.sigma_radiomic[bcol];
                if sr == 0.0 {
                    continue;
                }
                let s = corr.get(a, bcol);
                if s == 0.0 {
                    continue;
                }
                let rt = (r[bcol] - stats.mu_radiomic[bcol]) / sr;
                acc += s.signum() * rt;
            }
            g[a] = acc * wi / (stats.weight_sum * sz);
        }
    }
    Ok(grads)
}

/// Mean negative log-likelihood with predictions clamped to
/// `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub fn bce_loss(predictions: &[f64], labels: &[u8]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::DegenerateData("BCE requires a nonempty batch".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::DimMismatch(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut acc = 0.0f64;
    for (&p, &y) in predictions.iter().zip(labels) {
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        acc += if y == 1 { -p.ln() } else { -(1.0 - p).ln() };
    }
    Ok(acc / predictions.len() as f64)
}

/// One decoder's reconstruction: a CT estimate and an ROI probability map.
#[derive(Debug, Clone)]
pub struct DecoderOutput {
    pub ct: Vec<f64>,
    pub roi_prob: Vec<f64>,
}

/// Per-decoder reconstruction loss `mean |c_hat - c| + BCE(b_hat, b)`,
/// totalled as `L_D1 + alpha * (L_D2 + L_D3 + L_D4)`.
pub fn recon_loss(
    target_ct: &[f64],
    target_mask: &[u8],
    decoders: &[DecoderOutput; 4],
    alpha: f64,
) -> Result<f64> {
    if target_ct.len() != target_mask.len() {
        return Err(Error::DimMismatch("CT and mask shapes differ".into()));
    }
    let n = target_ct.len();
    if n == 0 {
        return Err(Error::DegenerateData("reconstruction over empty volume".into()));
    }
    let mut per_decoder = [0.0f64; 4];
    for (d, out) in decoders.iter().enumerate() {
        if out.ct.len() != n || out.roi_prob.len() != n {
            return Err(Error::DimMismatch(format!(
                "decoder {} output shape differs from target",
                d + 1
            )));
        }
        let mut mae = 0.0f64;
        let mut bce = 0.0f64;
        for i in 0..n {
            mae += (out.ct[i] - target_ct[i]).abs();
            let p = out.roi_prob[i].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            bce += if target_mask[i] == 1 { -p.ln() } else { -(1.0 - p).ln() };
        }
        per_decoder[d] = mae / n as f64 + bce / n as f64;
    }
    Ok(per_decoder[0] + alpha * (per_decoder[1] + per_decoder[2] + per_decoder[3]))
}

/// Deep-supervision weight: 0.33 decayed by 0.8 every 10 epochs. Evaluated
/// as an exact integer ratio so the early schedule values carry a single
/// rounding.
pub fn alpha_schedule(epoch: u32) -> f64 {
    let k = epoch / 10;
    if k <= 16 {
        let num = 33.0 * 8f64.powi(k as i32);
        let den = 100.0 * 10f64.powi(k as i32);
        num / den
    } else {
        0.33 * 0.8f64.powi(k as i32)
    }
}

/// Loss weighting configuration.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub w_corr: f64,
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_corr: 2.0,
            alpha: 0.33,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.w_corr < 0.0 || !self.w_corr.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "w_corr must be nonnegative, got {}",
                self.w_corr
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 0.33) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in (0, 0.33], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Combined objective `l_cls + w_corr * l_corr + l_rec`.
pub fn total_loss(l_cls: f64, l_corr: f64, l_rec: f64, weights: &LossWeights) -> Result<f64> {
    for (name, v) in [("l_cls", l_cls), ("l_corr", l_corr), ("l_rec", l_rec)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} = {v}")));
        }
    }
    Ok(l_cls + weights.w_corr * l_corr + l_rec)
}

/// One training-curve record.
#[derive(Debug, Clone)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub l_cls: f64,
    pub l_corr: f64,
    pub l_rec: f64,
    pub total: f64,
    pub max_abs_corr: f64,
}

/// Writes the per-iteration training curve as delimited text.
pub fn write_train_log(path: impl AsRef<Path>, rows: &[TrainLogRow]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("epoch,l_cls,l_corr,l_rec,total,max_abs_corr\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}\n",
            r.epoch, r.l_cls, r.l_corr, r.l_rec, r.total, r.max_abs_corr
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bank(capacity: usize, decay: f64, warm_up: usize, dz: usize, dr: usize) -> FeatureBank {
        FeatureBank::new(capacity, decay, 1, warm_up, dz, dr).unwrap()
    }

    #[test]
    fn push_evicts_oldest_beyond_capacity() {
        let mut b = bank(25, 0.9, 0, 1, 1);
        for i in 0..26 {
            b.push(vec![f64::from(i)], vec![0.5]).unwrap();
        }
        assert_eq!(b.len(), 25);
        // entry pushed first (value 0) is gone; newest is 25
        let (z, _) = b.entry(0).unwrap();
        assert_eq!(z[0], 25.0);
        let (z, _) = b.entry(24).unwrap();
        assert_eq!(z[0], 1.0);
    }

    #[test]
    fn push_single_entry_counts() {
        let mut b = bank(4, 0.5, 0, 2, 2);
        b.push(vec![1.0, 2.0], vec![3.0, 4.0]).unwrap();
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn push_rejects_dim_mismatch() {
        let mut b = bank(4, 0.5, 0, 2, 2);
        assert!(b.push(vec![1.0], vec![3.0, 4.0]).is_err());
        assert!(b.push(vec![1.0, 2.0], vec![3.0]).is_err());
    }

    #[test]
    fn constant_radiomic_gives_zero_correlation() {
        let mut b = bank(8, 0.5, 0, 2, 2);
        for i in 0..6 {
            b.push(vec![f64::from(i), -f64::from(i)], vec![7.0, 7.0]).unwrap();
        }
        let s = weighted_correlation(&b).unwrap();
        assert!(s.data.iter().all(|&v| v == 0.0));
        assert_eq!(decorr_loss(&b).unwrap(), 0.0);
    }

    #[test]
    fn raw_cross_matches_hand_example() {
        // newest (1, 1), older (1, -1), w = 0.5:
        // S = (0.5*1 - 0.25*1) / 0.75 = 1/3
        let mut b = bank(4, 0.5, 0, 1, 1);
        b.push(vec![1.0], vec![-1.0]).unwrap();
        b.push(vec![1.0], vec![1.0]).unwrap();
        let s = raw_weighted_cross(&b).unwrap();
        assert_eq!(s.get(0, 0), 1.0 / 3.0);
        assert_eq!(s.l1_norm(), 1.0 / 3.0);
    }

    #[test]
    fn warm_up_returns_zero_loss_and_gradient() {
        let mut b = bank(8, 0.9, 10, 2, 2);
        for i in 0..5 {
            b.push(vec![f64::from(i), 1.0], vec![f64::from(i), 2.0]).unwrap();
        }
        assert!(!b.is_active());
        assert_eq!(decorr_loss(&b).unwrap(), 0.0);
        let g = decorr_grad(&b).unwrap();
        assert!(g.iter().flatten().all(|&v| v == 0.0));
    }

    fn random_bank(seed: u64, n: usize, dz: usize, dr: usize) -> FeatureBank {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = bank(25, 0.9, 0, dz, dr);
        for _ in 0..n {
            let z: Vec<f64> = (0..dz).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let r: Vec<f64> = (0..dr).map(|_| rng.gen_range(-2.0..2.0)).collect();
            b.push(z, r).unwrap();
        }
        b
    }

    /// Independent re-evaluation of the weighted sums.
    fn brute_force_corr(b: &FeatureBank) -> Vec<f64> {
        let n = b.len();
        let w: Vec<f64> = (1..=n).map(|i| b.decay().powi(i as i32)).collect();
        let wsum: f64 = w.iter().sum();
        let zs: Vec<Vec<f64>> = (0..n).map(|i| b.entry(i).unwrap().0.to_vec()).collect();
        let rs: Vec<Vec<f64>> = (0..n).map(|i| b.entry(i).unwrap().1.to_vec()).collect();
        let col = |rows: &[Vec<f64>], dim: usize| -> (Vec<f64>, Vec<f64>) {
            let mut mu = vec![0.0; dim];
            for i in 0..n {
                for d in 0..dim {
                    mu[d] += w[i] * rows[i][d];
                }
            }
            for m in mu.iter_mut() {
                *m /= wsum;
            }
            let mut sd = vec![0.0; dim];
            for d in 0..dim {
                let mut var = 0.0;
                let mut m2 = 0.0;
                for i in 0..n {
                    var += w[i] * (rows[i][d] - mu[d]).powi(2);
                    m2 += w[i] * rows[i][d] * rows[i][d];
                }
                var /= wsum;
                m2 /= wsum;
                sd[d] = if var <= 1e-24 * m2 || var == 0.0 { 0.0 } else { var.sqrt() };
            }
            (mu, sd)
        };
        let dz = b.dim_deep();
        let dr = b.dim_radiomic();
        let (mu_z, sd_z) = col(&zs, dz);
        let (mu_r, sd_r) = col(&rs, dr);
        let mut s = vec![0.0; dz * dr];
        for a in 0..dz {
            for c in 0..dr {
                if sd_z[a] == 0.0 || sd_r[c] == 0.0 {
                    continue;
                }
                let mut acc = 0.0;
                for i in 0..n {
                    acc += w[i] * ((zs[i][a] - mu_z[a]) / sd_z[a]) * ((rs[i][c] - mu_r[c]) / sd_r[c]);
                }
                s[a * dr + c] = acc / wsum;
            }
        }
        s
    }

    #[test]
    fn correlation_matches_brute_force() {
        for seed in 0..20u64 {
            let b = random_bank(seed, 4 + (seed as usize % 22), 4, 4);
            let s = weighted_correlation(&b).unwrap();
            let oracle = brute_force_corr(&b);
            for (got, want) in s.data.iter().zip(&oracle) {
                assert!((got - want).abs() <= 1e-10, "seed {seed}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn correlation_invariant_to_affine_rescale() {
        let b = random_bank(3, 12, 3, 3);
        let s0 = weighted_correlation(&b).unwrap();
        let mut b2 = bank(25, 0.9, 0, 3, 3);
        for i in (0..b.len()).rev() {
            let (z, r) = b.entry(i).unwrap();
            let z2: Vec<f64> = z.iter().enumerate().map(|(d, &v)| v * (d as f64 + 1.5) - 3.0).collect();
            let r2: Vec<f64> = r.iter().enumerate().map(|(d, &v)| v * 0.25 + d as f64).collect();
            b2.push(z2, r2).unwrap();
        }
        let s1 = weighted_correlation(&b2).unwrap();
        for (a, b) in s0.data.iter().zip(&s1.data) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn decorr_loss_nonnegative_and_zero_iff_zero_matrix() {
        for seed in 0..10u64 {
            let b = random_bank(seed, 10, 3, 2);
            let s = weighted_correlation(&b).unwrap();
            let l = decorr_loss(&b).unwrap();
            assert!(l >= 0.0);
            assert_eq!(l == 0.0, s.data.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let step = 1e-5;
        for seed in 0..20u64 {
            let b = random_bank(seed, 6 + (seed as usize % 18), 4, 3);
            let stats = bank_stats(&b).unwrap();
            let grads = decorr_grad(&b).unwrap();
            for (i, g) in grads.iter().enumerate() {
                let (z0, _) = b.entry(i).unwrap();
                let z0 = z0.to_vec();
                for a in 0..z0.len() {
                    let mut bp = b.clone();
                    let mut zp = z0.clone();
                    zp[a] += step;
                    bp.set_deep(i, zp).unwrap();
                    let lp = decorr_loss_with_stats(&bp, &stats);
                    let mut bm = b.clone();
                    let mut zm = z0.clone();
                    zm[a] -= step;
                    bm.set_deep(i, zm).unwrap();
                    let lm = decorr_loss_with_stats(&bm, &stats);
                    let fd = (lp - lm) / (2.0 * step);
                    let denom = g[a].abs().max(fd.abs()).max(1e-6);
                    assert!(
                        (g[a] - fd).abs() / denom < 1e-4,
                        "seed {seed} entry {i} dim {a}: analytic {} vs fd {fd}",
                        g[a]
                    );
                }
            }
        }
    }

    #[test]
    fn gradient_covers_exactly_the_newest_batch() {
        // batch = 1 exposes one gradient vector; entries beyond the batch
        // are constants under the stop-gradient convention.
        let b = random_bank(5, 10, 3, 3);
        assert_eq!(decorr_grad(&b).unwrap().len(), 1);

        // With a larger batch, every batch entry gets an FD-verified
        // gradient.
        let mut b3 = FeatureBank::new(25, 0.9, 3, 0, 3, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        for _ in 0..12 {
            let z: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let r: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            b3.push(z, r).unwrap();
        }
        let stats = bank_stats(&b3).unwrap();
        let grads = decorr_grad(&b3).unwrap();
        assert_eq!(grads.len(), 3);
        let step = 1e-5;
        for (i, g) in grads.iter().enumerate() {
            for a in 0..3 {
                let z0 = b3.entry(i).unwrap().0.to_vec();
                let mut bp = b3.clone();
                let mut zp = z0.clone();
                zp[a] += step;
                bp.set_deep(i, zp).unwrap();
                let mut bm = b3.clone();
                let mut zm = z0;
                zm[a] -= step;
                bm.set_deep(i, zm).unwrap();
                let fd = (decorr_loss_with_stats(&bp, &stats) - decorr_loss_with_stats(&bm, &stats))
                    / (2.0 * step);
                let denom = g[a].abs().max(fd.abs()).max(1e-6);
                assert!((g[a] - fd).abs() / denom < 1e-4);
            }
        }
    }

    #[test]
    fn bce_hand_values() {
        assert!((bce_loss(&[0.5], &[1]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce_loss(&[1.0], &[1]).unwrap() <= 1e-6);
        let mixed = bce_loss(&[0.5, 0.5], &[0, 1]).unwrap();
        assert!((mixed - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce_loss(&[], &[]).is_err());
    }

    #[test]
    fn recon_hand_values() {
        let c = vec![0.25, -0.5, 0.75, 0.0];
        let b = vec![1u8, 0, 1, 0];
        let perfect = DecoderOutput {
            ct: c.clone(),
            roi_prob: b.iter().map(|&v| f64::from(v)).collect(),
        };
        let outs = [perfect.clone(), perfect.clone(), perfect.clone(), perfect];
        let total = recon_loss(&c, &b, &outs, 0.33).unwrap();
        assert!(total < 1e-5, "total {total}");

        let off = DecoderOutput {
            ct: c.iter().map(|v| v + 0.1).collect(),
            roi_prob: vec![0.5; 4],
        };
        let outs = [off.clone(), off.clone(), off.clone(), off.clone()];
        let expected_per = 0.1 + std::f64::consts::LN_2;
        let total = recon_loss(&c, &b, &outs, 0.0).unwrap();
        assert!((total - expected_per).abs() < 1e-9, "alpha 0 keeps only D1");
        let total = recon_loss(&c, &b, &outs, 0.33).unwrap();
        assert!((total - expected_per * (1.0 + 0.33 * 3.0)).abs() < 1e-9);
    }

    #[test]
    fn recon_rejects_shape_mismatch() {
        let c = vec![0.0; 4];
        let b = vec![0u8; 4];
        let bad = DecoderOutput {
            ct: vec![0.0; 3],
            roi_prob: vec![0.5; 4],
        };
        let ok = DecoderOutput {
            ct: vec![0.0; 4],
            roi_prob: vec![0.5; 4],
        };
        let outs = [bad, ok.clone(), ok.clone(), ok];
        assert!(recon_loss(&c, &b, &outs, 0.33).is_err());
    }

    #[test]
    fn alpha_schedule_exact_probes() {
        assert_eq!(alpha_schedule(0), 0.33);
        assert_eq!(alpha_schedule(9), 0.33);
        assert_eq!(alpha_schedule(10), 0.264);
        assert_eq!(alpha_schedule(25), 0.2112);
        let mut prev = alpha_schedule(0);
        for e in 1..200 {
            let a = alpha_schedule(e);
            assert!(a <= prev && a > 0.0);
            prev = a;
        }
    }

    #[test]
    fn total_loss_arithmetic() {
        let w = LossWeights { w_corr: 2.0, alpha: 0.33 };
        assert_eq!(total_loss(1.0, 0.1, 0.5, &w).unwrap(), 1.7);
        let w0 = LossWeights { w_corr: 0.0, alpha: 0.33 };
        assert_eq!(total_loss(1.0, 123.0, 0.5, &w0).unwrap(), 1.5);
        assert_eq!(total_loss(0.0, 0.0, 0.0, &w).unwrap(), 0.0);
        assert!(total_loss(f64::NAN, 0.0, 0.0, &w).is_err());
    }
}
